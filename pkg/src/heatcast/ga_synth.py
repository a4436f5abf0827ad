"""Genetic-algorithm "ideal types": synthetic predictor vectors bred to
maximize the response of a fitted regression forest.

Each member of the population is one synthetic grid cell.  A generation keeps
the ``elitism`` fittest members unchanged and fills the remaining slots with
children of roulette-selected parents: with probability ``crossover_prob`` a
child is the average of its two parents, otherwise a copy of the first, and
then every gene is independently redrawn uniformly within its bounds with
probability ``mutation_prob``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import PredictorSetMismatchError, TaskMismatchError
from .forest import REGRESSION, Forest


@dataclass(frozen=True)
class GaParams:
    """GA settings.  ``bounds`` maps predictor names to ``(low, high)``;
    missing predictors use the training range of the survival forest."""

    population_size: int = 100
    n_iterations: int = 5000
    elitism: int = 5
    crossover_prob: float = 0.8
    mutation_prob: float = 0.1
    bounds: Mapping[str, tuple[float, float]] | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if not 0 <= self.elitism < self.population_size:
            raise ValueError("elitism must be in [0, population_size)")
        for name in ("crossover_prob", "mutation_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")

    def to_dict(self) -> dict:
        return {"population_size": self.population_size, "n_iterations": self.n_iterations,
                "elitism": self.elitism, "crossover_prob": self.crossover_prob,
                "mutation_prob": self.mutation_prob, "seed": self.seed,
                "bounds": None if self.bounds is None else {k: list(v) for k, v in self.bounds.items()}}


@dataclass
class SyntheticPopulation:
    predictor_names: list[str]
    members: np.ndarray
    fitness: np.ndarray
    history: list[tuple[float, float]]
    lower: np.ndarray
    upper: np.ndarray
    scales: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def correlation_matrix(self) -> np.ndarray:
        """Pearson correlations between predictors across members; NaN for
        predictors that do not vary."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.corrcoef(self.members, rowvar=False)

    def to_dict(self) -> dict:
        return {
            "predictor_names": self.predictor_names,
            "members": self.members.tolist(),
            "fitness": self.fitness.tolist(),
            "history": [list(h) for h in self.history],
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "scales": None if self.scales is None else self.scales.tolist(),
            "params": self.params,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticPopulation":
        return cls(list(d["predictor_names"]), np.asarray(d["members"], dtype=float),
                   np.asarray(d["fitness"], dtype=float), [tuple(h) for h in d["history"]],
                   np.asarray(d["lower"], dtype=float), np.asarray(d["upper"], dtype=float),
                   None if d.get("scales") is None else np.asarray(d["scales"], dtype=float),
                   d.get("params", {}))

    def write_history(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "best", "mean"])
            for i, (best, mean) in enumerate(self.history):
                w.writerow([i, repr(best), repr(mean)])


def resolve_bounds(survival: Forest, bounds: Mapping[str, tuple[float, float]] | None):
    lower = survival.x_min.astype(float).copy()
    upper = survival.x_max.astype(float).copy()
    for name, (lo, hi) in (bounds or {}).items():
        if name not in survival.predictor_names:
            raise PredictorSetMismatchError(f"bounds given for unknown predictor {name!r}")
        j = survival.predictor_names.index(name)
        lower[j], upper[j] = float(lo), float(hi)
    if (lower > upper).any() or not (np.isfinite(lower).all() and np.isfinite(upper).all()):
        raise ValueError("every predictor needs a finite, nonempty interval")
    return lower, upper


def roulette_probabilities(fitness: np.ndarray) -> np.ndarray:
    """Selection probabilities proportional to fitness shifted so the least
    fit member has zero weight; uniform when all members tie."""
    shifted = fitness - fitness.min()
    total = shifted.sum()
    if total <= 0:
        return np.full(len(fitness), 1.0 / len(fitness))
    return shifted / total


def next_generation(members, fitness, lower, upper, params: GaParams, rng) -> np.ndarray:
    """One GA step.  Elites come first, in decreasing fitness order."""
    N, p = members.shape
    order = np.argsort(-fitness, kind="stable")
    elite = members[order[:params.elitism]]
    k = N - params.elitism
    probs = roulette_probabilities(fitness)
    parents = rng.choice(N, size=(k, 2), p=probs)
    cross = rng.random(k) < params.crossover_prob
    children = members[parents[:, 0]].copy()
    children[cross] = (members[parents[cross, 0]] + members[parents[cross, 1]]) / 2
    mutate = rng.random((k, p)) < params.mutation_prob
    fresh = lower + rng.random((k, p)) * (upper - lower)
    children[mutate] = fresh[mutate]
    # averaging and uniform draws stay inside the box up to rounding
    np.clip(children, lower, upper, out=children)
    return np.vstack([elite, children])


def generation_rng(seed: int, generation: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(generation,)))


def evolve(survival: Forest, params: GaParams = GaParams()) -> SyntheticPopulation:
    """Breed a synthetic population that maximizes ``survival``'s prediction.

    ``history[i]`` is ``(best, mean)`` fitness of generation ``i``, where
    generation 0 is the uniform random start, so there are
    ``n_iterations + 1`` entries.

    Raises
    ------
    TaskMismatchError
        ``survival`` is a classification forest.
    """
    if survival.task != REGRESSION:
        raise TaskMismatchError("the survival function must be a regression forest")
    params.validate()
    lower, upper = resolve_bounds(survival, params.bounds)
    p = len(lower)
    rng = generation_rng(params.seed, 0)
    members = lower + rng.random((params.population_size, p)) * (upper - lower)
    fitness = survival.predict_array(members)
    history = [(float(fitness.max()), float(fitness.mean()))]
    for g in range(1, params.n_iterations + 1):
        members = next_generation(members, fitness, lower, upper, params, generation_rng(params.seed, g))
        fitness = survival.predict_array(members)
        history.append((float(fitness.max()), float(fitness.mean())))
    scales = survival.x_q75 - survival.x_q25
    return SyntheticPopulation(list(survival.predictor_names), members, fitness, history,
                               lower, upper, scales, params.to_dict())


@dataclass
class SolutionVector:
    """Representative predictor values of a synthetic population.

    ``values`` is the fitness-weighted member mean, ``mean_fitness`` the plain
    mean fitness; the single fittest member is kept alongside.  ``scales``
    carries the training IQR of each predictor when known.
    """

    predictor_names: list[str]
    values: np.ndarray
    mean_fitness: float
    best_member: np.ndarray
    best_fitness: float
    scales: np.ndarray | None = None

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.predictor_names, self.values.tolist()))

    def to_dict(self) -> dict:
        return {
            "predictor_names": self.predictor_names,
            "values": self.values.tolist(),
            "mean_fitness": self.mean_fitness,
            "best_member": self.best_member.tolist(),
            "best_fitness": self.best_fitness,
            "scales": None if self.scales is None else self.scales.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "SolutionVector":
        return cls(list(d["predictor_names"]), np.asarray(d["values"], dtype=float),
                   float(d["mean_fitness"]), np.asarray(d["best_member"], dtype=float),
                   float(d["best_fitness"]),
                   None if d.get("scales") is None else np.asarray(d["scales"], dtype=float))


def solution_vector(pop: SyntheticPopulation) -> SolutionVector:
    """Fitness-weighted mean of the population.

    Fitness values are used as weights directly when all are nonnegative;
    otherwise they are shifted so the least fit member gets weight zero.
    Equal weights are used when every weight is zero.
    """
    if len(pop.members) == 0:
        raise ValueError("empty population")
    f = np.asarray(pop.fitness, dtype=float)
    w = f if (f >= 0).all() else f - f.min()
    if w.sum() <= 0:
        w = np.ones_like(f)
    values = (w[:, None] * pop.members).sum(axis=0) / w.sum()
    values = np.clip(values, pop.lower, pop.upper)
    best = int(np.argmax(f))
    return SolutionVector(list(pop.predictor_names), values, float(f.mean()),
                          pop.members[best].copy(), float(f[best]),
                          None if pop.scales is None else np.asarray(pop.scales, dtype=float))


@dataclass
class ComparisonRow:
    predictor: str
    delta: float
    relative_delta: float
    selected: bool


def compare_solutions(a: SolutionVector, b: SolutionVector, k: int = 3,
                      scales: Sequence[float] | None = None) -> list[ComparisonRow]:
    """Rank predictors by how far apart two solutions put them.

    ``relative_delta = |a - b| / scale`` where the scale is, in order of
    preference, the ``scales`` argument, the mean of the two solutions'
    training IQRs, or 1 (raw differences).  The top ``k`` predictors with a
    nonzero difference are flagged as selected.

    Raises
    ------
    PredictorSetMismatchError
    """
    if list(a.predictor_names) != list(b.predictor_names):
        raise PredictorSetMismatchError("solutions cover different predictors")
    delta = np.asarray(a.values, dtype=float) - np.asarray(b.values, dtype=float)
    if scales is not None:
        scale = np.asarray(scales, dtype=float)
    elif a.scales is not None and b.scales is not None:
        scale = (a.scales + b.scales) / 2
    else:
        scale = np.ones_like(delta)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(delta == 0, 0.0, np.abs(delta) / scale)
    order = sorted(range(len(delta)), key=lambda j: (-rel[j], j))
    rows = []
    for rank, j in enumerate(order):
        rows.append(ComparisonRow(a.predictor_names[j], float(delta[j]), float(rel[j]),
                                  bool(rank < k and rel[j] > 0)))
    return rows
