"""Split-sample conformal prediction sets for the binary event classifier.

The nonconformity score of a labeled row is ``1 - p(true label)`` under a
forest trained on a disjoint subset.  Prediction sets contain every label
whose score would not exceed the calibration quantile, so they form a
nested family: lowering ``alpha`` can only raise the threshold and grow
the sets.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import FingerprintMismatchError, SplitDegenerateError
from .forest import CLASSIFICATION, Forest, ForestParams, fit, row_vector

SCORE_KIND = "one_minus_prob"


def threshold_rank(n_cal: int, alpha: float) -> int:
    """1-based rank ``ceil((n_cal + 1)(1 - alpha))`` of the threshold score.

    A relative slack of 1e-9 absorbs rounding in the product, so for example
    ``n_cal=3, alpha=0.25`` gives exactly 3.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    q = (n_cal + 1) * (1.0 - alpha)
    return math.ceil(q - 1e-9 * max(1.0, q))


def conformal_threshold(scores: Sequence[float], alpha: float) -> float:
    """The ``threshold_rank``-th smallest score, or +inf past the end."""
    s = np.sort(np.asarray(scores, dtype=float))
    k = threshold_rank(len(s), alpha)
    if k > len(s):
        return math.inf
    return float(s[k - 1])


@dataclass(frozen=True)
class ConformalPredictor:
    alpha: float
    calibration_scores: tuple[float, ...]
    threshold: float
    forest_ref: str
    score_kind: str = SCORE_KIND
    train_rows: tuple[int, ...] = ()
    calibration_rows: tuple[int, ...] = ()

    @property
    def n_cal(self) -> int:
        return len(self.calibration_scores)

    def with_alpha(self, alpha: float) -> "ConformalPredictor":
        """Same calibration at another miscoverage level."""
        return replace(self, alpha=alpha, threshold=conformal_threshold(self.calibration_scores, alpha))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "score_kind": self.score_kind,
            "calibration_scores": list(self.calibration_scores),
            "threshold": None if math.isinf(self.threshold) else self.threshold,
            "forest_ref": self.forest_ref,
            "train_rows": list(self.train_rows),
            "calibration_rows": list(self.calibration_rows),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ConformalPredictor":
        thr = math.inf if d["threshold"] is None else float(d["threshold"])
        return cls(float(d["alpha"]), tuple(float(s) for s in d["calibration_scores"]), thr,
                   d["forest_ref"], d.get("score_kind", SCORE_KIND),
                   tuple(d.get("train_rows", ())), tuple(d.get("calibration_rows", ())))


def calibrate(forest: Forest, X: np.ndarray, labels: Sequence[int], alpha: float,
              train_rows: Sequence[int] = (), calibration_rows: Sequence[int] = ()) -> ConformalPredictor:
    """Score held-out labeled rows and fix the threshold."""
    if forest.task != CLASSIFICATION:
        raise ValueError("conformal sets need a classification forest")
    p1 = forest.predict_array(X)
    y = np.asarray(labels)
    scores = np.where(y == 1, 1.0 - p1, p1)
    scores = tuple(sorted(float(s) for s in scores))
    return ConformalPredictor(alpha, scores, conformal_threshold(scores, alpha), forest.training_fingerprint,
                              train_rows=tuple(int(i) for i in train_rows),
                              calibration_rows=tuple(int(i) for i in calibration_rows))


def split_train_calibrate(data, split_fraction: float = 0.5, params: ForestParams = ForestParams(),
                          alpha: float = 0.1, seed: int = 0, max_tries: int = 100):
    """Fit on a random part of ``data`` and calibrate on the rest.

    ``round(split_fraction * n)`` rows train the forest.  Splits missing a
    class on either side are redrawn up to ``max_tries`` times.

    Returns
    -------
    (Forest, ConformalPredictor)

    Raises
    ------
    SplitDegenerateError
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    n = len(data)
    n_train = int(round(split_fraction * n))
    if not 1 <= n_train < n:
        raise SplitDegenerateError(f"split_fraction {split_fraction} leaves an empty side")
    y = np.asarray(data.labels)
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        perm = rng.permutation(n)
        train = np.sort(perm[:n_train])
        cal = np.sort(perm[n_train:])
        if len(set(y[train].tolist())) == 2 and len(set(y[cal].tolist())) == 2:
            break
    else:
        raise SplitDegenerateError(f"no split with both classes on each side after {max_tries} tries")
    forest = fit(data.subset(train), params)
    cp = calibrate(forest, data.X[cal], y[cal], alpha, train, cal)
    return forest, cp


@dataclass
class PredictionSet:
    members: list[int]
    scores: dict[int, float]
    alpha: float
    empty: bool = field(init=False)

    def __post_init__(self):
        self.empty = not self.members

    def __contains__(self, label) -> bool:
        return label in self.members

    def __len__(self) -> int:
        return len(self.members)

    def to_dict(self) -> dict:
        return {"set": list(self.members), "scores": {str(k): v for k, v in self.scores.items()},
                "alpha": self.alpha}


def _check_ref(cp: ConformalPredictor, forest: Forest) -> None:
    if forest.training_fingerprint != cp.forest_ref:
        raise FingerprintMismatchError("predictor was calibrated against another forest")


def _sets_from_p1(cp: ConformalPredictor, p1: np.ndarray) -> list[PredictionSet]:
    out = []
    for p in p1:
        scores = {0: float(p), 1: float(1.0 - p)}
        members = [y for y in (0, 1) if scores[y] <= cp.threshold]
        out.append(PredictionSet(members, scores, cp.alpha))
    return out


def predict_sets(cp: ConformalPredictor, forest: Forest, X: np.ndarray) -> list[PredictionSet]:
    """Prediction sets for every row of ``X``."""
    _check_ref(cp, forest)
    return _sets_from_p1(cp, forest.predict_array(np.atleast_2d(np.asarray(X, dtype=float))))


def predict_set(cp: ConformalPredictor, forest: Forest, x) -> PredictionSet:
    """Prediction set for one row, given as a mapping or a vector in
    predictor order.

    Raises
    ------
    FingerprintMismatchError
    """
    if hasattr(x, "keys"):
        row = row_vector(forest, x)
    else:
        row = np.asarray(x, dtype=float).reshape(1, -1)
    return predict_sets(cp, forest, row)[0]


def set_matrix(cp: ConformalPredictor, p1: np.ndarray) -> np.ndarray:
    """Boolean ``(n, 2)`` membership of labels 0 and 1."""
    p1 = np.asarray(p1, dtype=float)
    return np.column_stack([p1 <= cp.threshold, 1.0 - p1 <= cp.threshold])


def empirical_coverage(cp: ConformalPredictor, forest: Forest, X: np.ndarray,
                       labels: Sequence[int]) -> tuple[float, float]:
    """Fraction of rows whose label is in its set, and mean set size."""
    _check_ref(cp, forest)
    if len(labels) == 0:
        raise ValueError("no rows to evaluate")
    member = set_matrix(cp, forest.predict_array(X))
    y = np.asarray(labels, dtype=np.int64)
    covered = member[np.arange(len(y)), y]
    return float(covered.mean()), float(member.sum(axis=1).mean())
