"""Permutation importance, partial dependence and confusion summaries.

Importance is measured out of bag: for every tree the chosen predictor is
shuffled among that tree's OOB rows and the tree's OOB losses recomputed.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import LengthMismatchError, UnknownPredictorError
from .forest import CLASSIFICATION, REGRESSION, Forest, check_fingerprint, predicted_labels

PCT_INC_MSE = "pct_inc_mse"
MEAN_DECREASE_ACCURACY = "mean_decrease_accuracy"
MEAN_FIXED = "mean_fixed"
AVERAGE_OVER_DATA = "average_over_data"


@dataclass
class ImportanceEntry:
    predictor: str
    importance: float
    std_error: float
    metric: str


@dataclass
class ImportanceReport:
    """Entries sorted by decreasing importance.

    ``pct_inc_mse`` is the percent increase in OOB MSE;
    ``mean_decrease_accuracy`` is the drop, in percentage points, of the
    OOB accuracy averaged over the two classes.
    """

    entries: list[ImportanceEntry]
    n_repeats: int
    seed: int

    def ranking(self) -> list[str]:
        return [e.predictor for e in self.entries]

    def get(self, predictor: str) -> ImportanceEntry:
        for e in self.entries:
            if e.predictor == predictor:
                return e
        raise UnknownPredictorError(predictor)

    def to_dict(self) -> dict:
        return {"n_repeats": self.n_repeats, "seed": self.seed,
                "entries": [asdict(e) for e in self.entries]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _pair_losses(forest, outputs, y, mask):
    """Loss of every (tree, OOB row) pair, NaN where the row is in bag:
    squared error for regression, misclassification for classification."""
    if forest.task == REGRESSION:
        loss = (outputs - y) ** 2
    else:
        loss = (predicted_labels(outputs) != y).astype(float)
    return np.where(mask, loss, np.nan)


def _crossed_mean(D):
    """Mean of a trees-by-rows array with NaN holes and its standard error.

    Trees and rows are both treated as random (a crossed design): the
    variance adds the between-tree and the between-row components, so it
    covers the variability of the data as well as of the forest and the
    shuffles.
    """
    rows = ~np.isnan(D).all(axis=0)
    trees = ~np.isnan(D).all(axis=1)
    D = D[np.ix_(trees, rows)]
    value = float(np.nanmean(D))
    T, n = D.shape
    var = 0.0
    for means, k in ((np.nanmean(D, axis=1), T), (np.nanmean(D, axis=0), n)):
        var += means.var(ddof=1) / k if k > 1 else math.nan
    return value, var


def _summarize(forest, D, base, y):
    if forest.task == REGRESSION:
        scale = 100.0 / np.nanmean(base)
        value, var = _crossed_mean(D)
        return value * scale, math.sqrt(var) * scale, PCT_INC_MSE
    value, var = 0.0, 0.0
    for cls in (0, 1):
        v, s2 = _crossed_mean(D[:, y == cls])
        value += v / 2
        var += s2 / 4
    return 100.0 * value, 100.0 * math.sqrt(var), MEAN_DECREASE_ACCURACY


def permutation_importance(forest: Forest, data, n_repeats: int = 1, seed: int = 0) -> ImportanceReport:
    """Out-of-bag permutation importance of every predictor.

    Each tree sees predictor ``j`` shuffled among its own OOB rows and the
    change in loss is recorded for every (tree, OOB row) pair.  Regression
    reports the percent increase in OOB MSE, classification the drop in OOB
    accuracy averaged over the two classes, in percentage points.

    Parameters
    ----------
    forest : Forest
        Fitted on ``data``.
    data : GainDataset or LabeledDataset
    n_repeats : int
        Independent shuffles per tree and predictor, averaged.
    seed : int
        Each predictor gets its own stream derived from ``(seed, index)``.

    Raises
    ------
    FingerprintMismatchError
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    check_fingerprint(forest, data)
    X = np.asarray(data.X, dtype=float)
    y = np.asarray(data.response, dtype=float)
    mask = np.stack([t.inbag == 0 for t in forest.trees])
    oob_rows = [np.flatnonzero(m) for m in mask]
    base = _pair_losses(forest, forest.tree_outputs(X), y, mask)
    T, n = mask.shape

    entries = []
    for j, name in enumerate(forest.predictor_names):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(j,)))
        D = np.zeros((T, n))
        for _ in range(n_repeats):
            V = np.broadcast_to(X[:, j], (T, n)).copy()
            for t, rows in enumerate(oob_rows):
                V[t, rows] = X[rng.permutation(rows), j]
            D += _pair_losses(forest, forest.tree_outputs(X, column=(j, V)), y, mask) - base
        value, se, metric = _summarize(forest, D / n_repeats, base, y)
        entries.append(ImportanceEntry(name, float(value), float(se), metric))
    entries.sort(key=lambda e: -e.importance)
    return ImportanceReport(entries, n_repeats, seed)


@dataclass
class PdpProfile:
    predictor: str
    grid: list[float]
    response: list[float]
    mode: str

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["value", "response"])
            for g, r in zip(self.grid, self.response):
                w.writerow([repr(float(g)), repr(float(r))])


def _predictor_index(forest: Forest, predictor: str) -> int:
    try:
        return forest.predictor_names.index(predictor)
    except ValueError:
        raise UnknownPredictorError(f"{predictor!r} is not a predictor of this forest") from None


def pdp_grid(values: np.ndarray, n_grid: int) -> np.ndarray:
    """``n_grid`` quantile-spaced values with duplicates removed."""
    if n_grid < 2:
        raise ValueError("n_grid must be >= 2")
    return np.unique(np.quantile(np.asarray(values, dtype=float), np.linspace(0, 1, n_grid)))


def partial_dependence(forest: Forest, data, predictor: str, n_grid: int = 20,
                       mode: str = MEAN_FIXED) -> PdpProfile:
    """Fitted response traced over one predictor.

    ``mean_fixed`` pins every other predictor at its data mean;
    ``average_over_data`` sets the predictor to each grid value in every row
    and averages the predictions.  Classification responses are the
    probability of class 1.
    """
    j = _predictor_index(forest, predictor)
    X = np.asarray(data.X, dtype=float)
    grid = pdp_grid(X[:, j], n_grid)
    if mode == MEAN_FIXED:
        rows = np.repeat(X.mean(axis=0)[None, :], len(grid), axis=0)
        rows[:, j] = grid
        response = forest.predict_array(rows)
    elif mode == AVERAGE_OVER_DATA:
        stacked = np.tile(X, (len(grid), 1))
        stacked[:, j] = np.repeat(grid, len(X))
        response = forest.predict_array(stacked).reshape(len(grid), len(X)).mean(axis=1)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return PdpProfile(predictor, grid.tolist(), response.tolist(), mode)


@dataclass
class ConfusionReport:
    """Binary confusion counts with class 1 as the positive class.

    ``cost_ratio_fp_to_fn`` is the count ratio fp/fn (false positives per
    false negative; ``None`` when fn = 0).  ``implied_cost_fp_to_fn`` is its
    reciprocal fn/fp: a classifier that trades k false negatives for every
    false positive behaves as if a false positive costs k times as much.
    """

    tp: int
    fp: int
    fn: int
    tn: int
    error_rate: float = field(init=False)
    fpr: float = field(init=False)
    fnr: float = field(init=False)
    cost_ratio_fp_to_fn: float | None = field(init=False)
    implied_cost_fp_to_fn: float | None = field(init=False)

    def __post_init__(self):
        n = self.tp + self.fp + self.fn + self.tn
        self.error_rate = (self.fp + self.fn) / n if n else 0.0
        self.fpr = self.fp / (self.fp + self.tn) if self.fp + self.tn else 0.0
        self.fnr = self.fn / (self.fn + self.tp) if self.fn + self.tp else 0.0
        self.cost_ratio_fp_to_fn = self.fp / self.fn if self.fn else None
        self.implied_cost_fp_to_fn = self.fn / self.fp if self.fp else None

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return asdict(self)


def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionReport:
    """Confusion counts of predicted against true 0/1 labels.

    Raises
    ------
    LengthMismatchError
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise LengthMismatchError(f"{len(preds)} predictions for {len(labels)} labels")
    for arr in (preds, labels):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
    return ConfusionReport(
        tp=int(((preds == 1) & (labels == 1)).sum()),
        fp=int(((preds == 1) & (labels == 0)).sum()),
        fn=int(((preds == 0) & (labels == 1)).sum()),
        tn=int(((preds == 0) & (labels == 0)).sum()),
    )
