"""Bagged CART ensembles for gain-score regression and event classification.

Each tree is grown on a bootstrap sample (rows drawn with replacement, with
probability proportional to the case weights) and at every node considers a
fresh random subset of ``mtry`` predictors drawn without replacement.  The
split minimizing the weighted child impurity (variance for regression, Gini
for classification) wins; ties go to the lowest predictor index and then the
lowest threshold.  Thresholds are midpoints between adjacent distinct values
and rows with ``x <= threshold`` go left.

Every tree draws from its own RNG stream derived from ``(seed, tree index)``,
so the fitted forest does not depend on how many worker threads built it.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateDataError, FingerprintMismatchError, MissingPredictorError

FORMAT = "heatcast.forest"
FORMAT_VERSION = 1
REGRESSION = "regression"
CLASSIFICATION = "classification"

# Relative tolerance below which two split criteria count as tied.
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class ForestParams:
    """Ensemble settings.  ``None`` means the task default:
    ``mtry`` = floor(p/3) for regression and floor(sqrt(p)) for
    classification; ``min_node_size`` = 5 for regression and 1 for
    classification.  Nodes of size <= ``min_node_size`` become leaves."""

    n_trees: int = 500
    mtry: int | None = None
    min_node_size: int | None = None
    seed: int = 0
    bootstrap: bool = True

    def resolve(self, task: str, n_predictors: int) -> "ForestParams":
        p = n_predictors
        mtry = self.mtry
        if mtry is None:
            mtry = max(1, p // 3) if task == REGRESSION else max(1, math.isqrt(p))
        size = self.min_node_size
        if size is None:
            size = 5 if task == REGRESSION else 1
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 1 <= mtry <= p:
            raise ValueError(f"mtry must be in [1, {p}]")
        if size < 1:
            raise ValueError("min_node_size must be >= 1")
        return replace(self, mtry=int(mtry), min_node_size=int(size))


@dataclass
class Tree:
    """Flat binary tree.  ``feature == -1`` marks a leaf.

    ``value`` holds the leaf mean (regression) or the weighted class counts
    ``[w0, w1]`` (classification).  ``inbag`` counts how often each training
    row was drawn for this tree.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    inbag: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def splits(self) -> list[tuple[int, float]]:
        """(feature, threshold) of internal nodes in depth-first preorder."""
        out = []
        stack = [0]
        while stack:
            k = stack.pop()
            if self.feature[k] >= 0:
                out.append((int(self.feature[k]), float(self.threshold[k])))
                stack.append(int(self.right[k]))
                stack.append(int(self.left[k]))
        return out


def _node_value(yn, wn, task):
    if task == REGRESSION:
        return float((wn * yn).sum() / wn.sum())
    w1 = float((wn * yn).sum())
    return (float(wn.sum()) - w1, w1)


def _best_split(Xn, yn, wn, features, task):
    """Best (feature, threshold) at a node, or ``None`` if no split
    lowers the impurity.

    Maximizes ``sum_children sum_k S_k^2 / W_child`` which is total impurity
    minus weighted child impurity: ``S_k`` are weighted sums of the centered
    response (regression) or weighted class totals (classification).
    """
    W = wn.sum()
    if task == REGRESSION:
        yc = yn - (wn * yn).sum() / W
        S = (wn * yc).sum()
        parent = S * S / W
        scale = (wn * yc * yc).sum()
    else:
        W1 = (wn * yn).sum()
        W0 = W - W1
        parent = (W1 * W1 + W0 * W0) / W
        scale = W
    tol = TIE_RTOL * scale
    Xf = Xn[:, features]
    order = np.argsort(Xf, axis=0, kind="stable")
    xs = np.take_along_axis(Xf, order, axis=0)
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    ws = wn[order]
    cw = np.cumsum(ws, axis=0)[:-1]
    rw = W - cw
    if task == REGRESSION:
        cs = np.cumsum(ws * yc[order], axis=0)[:-1]
        crit = cs * cs / cw + (S - cs) ** 2 / rw
    else:
        c1 = np.cumsum(ws * yn[order], axis=0)[:-1]
        c0 = cw - c1
        r1 = W1 - c1
        r0 = W0 - c0
        crit = (c1 * c1 + c0 * c0) / cw + (r1 * r1 + r0 * r0) / rw
    crit = np.where(valid, crit, -np.inf)
    top = crit.max()
    if top <= parent + tol:
        return None
    # columns are in ascending predictor order and rows in ascending
    # threshold order, so the first near-maximal entry obeys the tie rule
    hit = crit >= top - tol
    j = int(np.argmax(hit.any(axis=0)))
    i = int(np.argmax(hit[:, j]))
    lo, hi = xs[i, j], xs[i + 1, j]
    thr = (lo + hi) / 2
    if not lo <= thr < hi:
        thr = lo
    return int(features[j]), float(thr)


def grow_tree(X, y, w, sizes, task, mtry, min_node_size, rng) -> tuple:
    """Grow one tree on rows with positive weight.

    Parameters
    ----------
    X, y : arrays of the full training set
    w : per-row impurity weight (0 excludes the row)
    sizes : per-row contribution to node size (bootstrap multiplicity)
    rng : numpy Generator used only for predictor subsampling

    Returns
    -------
    feature, threshold, left, right, value arrays
    """
    p = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []
    rows0 = np.flatnonzero(w > 0)
    stack = [(rows0, -1, False)]
    while stack:
        rows, parent, is_right = stack.pop()
        k = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = k
        yn, wn = y[rows], w[rows]
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(_node_value(yn, wn, task))
        if sizes[rows].sum() <= min_node_size or (yn == yn[0]).all():
            continue
        features = np.sort(rng.permutation(p)[:mtry])
        Xn = X[rows]
        split = _best_split(Xn, yn, wn, features, task)
        if split is None:
            continue
        f, thr = split
        feature[k], threshold[k] = f, thr
        go_left = Xn[:, f] <= thr
        # right pushed first so the left subtree gets the next node ids
        stack.append((rows[~go_left], k, True))
        stack.append((rows[go_left], k, False))
    value = np.asarray(value, dtype=float)
    return (np.asarray(feature, dtype=np.int64), np.asarray(threshold, dtype=float),
            np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64), value)


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(tree_index,)))


def _hash(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(str(part.dtype).encode())
            h.update(str(part.shape).encode())
            h.update(np.ascontiguousarray(part).tobytes())
        else:
            h.update(json.dumps(part, sort_keys=True).encode())
        h.update(b"|")
    return h.hexdigest()


def data_hash(X, y, predictor_names, task) -> str:
    return _hash(task, list(predictor_names), np.asarray(X, dtype=float), np.asarray(y, dtype=float))


@dataclass
class Forest:
    trees: list[Tree]
    task: str
    predictor_names: list[str]
    params: ForestParams
    data_fingerprint: str
    training_fingerprint: str
    n_train: int
    x_min: np.ndarray
    x_max: np.ndarray
    x_q25: np.ndarray
    x_q75: np.ndarray
    _packed: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self._pack()

    @property
    def oob_membership(self) -> list[np.ndarray]:
        return [np.flatnonzero(t.inbag == 0) for t in self.trees]

    def _pack(self):
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
        feat = np.concatenate([t.feature for t in self.trees])
        thr = np.concatenate([t.threshold for t in self.trees])
        left = np.concatenate([np.where(t.left >= 0, t.left + o, -1) for t, o in zip(self.trees, offsets)])
        right = np.concatenate([np.where(t.right >= 0, t.right + o, -1) for t, o in zip(self.trees, offsets)])
        if self.task == REGRESSION:
            out = np.concatenate([t.value for t in self.trees])
        else:
            counts = np.concatenate([t.value for t in self.trees])
            out = np.where(counts[:, 1] > counts[:, 0], 1.0,
                           np.where(counts[:, 1] < counts[:, 0], 0.0, 0.5))
        self._packed = (offsets[:-1], feat, thr, left, right, out)

    def tree_outputs(self, X: np.ndarray, column: tuple[int, np.ndarray] | None = None) -> np.ndarray:
        """Per-tree predictions, shape ``(n_trees, n_rows)``.

        For classification each entry is the tree's vote for class 1
        (0.5 when its leaf is tied).  ``column=(j, V)`` replaces predictor
        ``j`` with ``V[t, i]`` when tree ``t`` sees row ``i``; ``V`` has
        shape ``(n_trees, n_rows)``.
        """
        roots, feat, thr, left, right, out = self._packed
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.predictor_names):
            raise ValueError(f"expected an (n, {len(self.predictor_names)}) matrix")
        T = len(self.trees)
        n = X.shape[0]
        node = np.repeat(roots, n)
        rows = np.tile(np.arange(n), T)
        if column is not None:
            j, V = column
            V = np.asarray(V, dtype=float).ravel()
        act = np.flatnonzero(feat[node] >= 0)
        while act.size:
            nd = node[act]
            f = feat[nd]
            xv = X[rows[act], f]
            if column is not None:
                sub = f == j
                xv[sub] = V[act[sub]]
            nxt = np.where(xv <= thr[nd], left[nd], right[nd])
            node[act] = nxt
            act = act[feat[nxt] >= 0]
        return out[node].reshape(T, n)

    def predict_array(self, X: np.ndarray) -> np.ndarray:
        """Regression value or probability of class 1 for each row of ``X``."""
        return self.tree_outputs(X).mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "task": self.task,
            "predictor_names": list(self.predictor_names),
            "params": asdict(self.params),
            "data_fingerprint": self.data_fingerprint,
            "training_fingerprint": self.training_fingerprint,
            "n_train": self.n_train,
            "x_min": self.x_min.tolist(), "x_max": self.x_max.tolist(),
            "x_q25": self.x_q25.tolist(), "x_q75": self.x_q75.tolist(),
            "trees": [{"feature": t.feature.tolist(), "threshold": [None if math.isnan(v) else v for v in t.threshold.tolist()],
                       "left": t.left.tolist(), "right": t.right.tolist(),
                       "value": t.value.tolist(), "inbag": t.inbag.tolist()} for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        if d.get("format") != FORMAT or d.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 heatcast forest document")
        trees = [Tree(np.asarray(t["feature"], dtype=np.int64),
                      np.array([np.nan if v is None else v for v in t["threshold"]], dtype=float),
                      np.asarray(t["left"], dtype=np.int64), np.asarray(t["right"], dtype=np.int64),
                      np.asarray(t["value"], dtype=float), np.asarray(t["inbag"], dtype=np.int64))
                 for t in d["trees"]]
        return cls(trees=trees, task=d["task"], predictor_names=list(d["predictor_names"]),
                   params=ForestParams(**d["params"]), data_fingerprint=d["data_fingerprint"],
                   training_fingerprint=d["training_fingerprint"], n_train=int(d["n_train"]),
                   x_min=np.asarray(d["x_min"], dtype=float), x_max=np.asarray(d["x_max"], dtype=float),
                   x_q25=np.asarray(d["x_q25"], dtype=float), x_q75=np.asarray(d["x_q75"], dtype=float))

    @classmethod
    def from_json(cls, text: str) -> "Forest":
        return cls.from_dict(json.loads(text))


def _bootstrap_counts(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(w)
    cum = np.cumsum(w)
    idx = np.searchsorted(cum, rng.random(n) * cum[-1], side="right")
    return np.bincount(np.minimum(idx, n - 1), minlength=n)


def fit_arrays(X, y, task: str, predictor_names: Sequence[str], params: ForestParams = ForestParams(),
               weights=None, threads: int = 1) -> Forest:
    """Fit a forest on plain arrays.  See :func:`fit`."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if task not in (REGRESSION, CLASSIFICATION):
        raise ValueError(f"unknown task {task!r}")
    if len(predictor_names) != p:
        raise ValueError("predictor_names does not match X")
    if n < 2:
        raise DegenerateDataError("need at least two rows")
    if len(y) != n:
        raise ValueError("X and y lengths differ")
    if np.isnan(X).any() or np.isnan(y).any():
        raise DegenerateDataError("training data contain missing values")
    if task == CLASSIFICATION:
        if set(np.unique(y).tolist()) - {0.0, 1.0}:
            raise DegenerateDataError("classification labels must be 0/1")
        if len(np.unique(y)) < 2:
            raise DegenerateDataError("only one class present")
    elif np.all(y == y[0]):
        raise DegenerateDataError("constant response")

    if weights is None:
        case_w = np.ones(n)
        weight_key = None
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (n,) or not (weights > 0).all() or not np.isfinite(weights).all():
            raise ValueError("weights must be finite, positive, one per row")
        # divide by the max so constant weights reduce exactly to ones
        case_w = weights / weights.max()
        weight_key = case_w
    params = params.resolve(task, p)

    def one(t):
        rng = tree_rng(params.seed, t)
        if params.bootstrap:
            counts = _bootstrap_counts(case_w, rng)
            w = counts.astype(float)
        else:
            counts = np.ones(n, dtype=np.int64)
            w = case_w
        arrays = grow_tree(X, y, w, counts, task, params.mtry, params.min_node_size, rng)
        return Tree(*arrays, inbag=counts.astype(np.int64))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(one, range(params.n_trees)))
    else:
        trees = [one(t) for t in range(params.n_trees)]

    dh = data_hash(X, y, predictor_names, task)
    fp = _hash(dh, asdict(params), weight_key if weight_key is not None else "unweighted")
    return Forest(trees=trees, task=task, predictor_names=list(predictor_names), params=params,
                  data_fingerprint=dh, training_fingerprint=fp, n_train=n,
                  x_min=X.min(axis=0), x_max=X.max(axis=0),
                  x_q25=np.quantile(X, 0.25, axis=0), x_q75=np.quantile(X, 0.75, axis=0))


def fit(data, params: ForestParams = ForestParams(), weights=None, threads: int = 1) -> Forest:
    """Fit a regression forest on a :class:`GainDataset` or a classification
    forest on a :class:`LabeledDataset`.

    Raises
    ------
    DegenerateDataError
        Fewer than two rows, a constant response, or a single class.
    """
    return fit_arrays(data.X, data.response, data.task, data.predictor_names, params, weights, threads)


def row_vector(forest: Forest, x: Mapping[str, float]) -> np.ndarray:
    missing = [name for name in forest.predictor_names if name not in x]
    if missing:
        raise MissingPredictorError(f"missing predictors: {missing}")
    return np.array([[float(x[name]) for name in forest.predictor_names]])


def predict(forest: Forest, x: Mapping[str, float]):
    """Predict one row given as a ``{predictor: value}`` mapping.

    Returns the mean tree prediction for regression, or ``(p0, p1)`` where
    ``p1`` is the fraction of trees voting for class 1.
    """
    value = float(forest.predict_array(row_vector(forest, x))[0])
    if forest.task == REGRESSION:
        return value
    return (1.0 - value, value)


def predicted_labels(p1: np.ndarray) -> np.ndarray:
    """Class with the larger vote share; an even split goes to class 0."""
    return (np.asarray(p1) > 0.5).astype(np.int64)


def check_fingerprint(forest: Forest, data) -> None:
    if data_hash(data.X, data.response, data.predictor_names, data.task) != forest.data_fingerprint:
        raise FingerprintMismatchError("forest was not trained on this dataset")


def oob_matrix(forest: Forest, X: np.ndarray):
    """Per-tree outputs with in-bag entries masked: ``(outputs, oob_mask)``."""
    outputs = forest.tree_outputs(X)
    mask = np.stack([t.inbag == 0 for t in forest.trees])
    return outputs, mask


def oob_predictions(forest: Forest, data) -> tuple[np.ndarray, np.ndarray]:
    """OOB prediction per row (NaN when the row was in every bootstrap)
    and the number of trees it was out of bag for."""
    check_fingerprint(forest, data)
    outputs, mask = oob_matrix(forest, data.X)
    n_oob = mask.sum(axis=0)
    total = np.where(mask, outputs, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        pred = np.where(n_oob > 0, total / np.maximum(n_oob, 1), np.nan)
    return pred, n_oob


@dataclass
class OobReport:
    task: str
    n: int
    n_skipped: int
    oob_mse: float | None = None
    variance_explained: float | None = None
    error_rate: float | None = None
    false_positive_rate: float | None = None
    false_negative_rate: float | None = None
    tp: int | None = None
    fp: int | None = None
    fn: int | None = None
    tn: int | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _rate(num, den):
    return num / den if den else 0.0


def oob_report(forest: Forest, data) -> OobReport:
    """Out-of-bag fit summary; rows never out of bag are skipped and counted.

    Raises
    ------
    FingerprintMismatchError
        ``data`` is not the training data of ``forest``.
    """
    pred, n_oob = oob_predictions(forest, data)
    ok = n_oob > 0
    y = np.asarray(data.response, dtype=float)[ok]
    pred = pred[ok]
    n = int(ok.sum())
    skipped = int((~ok).sum())
    if forest.task == REGRESSION:
        mse = float(np.mean((y - pred) ** 2)) if n else math.nan
        var = float(np.var(y)) if n else math.nan
        return OobReport(REGRESSION, n, skipped, oob_mse=mse,
                         variance_explained=1.0 - mse / var if var > 0 else math.nan)
    lab = predicted_labels(pred)
    y = y.astype(np.int64)
    tp = int(((lab == 1) & (y == 1)).sum())
    fp = int(((lab == 1) & (y == 0)).sum())
    fn = int(((lab == 0) & (y == 1)).sum())
    tn = int(((lab == 0) & (y == 0)).sum())
    return OobReport(CLASSIFICATION, n, skipped, error_rate=_rate(fp + fn, n),
                     false_positive_rate=_rate(fp, fp + tn), false_negative_rate=_rate(fn, fn + tp),
                     tp=tp, fp=fp, fn=fn, tn=tn)
