"""Crossover design builders.

Two kinds of dataset come out of a panel:

* gain designs: one row per cell with the surface-temperature mean over a
  pre window and a post window, their difference (the gain score), and the
  predictors measured on a single lag date;
* stacked classification designs: lag-date predictors for the same cells
  under several scenarios (event windows labelled 1, faux windows labelled 0)
  concatenated into one table.

Cells with any missing aggregate are dropped listwise and reported.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    EmptyDatasetError, HeatcastError, LabelImbalanceError, NoCompleteRowsError,
    SchemaError, WindowOutOfSpanError,
)
from .grid_data import DEFAULT_PREDICTORS, CellId, DateRange, Panel, _window_series, check_variable

RESPONSE_VAR = "surf_air_temp"


@dataclass(frozen=True)
class WindowSpec:
    """Post window, optional pre window, and predictor lag date."""

    post_window: DateRange
    pre_window: DateRange | None
    predictor_lag_date: date

    def __post_init__(self):
        if self.pre_window is not None and not self.pre_window.end < self.post_window.start:
            raise ValueError("pre window must end before the post window starts")
        if not self.predictor_lag_date < self.post_window.start:
            raise ValueError("predictor lag date must precede the post window")

    @classmethod
    def for_event(cls, post_start: date, post_days: int = 4, pre_days: int | None = 4,
                  lag_days: int = 14) -> "WindowSpec":
        """Post window of ``post_days`` starting at ``post_start``, a pre window
        of ``pre_days`` immediately before it, predictors ``lag_days`` earlier."""
        post = DateRange(post_start, post_start + timedelta(days=post_days - 1))
        pre = None
        if pre_days:
            pre = DateRange(post_start - timedelta(days=pre_days), post_start - timedelta(days=1))
        return cls(post, pre, post_start - timedelta(days=lag_days))

    def to_dict(self) -> dict:
        return {"post_window": str(self.post_window),
                "pre_window": None if self.pre_window is None else str(self.pre_window),
                "predictor_lag_date": self.predictor_lag_date.isoformat()}


def shift_spec(spec: WindowSpec, offset: int) -> WindowSpec:
    """Translate every date of ``spec`` by ``offset`` days."""
    return WindowSpec(
        spec.post_window.shift(offset),
        None if spec.pre_window is None else spec.pre_window.shift(offset),
        spec.predictor_lag_date + timedelta(days=offset),
    )


@dataclass
class GainDataset:
    """One row per complete cell.

    ``pre_mean`` and ``post_mean`` are ``None`` when the dataset was read back
    from CSV, which only carries the gain score.
    """

    cells: list[CellId]
    pre_mean: np.ndarray | None
    post_mean: np.ndarray | None
    gain: np.ndarray
    X: np.ndarray
    predictor_names: list[str]
    scenario: str = "event"
    dropped: list[CellId] = field(default_factory=list)

    task = "regression"

    def __len__(self):
        return len(self.gain)

    @property
    def response(self) -> np.ndarray:
        return self.gain


@dataclass
class LabeledDataset:
    cells: list[CellId]
    scenario: np.ndarray
    labels: np.ndarray
    X: np.ndarray
    predictor_names: list[str]
    dropped: dict[str, list[CellId]] = field(default_factory=dict)

    task = "classification"

    def __len__(self):
        return len(self.labels)

    @property
    def response(self) -> np.ndarray:
        return self.labels

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows)
        return LabeledDataset([self.cells[i] for i in rows], self.scenario[rows],
                              self.labels[rows], self.X[rows], list(self.predictor_names))


class Scenario(NamedTuple):
    tag: str
    panel: Panel
    spec: WindowSpec
    label: int


def _check_predictors(predictor_vars: Sequence[str]) -> list[str]:
    names = [check_variable(v) for v in predictor_vars]
    if RESPONSE_VAR in names:
        raise HeatcastError("surf_air_temp forms the pre/post tests and cannot be a predictor")
    if len(set(names)) != len(names):
        raise HeatcastError("duplicate predictor names")
    return names


def _check_span(panel: Panel, spec: WindowSpec, use_pre: bool) -> None:
    windows = [spec.post_window, DateRange(spec.predictor_lag_date, spec.predictor_lag_date)]
    if use_pre:
        windows.append(spec.pre_window)
    for w in windows:
        if not panel.date_span.covers(w):
            raise WindowOutOfSpanError(f"{w} outside panel span {panel.date_span}")


def _lag_predictors(panel: Panel, spec: WindowSpec, names: list[str]):
    day = DateRange(spec.predictor_lag_date, spec.predictor_lag_date)
    cols = [_window_series(panel, v, day) for v in names]
    return cols


def build_gain_design(panel: Panel, spec: WindowSpec,
                      predictor_vars: Sequence[str] = DEFAULT_PREDICTORS,
                      scenario: str = "event") -> GainDataset:
    """Gain-score design for one scenario.

    Raises
    ------
    WindowOutOfSpanError
        A window or the lag date lies outside the panel.
    NoCompleteRowsError
        Every cell has at least one missing aggregate.
    """
    if spec.pre_window is None:
        raise HeatcastError("a gain design needs a pre window")
    names = _check_predictors(predictor_vars)
    _check_span(panel, spec, use_pre=True)
    pre = _window_series(panel, RESPONSE_VAR, spec.pre_window)
    post = _window_series(panel, RESPONSE_VAR, spec.post_window)
    preds = _lag_predictors(panel, spec, names)

    pre_v = pre.to_numpy()
    post_v = post.to_numpy()
    X = np.column_stack([p.to_numpy() for p in preds]) if names else np.empty((len(pre_v), 0))
    complete = ~(np.isnan(pre_v) | np.isnan(post_v) | np.isnan(X).any(axis=1))
    keys = [CellId(int(a), int(b)) for a, b in pre.index]
    if not complete.any():
        raise NoCompleteRowsError(f"no cell has complete data for {scenario}")
    pre_v, post_v = pre_v[complete], post_v[complete]
    return GainDataset(
        cells=[k for k, ok in zip(keys, complete) if ok],
        pre_mean=pre_v,
        post_mean=post_v,
        gain=post_v - pre_v,
        X=X[complete],
        predictor_names=names,
        scenario=scenario,
        dropped=[k for k, ok in zip(keys, complete) if not ok],
    )


def build_crossover_classification(scenarios: Sequence[Scenario | tuple],
                                   predictor_vars: Sequence[str] = DEFAULT_PREDICTORS) -> LabeledDataset:
    """Stack lag-date predictors of several labelled scenarios.

    Pre windows are ignored.  Each scenario contributes one row per cell with
    complete predictors on its lag date.
    """
    scenarios = [Scenario(*s) for s in scenarios]
    names = _check_predictors(predictor_vars)
    if len(scenarios) < 2:
        raise LabelImbalanceError("a crossover stack needs at least two scenarios")
    if {s.label for s in scenarios} - {0, 1}:
        raise HeatcastError("scenario labels must be 0 or 1")
    if len({s.tag for s in scenarios}) != len(scenarios):
        raise HeatcastError("scenario tags must be unique")

    cells, tags, labels, blocks, dropped = [], [], [], [], {}
    for s in scenarios:
        _check_span(s.panel, s.spec, use_pre=False)
        preds = _lag_predictors(s.panel, s.spec, names)
        index = preds[0].index if preds else s.panel.wide(RESPONSE_VAR).index
        X = np.column_stack([p.to_numpy() for p in preds]) if names else np.empty((len(index), 0))
        complete = ~np.isnan(X).any(axis=1)
        keys = [CellId(int(a), int(b)) for a, b in index]
        cells += [k for k, ok in zip(keys, complete) if ok]
        dropped[s.tag] = [k for k, ok in zip(keys, complete) if not ok]
        n_ok = int(complete.sum())
        tags += [s.tag] * n_ok
        labels += [s.label] * n_ok
        blocks.append(X[complete])

    labels = np.asarray(labels, dtype=np.int64)
    if not ((labels == 0).any() and (labels == 1).any()):
        raise LabelImbalanceError("stack lacks one of the two classes")
    return LabeledDataset(cells, np.asarray(tags, dtype=object), labels,
                          np.vstack(blocks), names, dropped)


@dataclass
class GainSummary:
    n: int
    mean: float
    n_negative: int
    histogram: list[tuple[float, float, int]]
    bin_width: float

    def to_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "n_negative": self.n_negative,
                "bin_width": self.bin_width,
                "histogram": [{"lower": lo, "upper": hi, "count": c} for lo, hi, c in self.histogram]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def gain_summary(g: GainDataset, bin_width: float) -> GainSummary:
    """Mean, negative count, and a histogram with edges on multiples of ``bin_width``."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    gains = np.asarray(g.gain, dtype=float)
    if gains.size == 0:
        raise EmptyDatasetError("no gain scores to summarize")
    k = np.floor(gains / bin_width).astype(np.int64)
    # division rounding can put a value one bin off its edges
    k -= gains < k * bin_width
    k += gains >= (k + 1) * bin_width
    k0 = int(k.min())
    counts = np.bincount(k - k0)
    hist = [((k0 + i) * bin_width, (k0 + i + 1) * bin_width, int(c)) for i, c in enumerate(counts)]
    return GainSummary(n=int(gains.size), mean=float(gains.mean()),
                       n_negative=int((gains < 0).sum()), histogram=hist, bin_width=float(bin_width))


# CSV round trip: cell_lat,cell_lon,scenario,<gain|label>,<predictors...>

def write_dataset(ds: GainDataset | LabeledDataset, path: str | Path) -> None:
    kind = "gain" if isinstance(ds, GainDataset) else "label"
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_lat", "cell_lon", "scenario", kind, *ds.predictor_names])
        for i, cell in enumerate(ds.cells):
            tag = ds.scenario if kind == "gain" else ds.scenario[i]
            y = repr(float(ds.gain[i])) if kind == "gain" else str(int(ds.labels[i]))
            w.writerow([cell.lat_index, cell.lon_index, tag, y, *(repr(float(v)) for v in ds.X[i])])


def read_dataset(path: str | Path) -> GainDataset | LabeledDataset:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = rows[0]
    if header[:3] != ["cell_lat", "cell_lon", "scenario"] or len(header) < 4 \
            or header[3] not in ("gain", "label"):
        raise SchemaError(f"{path}: expected cell_lat,cell_lon,scenario,gain|label,...")
    names = header[4:]
    body = rows[1:]
    try:
        cells = [CellId(int(r[0]), int(r[1])) for r in body]
        X = np.array([[float(v) for v in r[4:]] for r in body], dtype=float).reshape(len(body), len(names))
        y = [r[3] for r in body]
        tags = [r[2] for r in body]
    except (ValueError, IndexError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    if np.isnan(X).any():
        raise SchemaError(f"{path}: datasets may not contain missing values")
    if header[3] == "gain":
        if len(set(tags)) > 1:
            raise SchemaError(f"{path}: a gain design holds a single scenario")
        return GainDataset(cells, None, None, np.array([float(v) for v in y]), X, names,
                           scenario=tags[0] if tags else "event")
    labels = np.array([int(v) for v in y], dtype=np.int64)
    if set(labels.tolist()) - {0, 1}:
        raise SchemaError(f"{path}: labels must be 0 or 1")
    return LabeledDataset(cells, np.array(tags, dtype=object), labels, X, names)


def dataset_to_dict(ds: GainDataset | LabeledDataset) -> dict:
    """Compact JSON-ready description used by run manifests."""
    out = {"n_rows": len(ds), "predictors": list(ds.predictor_names)}
    if isinstance(ds, GainDataset):
        out["dropped_cells"] = [str(c) for c in ds.dropped]
        out["gain_mean"] = float(np.mean(ds.gain)) if len(ds) else math.nan
    else:
        out["rows_per_class"] = {str(k): int((ds.labels == k).sum()) for k in (0, 1)}
        out["dropped_cells"] = {t: [str(c) for c in v] for t, v in ds.dropped.items()}
    return out
