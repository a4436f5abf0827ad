"""Deterministic synthetic panels with a planted heat dome.

Daily surface temperature in cell ``i`` on day ``t`` is::

    baseline_i + drift * t + amplitude_i * 1[dome cell, t in dome window] + noise

where ``amplitude_i = dome_amplitude + sum_v coef_v * g_v(x_iv)`` and ``x_iv`` is
predictor ``v`` on the precursor date (``lag_days`` before the dome).  ``g`` is
the standardized value for a ``linear`` link and ``expit((x - center) / scale)``
for a ``sigmoid`` link.

A ``sigmoid`` link also plants a precursor signature: on ordinary days the
variable is ``N(center - delta/2, sd)`` and on the precursor date of dome cells
it is ``N(center + delta/2, sd)`` with ``delta = sd**2 / scale``.  In a balanced
event/non-event stack the Bayes posterior of the event label is then exactly
``expit(sum_v (x_v - center_v) / scale_v)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta

import numpy as np
import pandas as pd

from .errors import ConfigError
from .grid_data import (
    COLUMNS, MMR_VARS, RETRIEVED_VARS, TEMP_VARS, BBox, CellId, DateRange, Panel,
)

# Daily mean and standard deviation of the retrieved profile variables on
# ordinary days; magnitudes loosely follow mid-latitude summer soundings.
TEMP_MEANS = [288.0, 284.0, 279.0, 274.0, 268.0, 260.0, 248.0, 233.5, 222.0, 218.0, 217.0, 218.0]
MMR_MEANS = [9.0, 8.0, 7.0, 5.5, 4.0, 3.0, 2.2, 1.5, 1.0, 0.6, 0.3, 0.15]
PROFILES: dict[str, tuple[float, float]] = {
    "trop_height": (11000.0, 600.0),
    **{v: (m, 2.0) for v, m in zip(TEMP_VARS, TEMP_MEANS)},
    **{v: (m, round(0.27 * m, 4)) for v, m in zip(MMR_VARS, MMR_MEANS)},
}
TOPO_MAX = 2500.0
LAND_FRACTION = 0.75
STATIC_SCALES = {
    "topography": (LAND_FRACTION * TOPO_MAX / 2,
                   math.sqrt(LAND_FRACTION * TOPO_MAX ** 2 / 3 - (LAND_FRACTION * TOPO_MAX / 2) ** 2)),
    "land_sea": (LAND_FRACTION, math.sqrt(LAND_FRACTION * (1 - LAND_FRACTION))),
}
LINKS = ("linear", "sigmoid", "none")


@dataclass(frozen=True)
class Effect:
    """How one lag-date predictor relates to the planted dome."""

    link: str = "none"
    coef: float = 0.0
    center: float | None = None
    scale: float | None = None

    def __post_init__(self):
        if self.link not in LINKS:
            raise ConfigError(f"unknown link {self.link!r}")
        if self.link == "sigmoid" and (self.center is None or not self.scale or self.scale <= 0):
            raise ConfigError("sigmoid link needs center and positive scale")


@dataclass
class SynthConfig:
    grid_shape: tuple[int, int] = (12, 12)
    origin: tuple[int, int] = (40, -125)
    date_span: DateRange = field(default_factory=lambda: DateRange(date(2021, 6, 1), date(2021, 7, 31)))
    dome_window: DateRange = field(default_factory=lambda: DateRange(date(2021, 6, 27), date(2021, 6, 30)))
    dome_cells: list[CellId] | None = None
    dome_amplitude: float = 6.0
    lag_days: int = 14
    predictor_effects: dict[str, Effect] = field(default_factory=dict)
    noise_sigma: float = 1.5
    seasonal_drift: float = 0.05
    missing_rate: float = 0.0
    planted_missing: list[tuple[CellId, date]] = field(default_factory=list)
    seed: int = 0

    @property
    def n_cells(self) -> int:
        return self.grid_shape[0] * self.grid_shape[1]

    @property
    def region(self) -> BBox:
        lat0, lon0 = self.origin
        return BBox(lat0, lat0 + self.grid_shape[0], lon0, lon0 + self.grid_shape[1])

    @property
    def precursor_date(self) -> date:
        return self.dome_window.start - timedelta(days=self.lag_days)

    def cells(self) -> list[CellId]:
        lat0, lon0 = self.origin
        return [CellId(lat0 + a, lon0 + b)
                for a in range(self.grid_shape[0]) for b in range(self.grid_shape[1])]

    def validate(self) -> None:
        if min(self.grid_shape) < 1:
            raise ConfigError("grid_shape must be positive")
        try:
            self.region
            self.cells()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not self.date_span.covers(self.dome_window):
            raise ConfigError("dome_window must lie inside date_span")
        if not 0 <= self.missing_rate < 1:
            raise ConfigError("missing_rate must be in [0, 1)")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        for v, eff in self.predictor_effects.items():
            if v not in PROFILES and v not in STATIC_SCALES:
                raise ConfigError(f"no effect possible on {v!r}")
            if eff.link == "sigmoid" and v not in PROFILES:
                raise ConfigError(f"sigmoid link needs a daily variable, not {v!r}")
        if any(eff.link == "sigmoid" for eff in self.predictor_effects.values()):
            if self.precursor_date not in self.date_span:
                raise ConfigError("precursor date falls outside date_span")
        if self.dome_cells is not None:
            known = set(self.cells())
            if not set(self.dome_cells) <= known:
                raise ConfigError("dome_cells must be cells of the grid")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["date_span"] = str(self.date_span)
        d["dome_window"] = str(self.dome_window)
        d["dome_cells"] = (None if self.dome_cells is None
                           else [[c.lat_index, c.lon_index] for c in self.dome_cells])
        d["planted_missing"] = [[c.lat_index, c.lon_index, day.isoformat()]
                                for c, day in self.planted_missing]
        d["grid_shape"] = list(self.grid_shape)
        d["origin"] = list(self.origin)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        try:
            if "date_span" in d:
                d["date_span"] = DateRange.parse(d["date_span"])
            if "dome_window" in d:
                d["dome_window"] = DateRange.parse(d["dome_window"])
            if d.get("dome_cells") is not None:
                d["dome_cells"] = [CellId(*c) for c in d["dome_cells"]]
            if "planted_missing" in d:
                d["planted_missing"] = [(CellId(a, b), date.fromisoformat(s))
                                        for a, b, s in d["planted_missing"]]
            if "predictor_effects" in d:
                d["predictor_effects"] = {k: Effect(**v) for k, v in d["predictor_effects"].items()}
            for key in ("grid_shape", "origin"):
                if key in d:
                    d[key] = tuple(d[key])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _expit(z):
    return 1.0 / (1.0 + np.exp(-z))


def _sigmoid_shift(v: str, eff: Effect) -> tuple[float, float, float]:
    """(ordinary mean, precursor mean, sd) for a sigmoid-linked variable."""
    sd = PROFILES[v][1]
    delta = sd ** 2 / eff.scale
    return eff.center - delta / 2, eff.center + delta / 2, sd


@dataclass
class GroundTruth:
    """Every quantity the generator planted."""

    config: SynthConfig
    precursor_date: date
    baseline: dict[CellId, float]
    amplitude: dict[CellId, float]
    dome_cells: list[CellId]
    missing_cell_days: int

    def expected_gain(self, pre: DateRange, post: DateRange) -> dict[CellId, float]:
        """Noise-free post-window mean minus pre-window mean per cell."""
        cfg = self.config
        t0 = cfg.date_span.start

        def mean_day(w):
            return ((w.start - t0).days + (w.end - t0).days) / 2

        drift = cfg.seasonal_drift * (mean_day(post) - mean_day(pre))
        in_post = sum(d in cfg.dome_window for d in post) / len(post)
        in_pre = sum(d in cfg.dome_window for d in pre) / len(pre)
        dome = set(self.dome_cells)
        return {c: drift + (self.amplitude[c] * (in_post - in_pre) if c in dome else 0.0)
                for c in self.baseline}

    def bayes_r2(self, pre_len: int = 4, post_len: int = 4) -> float:
        """Population R^2 of the Bayes regression of the event gain score on
        the lag-date predictors (pre window before, post window on the dome)."""
        signal = gain_signal_variance(self.config)
        noise = self.config.noise_sigma ** 2 * (1 / pre_len + 1 / post_len)
        total = signal + noise
        return signal / total if total > 0 else 0.0

    def bayes_error(self) -> float:
        """Bayes error of a balanced event (precursor date) vs ordinary-day stack."""
        d2 = 0.0
        for v, eff in self.config.predictor_effects.items():
            if eff.link == "sigmoid":
                d2 += (PROFILES[v][1] / eff.scale) ** 2
        return 0.5 * math.erfc(math.sqrt(d2) / 2 / math.sqrt(2))

    def to_dict(self) -> dict:
        key = lambda c: f"{c.lat_index},{c.lon_index}"  # noqa: E731
        return {
            "config": self.config.to_dict(),
            "precursor_date": self.precursor_date.isoformat(),
            "baseline": {key(c): v for c, v in self.baseline.items()},
            "amplitude": {key(c): v for c, v in self.amplitude.items()},
            "dome_cells": [[c.lat_index, c.lon_index] for c in self.dome_cells],
            "missing_cell_days": self.missing_cell_days,
            "bayes_r2": self.bayes_r2(),
            "bayes_error": self.bayes_error(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def gain_signal_variance(config: SynthConfig) -> float:
    """Variance over cells of the noise-free event gain score."""
    var_a = 0.0
    mean_a = config.dome_amplitude
    for v, eff in config.predictor_effects.items():
        if eff.link == "linear":
            var_a += eff.coef ** 2
        elif eff.link == "sigmoid" and eff.coef:
            _, mu1, sd = _sigmoid_shift(v, eff)
            nodes, weights = np.polynomial.hermite_e.hermegauss(80)
            weights = weights / weights.sum()
            g = _expit((mu1 + sd * nodes - eff.center) / eff.scale)
            m = float((weights * g).sum())
            mean_a += eff.coef * m
            var_a += eff.coef ** 2 * float((weights * (g - m) ** 2).sum())
    n_dome = config.n_cells if config.dome_cells is None else len(config.dome_cells)
    pi = n_dome / config.n_cells
    return pi * var_a + pi * (1 - pi) * mean_a ** 2


def noise_sigma_for_r2(config: SynthConfig, r2: float, pre_len: int = 4, post_len: int = 4) -> float:
    """Daily noise sigma that makes :meth:`GroundTruth.bayes_r2` equal ``r2``."""
    if not 0 < r2 < 1:
        raise ConfigError("target R^2 must be in (0, 1)")
    signal = gain_signal_variance(config)
    if signal <= 0:
        raise ConfigError("configuration plants no gain signal")
    return math.sqrt(signal * (1 - r2) / r2 / (1 / pre_len + 1 / post_len))


def generate(config: SynthConfig) -> tuple[Panel, GroundTruth]:
    """Draw a panel. Deterministic given ``config.seed``."""
    config.validate()
    ss = np.random.SeedSequence(config.seed)
    rng_static, rng_daily, rng_noise, rng_missing = (np.random.default_rng(s) for s in ss.spawn(4))

    cells = config.cells()
    n = len(cells)
    days = list(config.date_span)
    n_days = len(days)
    lat = np.array([c.lat_index for c in cells])
    lon = np.array([c.lon_index for c in cells])

    land = (rng_static.random(n) < LAND_FRACTION).astype(np.int64)
    topo = np.where(land == 1, rng_static.uniform(0.0, TOPO_MAX, n), 0.0)
    baseline = 295.0 - 0.0045 * topo + rng_static.normal(0.0, 2.0, n)

    dome_cells = list(config.dome_cells) if config.dome_cells is not None else list(cells)
    in_dome = np.array([c in set(dome_cells) for c in cells])
    p_idx = (config.precursor_date - config.date_span.start).days
    has_precursor = 0 <= p_idx < n_days

    daily = {}
    for v in RETRIEVED_VARS:
        if v == "surf_air_temp":
            continue
        mean, sd = PROFILES[v]
        eff = config.predictor_effects.get(v)
        draws = rng_daily.normal(0.0, 1.0, (n, n_days))
        if eff is not None and eff.link == "sigmoid":
            mu0, mu1, sd = _sigmoid_shift(v, eff)
            vals = mu0 + sd * draws
            if has_precursor:
                vals[in_dome, p_idx] += mu1 - mu0
        else:
            vals = mean + sd * draws
        if v in MMR_VARS:
            vals = np.maximum(vals, 0.0)
        daily[v] = vals

    static = {"topography": topo, "land_sea": land.astype(float)}
    amplitude = np.full(n, float(config.dome_amplitude))
    for v, eff in config.predictor_effects.items():
        if eff.link == "none" or not eff.coef:
            continue
        if v in static:
            x = static[v]
        else:
            if not has_precursor:
                raise ConfigError("precursor date falls outside date_span")
            x = daily[v][:, p_idx]
        if eff.link == "linear":
            mu, sd = STATIC_SCALES[v] if v in static else PROFILES[v]
            amplitude += eff.coef * (x - mu) / sd
        else:
            amplitude += eff.coef * _expit((x - eff.center) / eff.scale)

    t = np.arange(n_days, dtype=float)
    dome_days = np.array([d in config.dome_window for d in days])
    sat = (baseline[:, None] + config.seasonal_drift * t[None, :]
           + np.where(in_dome[:, None] & dome_days[None, :], amplitude[:, None], 0.0)
           + config.noise_sigma * rng_noise.normal(0.0, 1.0, (n, n_days)))
    daily["surf_air_temp"] = sat

    missing = rng_missing.random((n, n_days)) < config.missing_rate
    index = {c: i for i, c in enumerate(cells)}
    for cell, day in config.planted_missing:
        if cell not in index or day not in config.date_span:
            raise ConfigError(f"planted missing value off-grid: {cell} {day}")
        missing[index[cell], (day - config.date_span.start).days] = True

    frame = pd.DataFrame({
        "date": np.tile(pd.DatetimeIndex([pd.Timestamp(d) for d in days]).to_numpy(), n),
        "lat_idx": np.repeat(lat, n_days),
        "lon_idx": np.repeat(lon, n_days),
        "latitude": np.repeat(lat + 0.5, n_days),
        "longitude": np.repeat(lon + 0.5, n_days),
        "land_sea": np.repeat(land, n_days),
        "topography": np.repeat(topo, n_days),
    })
    flat_missing = missing.ravel()
    for v in RETRIEVED_VARS:
        col = daily[v].ravel().copy()
        col[flat_missing] = np.nan
        frame[v] = col
    frame = frame[COLUMNS]

    panel = Panel(frame, date_span=config.date_span, region=config.region)
    truth = GroundTruth(
        config=config,
        precursor_date=config.precursor_date,
        baseline=dict(zip(cells, baseline.tolist())),
        amplitude=dict(zip(cells, amplitude.tolist())),
        dome_cells=dome_cells,
        missing_cell_days=int(missing.sum()),
    )
    return panel, truth


# Named configurations used by the CLI and the acceptance suite.

def paper_like_stack_config(seed: int = 0, **overrides) -> SynthConfig:
    """Balanced event/non-event classification analog: temperature level 8
    dominant, tropopause height second, mixing ratio level 8 weak."""
    effects = {
        "temp_8": Effect("sigmoid", center=233.5, scale=2.0 / 3.0),
        "trop_height": Effect("sigmoid", center=11500.0, scale=400.0),
        "mmr_8": Effect("sigmoid", center=1.5, scale=PROFILES["mmr_8"][1] / 0.8),
    }
    base = dict(predictor_effects=effects, seed=seed)
    base.update(overrides)
    return SynthConfig(**base)


def moderate_stack_config(seed: int = 0, separation: float = 1.5, **overrides) -> SynthConfig:
    """Stack analog with a noisier boundary: the three paper-like
    predictors share the standardized separation ``separation`` equally, so
    the Bayes error is ``Phi(-separation / 2)``."""
    per = separation / math.sqrt(3.0)
    effects = {}
    for name, center in (("temp_8", 233.5), ("trop_height", 11500.0), ("mmr_8", 1.5)):
        effects[name] = Effect("sigmoid", center=center, scale=PROFILES[name][1] / per)
    base = dict(predictor_effects=effects, seed=seed)
    base.update(overrides)
    return SynthConfig(**base)


def regression_config(seed: int = 0, r2: float = 0.75, **overrides) -> SynthConfig:
    """Event gain-score analog whose Bayes R^2 is ``r2``; topography is the
    dominant planted predictor."""
    effects = {
        "topography": Effect("linear", coef=2.0),
        "temp_6": Effect("linear", coef=1.0),
        "mmr_5": Effect("linear", coef=0.6),
        "trop_height": Effect("none"),
    }
    base = dict(predictor_effects=effects, seed=seed, grid_shape=(20, 20), origin=(35, -130))
    base.update(overrides)
    cfg = SynthConfig(**base)
    cfg.noise_sigma = noise_sigma_for_r2(cfg, r2)
    return cfg


PRESETS = {
    "default": lambda seed: SynthConfig(seed=seed),
    "stack": paper_like_stack_config,
    "moderate": moderate_stack_config,
    "high_margin": lambda seed: moderate_stack_config(seed, separation=10.0),
    "regression": regression_config,
}
