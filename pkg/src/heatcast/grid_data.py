"""Gridded daily observation panels: data model, CSV ingestion, selection.

A panel holds one row per (cell, day) of Level-3 style gridded retrievals
over 1-degree cells.  Cells are keyed by the integer degree of their
southwest corner so joins across dates are exact; the cell-center
coordinates travel along as ordinary data columns.

The on-disk format is a flat CSV with a fixed header (see ``COLUMNS``);
missing numerics are written as empty fields and read from either an empty
field or ``NA``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import pandas as pd

from .errors import (
    DuplicateKeyError,
    EmptySelectionError,
    RangeError,
    SchemaError,
    UnknownVariableError,
    WindowOutOfSpanError,
)

N_LEVELS = 12
TEMP_VARS = [f"temp_{k}" for k in range(1, N_LEVELS + 1)]
MMR_VARS = [f"mmr_{k}" for k in range(1, N_LEVELS + 1)]
KEY_COLUMNS = ["date", "lat_idx", "lon_idx"]
STATIC_VARS = ["latitude", "longitude", "land_sea", "topography"]
RETRIEVED_VARS = ["surf_air_temp", "trop_height", *TEMP_VARS, *MMR_VARS]
VARIABLES = [*STATIC_VARS, *RETRIEVED_VARS]
COLUMNS = [*KEY_COLUMNS, *VARIABLES]

# Everything except the response-forming surface temperature and the
# cell coordinates.
DEFAULT_PREDICTORS = ["land_sea", "topography", "trop_height", *TEMP_VARS, *MMR_VARS]

_TEMPERATURE_VARS = ["surf_air_temp", *TEMP_VARS]


@dataclass(frozen=True, order=True)
class CellId:
    """A 1-degree grid cell identified by its southwest corner."""

    lat_index: int
    lon_index: int

    def __post_init__(self):
        if not -90 <= self.lat_index <= 89:
            raise RangeError(f"lat_index {self.lat_index} outside [-90, 89]")
        if not -180 <= self.lon_index <= 179:
            raise RangeError(f"lon_index {self.lon_index} outside [-180, 179]")

    def __str__(self):
        return f"({self.lat_index},{self.lon_index})"


@dataclass(frozen=True)
class DateRange:
    """Inclusive range of calendar days."""

    start: date
    end: date

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"empty date range {self.start}..{self.end}")

    def __len__(self):
        return (self.end - self.start).days + 1

    def __contains__(self, day):
        return self.start <= day <= self.end

    def __iter__(self) -> Iterator[date]:
        for k in range(len(self)):
            yield self.start + timedelta(days=k)

    def covers(self, other: "DateRange") -> bool:
        return self.start <= other.start and other.end <= self.end

    def shift(self, days: int) -> "DateRange":
        delta = timedelta(days=days)
        return DateRange(self.start + delta, self.end + delta)

    @classmethod
    def parse(cls, text: str) -> "DateRange":
        """Parse ``YYYY-MM-DD..YYYY-MM-DD`` (or a single day)."""
        if ".." in text:
            a, b = text.split("..", 1)
        else:
            a = b = text
        return cls(date.fromisoformat(a.strip()), date.fromisoformat(b.strip()))

    def __str__(self):
        return f"{self.start.isoformat()}..{self.end.isoformat()}"


@dataclass(frozen=True)
class BBox:
    """Degree bounding box; a cell is inside when its corner is in
    ``[lat_min, lat_max) x [lon_min, lon_max)``."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_max > self.lat_min and self.lon_max > self.lon_min):
            raise ValueError(f"degenerate bounding box {self}")

    def contains(self, cell: CellId) -> bool:
        return (self.lat_min <= cell.lat_index < self.lat_max
                and self.lon_min <= cell.lon_index < self.lon_max)

    def _mask(self, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
        return ((lat >= self.lat_min) & (lat < self.lat_max)
                & (lon >= self.lon_min) & (lon < self.lon_max))

    @classmethod
    def parse(cls, text: str) -> "BBox":
        """Parse ``lat_min,lat_max,lon_min,lon_max``."""
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError("bbox needs lat_min,lat_max,lon_min,lon_max")
        return cls(*parts)


@dataclass(frozen=True)
class DailyObservation:
    cell: CellId
    date: date
    latitude: float
    longitude: float
    land_sea: int
    topography: float
    surf_air_temp: float | None
    trop_height: float | None
    temp_profile: tuple[float | None, ...]
    h2o_mmr: tuple[float | None, ...]


def _opt(value) -> float | None:
    value = float(value)
    return None if math.isnan(value) else value


class Panel:
    """Immutable collection of cell-day observations.

    Backed by a pandas frame with the CSV columns, sorted by
    ``(lat_idx, lon_idx, date)``.  ``date`` is held as ``datetime64``.

    Parameters
    ----------
    frame : DataFrame
        One row per cell-day with every column of ``COLUMNS``.
    date_span : DateRange, optional
        Defaults to the observed first and last day.
    region : BBox, optional
        Defaults to the tightest box around the observed cells.
    """

    def __init__(self, frame: pd.DataFrame, date_span: DateRange | None = None,
                 region: BBox | None = None):
        missing = [c for c in COLUMNS if c not in frame.columns]
        if missing:
            raise SchemaError(f"missing columns: {missing}")
        frame = frame.loc[:, COLUMNS].copy()
        frame["date"] = pd.to_datetime(frame["date"]).dt.normalize()
        frame["lat_idx"] = frame["lat_idx"].astype(np.int64)
        frame["lon_idx"] = frame["lon_idx"].astype(np.int64)
        for col in COLUMNS[3:]:
            frame[col] = frame[col].astype(float)
        frame = frame.sort_values(["lat_idx", "lon_idx", "date"], kind="mergesort")
        frame = frame.reset_index(drop=True)
        _validate(frame)

        if len(frame) == 0:
            if date_span is None or region is None:
                raise EmptySelectionError("empty panel needs explicit span and region")
        if date_span is None:
            date_span = DateRange(frame["date"].min().date(), frame["date"].max().date())
        if region is None:
            region = BBox(int(frame["lat_idx"].min()), int(frame["lat_idx"].max()) + 1,
                          int(frame["lon_idx"].min()), int(frame["lon_idx"].max()) + 1)
        days = frame["date"].dt.date
        if len(frame) and (days.min() < date_span.start or days.max() > date_span.end):
            raise RangeError(f"observations fall outside date span {date_span}")
        if not region._mask(frame["lat_idx"].to_numpy(), frame["lon_idx"].to_numpy()).all():
            raise RangeError(f"observations fall outside region {region}")

        self._frame = frame
        self.date_span = date_span
        self.region = region
        self._wide: dict[str, pd.DataFrame] = {}

    def __len__(self):
        return len(self._frame)

    def __eq__(self, other):
        if not isinstance(other, Panel):
            return NotImplemented
        return (self.date_span == other.date_span and self.region == other.region
                and self._frame.equals(other._frame))

    @property
    def frame(self) -> pd.DataFrame:
        """A copy of the underlying table."""
        return self._frame.copy()

    @property
    def cells(self) -> list[CellId]:
        keys = self._frame[["lat_idx", "lon_idx"]].drop_duplicates()
        return [CellId(int(a), int(b)) for a, b in keys.itertuples(index=False)]

    def observation(self, cell: CellId, day: date) -> DailyObservation:
        f = self._frame
        hit = f[(f["lat_idx"] == cell.lat_index) & (f["lon_idx"] == cell.lon_index)
                & (f["date"] == pd.Timestamp(day))]
        if hit.empty:
            raise KeyError((cell, day))
        return _row_to_observation(next(hit.itertuples(index=False)))

    @property
    def observations(self) -> dict[tuple[CellId, date], DailyObservation]:
        """Materialize every row as a :class:`DailyObservation` (slow for big panels)."""
        out = {}
        for row in self._frame.itertuples(index=False):
            obs = _row_to_observation(row)
            out[(obs.cell, obs.date)] = obs
        return out

    def wide(self, variable: str) -> pd.DataFrame:
        """Cells by dates table of one variable; absent cell-days are NaN."""
        check_variable(variable)
        if variable not in self._wide:
            w = self._frame.pivot(index=["lat_idx", "lon_idx"], columns="date", values=variable)
            all_days = pd.DatetimeIndex([pd.Timestamp(d) for d in self.date_span])
            self._wide[variable] = w.reindex(columns=all_days).astype(float)
        return self._wide[variable]


def _row_to_observation(row) -> DailyObservation:
    r = row._asdict()
    return DailyObservation(
        cell=CellId(int(r["lat_idx"]), int(r["lon_idx"])),
        date=r["date"].date(),
        latitude=float(r["latitude"]),
        longitude=float(r["longitude"]),
        land_sea=int(r["land_sea"]),
        topography=float(r["topography"]),
        surf_air_temp=_opt(r["surf_air_temp"]),
        trop_height=_opt(r["trop_height"]),
        temp_profile=tuple(_opt(r[v]) for v in TEMP_VARS),
        h2o_mmr=tuple(_opt(r[v]) for v in MMR_VARS),
    )


def _validate(frame: pd.DataFrame) -> None:
    dup = frame.duplicated(["lat_idx", "lon_idx", "date"])
    if dup.any():
        first = frame.loc[dup.idxmax(), ["lat_idx", "lon_idx", "date"]].tolist()
        raise DuplicateKeyError(f"duplicate (cell, date) key {first}")
    lat, lon = frame["lat_idx"], frame["lon_idx"]
    if ((lat < -90) | (lat > 89)).any() or ((lon < -180) | (lon > 179)).any():
        raise RangeError("cell index outside the 1-degree global grid")
    for col in STATIC_VARS:
        if frame[col].isna().any():
            raise RangeError(f"{col} may not be missing")
    if not frame["land_sea"].isin([0, 1]).all():
        raise RangeError("land_sea must be 0 or 1")
    temps = frame[_TEMPERATURE_VARS].to_numpy(dtype=float)
    present = ~np.isnan(temps)
    if ((temps[present] <= 0) | (temps[present] >= 400)).any():
        raise RangeError("temperature outside (0, 400) K")
    mmr = frame[MMR_VARS].to_numpy(dtype=float)
    if (mmr[~np.isnan(mmr)] < 0).any():
        raise RangeError("negative water vapor mixing ratio")


def check_variable(variable: str) -> str:
    if variable not in VARIABLES:
        raise UnknownVariableError(f"unknown variable {variable!r}")
    return variable


def from_observations(observations: Iterable[DailyObservation], **kwargs) -> Panel:
    """Build a panel from :class:`DailyObservation` records."""
    rows = []
    for o in observations:
        row = {
            "date": o.date, "lat_idx": o.cell.lat_index, "lon_idx": o.cell.lon_index,
            "latitude": o.latitude, "longitude": o.longitude, "land_sea": o.land_sea,
            "topography": o.topography,
            "surf_air_temp": np.nan if o.surf_air_temp is None else o.surf_air_temp,
            "trop_height": np.nan if o.trop_height is None else o.trop_height,
        }
        for name, v in zip(TEMP_VARS, o.temp_profile):
            row[name] = np.nan if v is None else v
        for name, v in zip(MMR_VARS, o.h2o_mmr):
            row[name] = np.nan if v is None else v
        rows.append(row)
    return Panel(pd.DataFrame(rows, columns=COLUMNS), **kwargs)


def load_panel(path: str | Path, format: str = "csv") -> Panel:
    """Read a panel CSV.

    Raises
    ------
    SchemaError
        Header does not match ``COLUMNS`` or a field cannot be parsed.
    DuplicateKeyError
        Two rows share a ``(cell, date)`` key.
    RangeError
        A value violates the observation invariants.
    """
    if format != "csv":
        raise SchemaError(f"unsupported panel format {format!r}")
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if header != COLUMNS:
        extra = sorted(set(header) - set(COLUMNS))
        missing = [c for c in COLUMNS if c not in header]
        raise SchemaError(f"bad header: missing={missing} unexpected={extra}")
    dtypes = {c: float for c in VARIABLES}
    dtypes.update(date=str, lat_idx=str, lon_idx=str)
    try:
        frame = pd.read_csv(path, dtype=dtypes, na_values=["", "NA"],
                            keep_default_na=False, float_precision="round_trip")
        frame["date"] = pd.to_datetime(frame["date"], format="%Y-%m-%d")
        frame["lat_idx"] = frame["lat_idx"].astype(np.int64)
        frame["lon_idx"] = frame["lon_idx"].astype(np.int64)
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return Panel(frame)


def write_panel(panel: Panel, path: str | Path) -> None:
    frame = panel.frame
    frame["date"] = frame["date"].dt.strftime("%Y-%m-%d")
    for col in VARIABLES:
        if col == "land_sea":
            frame[col] = frame[col].astype(int).astype(str)
            continue
        frame[col] = [("" if math.isnan(v) else repr(float(v))) for v in frame[col]]
    frame.to_csv(path, index=False, lineterminator="\n")


def select_region(panel: Panel, bbox: BBox) -> Panel:
    """Restrict to cells whose corner lies in ``bbox``."""
    f = panel._frame
    mask = bbox._mask(f["lat_idx"].to_numpy(), f["lon_idx"].to_numpy())
    if not mask.any():
        raise EmptySelectionError(f"no cell of the panel falls in {bbox}")
    if mask.all() and bbox == panel.region:
        return panel
    return Panel(f[mask], date_span=panel.date_span, region=bbox)


def _window_series(panel: Panel, variable: str, window: DateRange) -> pd.Series:
    if not panel.date_span.covers(window):
        raise WindowOutOfSpanError(f"window {window} outside panel span {panel.date_span}")
    wide = panel.wide(variable)
    cols = pd.DatetimeIndex([pd.Timestamp(d) for d in window])
    block = wide.loc[:, cols]
    means = block.mean(axis=1)
    means[block.isna().any(axis=1)] = np.nan
    return means


def window_mean(panel: Panel, variable: str, window: DateRange) -> dict[CellId, float | None]:
    """Per-cell mean of ``variable`` over ``window``.

    A cell whose value is missing on any day of the window gets ``None``.
    """
    check_variable(variable)
    s = _window_series(panel, variable, window)
    return {CellId(int(a), int(b)): (None if math.isnan(v) else float(v))
            for (a, b), v in s.items()}
