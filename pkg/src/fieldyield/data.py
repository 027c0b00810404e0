"""Field datasets: feature blocks per task and region, normalization,
seasonal windowing, month truncation and train/test splitting.

A dataset groups, for each task (crop year), per-region feature blocks
from four sources: soil (task-invariant per region), spectral (four
pre-planting bands), ndvi (one value per biweekly window) and weather
(biweekly temperature/rainfall means shared by all regions of a task).
"""

from __future__ import annotations

import calendar
import datetime as dt
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataValidationError
from .grid import FieldGrid

SOURCE_ORDER = ("soil", "spectral", "ndvi", "weather")
N_SPECTRAL = 4

# reference year for season date arithmetic; seasons must not span February,
# so leap years never change window layout
REF_YEAR = 2001


def ndvi(nir, red):
    """Normalized difference vegetation index (nir - red)/(nir + red)."""
    nir_a = np.asarray(nir, dtype=float)
    red_a = np.asarray(red, dtype=float)
    if np.any(nir_a < 0) or np.any(red_a < 0):
        raise DataValidationError("reflectances must be nonnegative")
    total = nir_a + red_a
    if np.any(total == 0):
        raise DataValidationError("ndvi undefined where nir + red = 0")
    out = (nir_a - red_a) / total
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Season:
    """Growing season, as (month, day) endpoints applied to any task year."""

    start: tuple[int, int] = (5, 1)
    end: tuple[int, int] = (9, 30)

    def __post_init__(self):
        if self.start_date() > self.end_date():
            raise DataValidationError(f"season start {self.start} after end {self.end}")

    def start_date(self) -> dt.date:
        return dt.date(REF_YEAR, *self.start)

    def end_date(self) -> dt.date:
        return dt.date(REF_YEAR, *self.end)

    def windows(self) -> list[tuple[dt.date, dt.date]]:
        """Consecutive 14-day windows from the season start.

        The trailing window is shortened to the season end when fewer than
        14 days remain.
        """
        out = []
        start = self.start_date()
        end = self.end_date()
        while start <= end:
            w_end = min(start + dt.timedelta(days=13), end)
            out.append((start, w_end))
            start = w_end + dt.timedelta(days=1)
        return out

    @property
    def n_windows(self) -> int:
        return len(self.windows())

    def windows_through_month(self, month: int) -> int:
        """Number of windows whose end date falls on or before the last day
        of ``month``. The month must lie inside the season."""
        if not (self.start[0] <= month <= self.end[0]):
            raise DataValidationError(
                f"month {month} outside season months {self.start[0]}..{self.end[0]}"
            )
        cutoff = dt.date(REF_YEAR, month, calendar.monthrange(REF_YEAR, month)[1])
        return sum(1 for _, w_end in self.windows() if w_end <= cutoff)


def biweekly_aggregate(
    daily: Sequence[tuple[dt.date, float, float]], season_start: dt.date
) -> np.ndarray:
    """Average dated daily (temperature, rainfall) readings into consecutive
    14-day windows starting at ``season_start``.

    Returns an array of shape (n_windows, 2) holding (mean temperature,
    mean rainfall) per window; a trailing partial window is averaged over
    the days actually present.
    """
    if len(daily) == 0:
        raise DataValidationError("empty daily weather sequence")
    last = max(d for d, _, _ in daily)
    n_win = (last - season_start).days // 14 + 1
    sums = np.zeros((n_win, 2))
    counts = np.zeros(n_win, dtype=int)
    for d, temp, rain in daily:
        offset = (d - season_start).days
        if offset < 0:
            raise DataValidationError(f"daily reading {d} precedes season start {season_start}")
        w = offset // 14
        sums[w, 0] += float(temp)
        sums[w, 1] += float(rain)
        counts[w] += 1
    if np.any(counts == 0):
        gap = int(np.nonzero(counts == 0)[0][0])
        raise DataValidationError(f"no daily readings in biweekly window {gap}")
    return sums / counts[:, None]


@dataclass(frozen=True)
class NormParams:
    """Per-column min-max parameters in original units.

    Constant columns keep lo == hi but normalize against a denominator
    clamped to 1, so they map to 0 and denormalize back exactly.
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DataValidationError("lo/hi must be matching 1-d arrays")
        if np.any(hi < lo):
            raise DataValidationError("max below min in normalization parameters")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def denom(self) -> np.ndarray:
        span = self.hi - self.lo
        return np.where(span > 0, span, 1.0)

    def slice(self, n: int) -> "NormParams":
        return NormParams(self.lo[:n], self.hi[:n])


def _scalar_params(values: np.ndarray, params: NormParams, what: str) -> bool:
    """Single-parameter sets apply elementwise; otherwise the trailing axis
    must match the column count."""
    if params.lo.size == 1:
        return True
    if values.ndim == 0 or values.shape[-1] != params.lo.size:
        width = 1 if values.ndim == 0 else values.shape[-1]
        raise DataValidationError(
            f"{what}: {width} columns do not match {params.lo.size} normalization parameters"
        )
    return False


def normalize_values(values, params: NormParams) -> np.ndarray:
    """Map original-unit columns to [0,1] via (x - min)/(max - min)."""
    x = np.asarray(values, dtype=float)
    if _scalar_params(x, params, "normalize"):
        return (x - params.lo[0]) / params.denom[0]
    return (x - params.lo) / params.denom


def denormalize(values, params: NormParams) -> np.ndarray:
    """Recover original units from [0,1]-normalized columns."""
    x = np.asarray(values, dtype=float)
    if _scalar_params(x, params, "denormalize"):
        return x * params.denom[0] + params.lo[0]
    return x * params.denom + params.lo


def fit_norm_params(values: np.ndarray) -> NormParams:
    x = np.asarray(values, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    finite = np.isfinite(x)
    if not finite.any(axis=0).all():
        raise DataValidationError("cannot fit normalization on an all-missing column")
    lo = np.nanmin(np.where(finite, x, np.nan), axis=0)
    hi = np.nanmax(np.where(finite, x, np.nan), axis=0)
    return NormParams(lo, hi)


@dataclass(frozen=True)
class TaskTable:
    """Per-task feature blocks, rows aligned with ``regions``."""

    regions: np.ndarray  # (n,) region ids, ascending
    soil: np.ndarray  # (n, n_soil)
    spectral: np.ndarray  # (n, 4)
    ndvi: np.ndarray  # (n, k)
    temp: np.ndarray  # (k,) shared across regions
    rain: np.ndarray  # (k,)
    yields: np.ndarray  # (n,), NaN marks prediction-only rows

    def __post_init__(self):
        n = self.regions.shape[0]
        for name in ("soil", "spectral", "ndvi", "yields"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise DataValidationError(f"{name} block has {arr.shape[0]} rows, expected {n}")
        if self.ndvi.shape[1] != self.temp.shape[0] or self.temp.shape != self.rain.shape:
            raise DataValidationError("ndvi/temp/rain window counts disagree")

    @property
    def n_samples(self) -> int:
        return self.regions.shape[0]

    @property
    def n_windows(self) -> int:
        return self.ndvi.shape[1]

    def take(self, idx: np.ndarray) -> "TaskTable":
        return TaskTable(
            regions=self.regions[idx],
            soil=self.soil[idx],
            spectral=self.spectral[idx],
            ndvi=self.ndvi[idx],
            temp=self.temp.copy(),
            rain=self.rain.copy(),
            yields=self.yields[idx],
        )

    def truncate_windows(self, keep: int) -> "TaskTable":
        """Keep only the first ``keep`` biweekly windows of ndvi/weather."""
        return TaskTable(
            regions=self.regions.copy(),
            soil=self.soil.copy(),
            spectral=self.spectral.copy(),
            ndvi=self.ndvi[:, :keep].copy(),
            temp=self.temp[:keep].copy(),
            rain=self.rain[:keep].copy(),
            yields=self.yields.copy(),
        )


@dataclass(frozen=True)
class FieldDataset:
    """All tasks of one field, plus grid, season and (optionally) the
    normalization parameters the values were mapped with."""

    grid: FieldGrid
    season: Season
    soil_names: tuple[str, ...]
    tasks: tuple[int, ...]
    tables: dict[int, TaskTable]
    norm: dict[str, NormParams] | None = None

    def __post_init__(self):
        if tuple(sorted(self.tasks)) != self.tasks:
            raise DataValidationError("tasks must be sorted ascending")
        if set(self.tasks) != set(self.tables):
            raise DataValidationError("tasks and tables disagree")
        widths = {self.tables[t].n_windows for t in self.tasks}
        if len(widths) > 1:
            raise DataValidationError(f"window counts differ across tasks: {sorted(widths)}")

    @property
    def n_windows(self) -> int:
        return self.tables[self.tasks[0]].n_windows

    @property
    def n_soil(self) -> int:
        return len(self.soil_names)

    def source_dims(self, sources: Sequence[str] = SOURCE_ORDER) -> dict[str, int]:
        dims = {
            "soil": self.n_soil,
            "spectral": N_SPECTRAL,
            "ndvi": self.n_windows,
            "weather": 2 * self.n_windows,
        }
        return {s: dims[s] for s in sources}

    def model_inputs(self, task: int, sources: Sequence[str] = SOURCE_ORDER) -> dict[str, np.ndarray]:
        """Per-source feature matrices for one task, weather broadcast to
        one row per region as (temp windows, rain windows)."""
        table = self.tables[task]
        weather = np.concatenate([table.temp, table.rain])
        blocks = {
            "soil": table.soil,
            "spectral": table.spectral,
            "ndvi": table.ndvi,
            "weather": np.broadcast_to(weather, (table.n_samples, weather.size)),
        }
        return {s: blocks[s] for s in sources}

    def denormalize_yield(self, values) -> np.ndarray:
        if self.norm is None or "yield" not in self.norm:
            raise DataValidationError("dataset carries no yield normalization parameters")
        return denormalize(values, self.norm["yield"])


def normalize_dataset(
    dataset: FieldDataset, params: dict[str, NormParams] | None = None
) -> tuple[FieldDataset, dict[str, NormParams]]:
    """Min-max normalize every feature block and the target.

    Without ``params`` the statistics are fitted from ``dataset`` itself
    (call this on the training split); pass the returned parameters to map
    other splits with training statistics only.
    """
    if dataset.norm is not None:
        raise DataValidationError("dataset is already normalized")
    tasks = dataset.tasks
    if params is None:
        params = {
            "soil": fit_norm_params(np.vstack([dataset.tables[t].soil for t in tasks])),
            "spectral": fit_norm_params(np.vstack([dataset.tables[t].spectral for t in tasks])),
            "ndvi": fit_norm_params(np.vstack([dataset.tables[t].ndvi for t in tasks])),
            "temp": fit_norm_params(np.stack([dataset.tables[t].temp for t in tasks])),
            "rain": fit_norm_params(np.stack([dataset.tables[t].rain for t in tasks])),
            "yield": fit_norm_params(np.concatenate([dataset.tables[t].yields for t in tasks])),
        }
    tables = {}
    for t in tasks:
        tab = dataset.tables[t]
        tables[t] = TaskTable(
            regions=tab.regions.copy(),
            soil=normalize_values(tab.soil, params["soil"]),
            spectral=normalize_values(tab.spectral, params["spectral"]),
            ndvi=normalize_values(tab.ndvi, params["ndvi"]),
            temp=normalize_values(tab.temp, params["temp"]),
            rain=normalize_values(tab.rain, params["rain"]),
            yields=normalize_values(tab.yields, params["yield"]),
        )
    return replace(dataset, tables=tables, norm=dict(params)), dict(params)


def truncate_to_month(dataset: FieldDataset, month: int) -> FieldDataset:
    """Cut NDVI and weather sequences to the biweekly windows that end on or
    before the last day of ``month``. Soil and spectral blocks are untouched."""
    keep = dataset.season.windows_through_month(month)
    keep = min(keep, dataset.n_windows)
    tables = {t: dataset.tables[t].truncate_windows(keep) for t in dataset.tasks}
    norm = dataset.norm
    if norm is not None:
        norm = dict(norm)
        for key in ("ndvi", "temp", "rain"):
            norm[key] = norm[key].slice(keep)
    return replace(dataset, tables=tables, norm=norm)


def train_test_split(
    dataset: FieldDataset, test_fraction: float, seed: int
) -> tuple[FieldDataset, FieldDataset]:
    """Per-task random split of regions, deterministic under ``seed``.

    Each task's regions are split independently; the two parts are disjoint
    and exhaustive.
    """
    if not (0 <= test_fraction < 1):
        raise DataValidationError(f"test fraction must be in [0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_tables = {}
    test_tables = {}
    for t in dataset.tasks:
        tab = dataset.tables[t]
        n = tab.n_samples
        n_test = int(round(n * test_fraction))
        perm = rng.permutation(n)
        test_idx = np.sort(perm[:n_test])
        train_idx = np.sort(perm[n_test:])
        train_tables[t] = tab.take(train_idx)
        test_tables[t] = tab.take(test_idx)
    train = replace(dataset, tables=train_tables)
    test = replace(dataset, tables=test_tables)
    return train, test
