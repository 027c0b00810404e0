"""Synthetic gridded fields with known generating coefficients.

Stands in for real field data in tests and benchmarks: soil, spectral,
NDVI and weather blocks are drawn around hidden spatially smooth fertility
surfaces, and yield is an exact linear combination of the features plus
spatially smoothed noise. The combination used is returned so tests can
treat it as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FieldDataset, Season, TaskTable
from .errors import DataValidationError
from .grid import FieldGrid

SOIL_NAMES = ("soil_elev", "soil_slope", "soil_curv", "soil_eca")
FIRST_TASK_YEAR = 2001


@dataclass(frozen=True)
class SynthTruth:
    """Generating linear combination: yield = sum_s X_s @ coef[s] + intercept
    (+ smoothed noise), in original units."""

    intercept: float
    coef: dict[str, np.ndarray]  # keys: soil, spectral, ndvi, weather
    clean_yield: dict[int, np.ndarray]  # per task, before noise


def _box_blur(a: np.ndarray, radius: int) -> np.ndarray:
    """Mean filter with window 2*radius+1, edge windows normalized by the
    cells actually covered."""
    if radius <= 0:
        return a.copy()
    out = a
    for axis in (0, 1):
        x = np.moveaxis(out, axis, 0)
        n = x.shape[0]
        cum = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
        hi = np.minimum(np.arange(n) + radius + 1, n)
        lo = np.maximum(np.arange(n) - radius, 0)
        sums = cum[hi] - cum[lo]
        counts = (hi - lo).reshape((-1,) + (1,) * (x.ndim - 1))
        out = np.moveaxis(sums / counts, 0, axis)
    return out


def _smooth_field(rng: np.random.Generator, rows: int, cols: int, radius: int) -> np.ndarray:
    """Smoothed standard noise rescaled to zero mean, unit sd."""
    f = _box_blur(rng.standard_normal((rows, cols)), radius)
    sd = f.std()
    if sd == 0:
        return np.zeros_like(f)
    return (f - f.mean()) / sd


def synth_field(
    rows: int,
    cols: int,
    n_tasks: int,
    spatial_scale: int = 2,
    noise_sd: float = 40.0,
    seed: int = 0,
) -> tuple[FieldDataset, SynthTruth]:
    """Generate a spatially autocorrelated multi-year field dataset.

    NDVI dominates the generating combination and carries a growth surface
    invisible to the other sources; late-season windows weigh more than
    early ones. Deterministic under ``seed``.
    """
    if rows < 1 or cols < 1 or n_tasks < 1:
        raise DataValidationError("rows, cols and n_tasks must be positive")
    rng = np.random.default_rng(seed)
    season = Season()
    k = season.n_windows
    grid = FieldGrid(rows=rows, cols=cols, valid=np.ones((rows, cols), dtype=bool))
    n = grid.n_regions
    rr = grid.region_rc[:, 0] / max(rows - 1, 1)
    cc = grid.region_rc[:, 1] / max(cols - 1, 1)

    def flat(field2d: np.ndarray) -> np.ndarray:
        return field2d[grid.region_rc[:, 0], grid.region_rc[:, 1]]

    # planar ramps keep the value distributions well spread; the smooth
    # noise fields add seeded local structure
    fert_base = 0.7 * (rr - cc) + 0.55 * flat(_smooth_field(rng, rows, cols, spatial_scale))

    # soil block, task-invariant
    elev = 920.0 + 6.0 * rr - 4.0 * cc + 1.5 * flat(_smooth_field(rng, rows, cols, spatial_scale))
    slope = 1.2 + 0.5 * flat(_smooth_field(rng, rows, cols, spatial_scale))
    curv = 0.15 * flat(_smooth_field(rng, rows, cols, spatial_scale))
    eca = 24.0 + 6.0 * fert_base + 1.5 * flat(_smooth_field(rng, rows, cols, spatial_scale))
    soil = np.column_stack([elev, slope, curv, eca])

    # season shape for NDVI: greenness rises then falls over the windows
    w_idx = np.arange(1, k + 1)
    green = np.sin(np.pi * (w_idx - 0.5) / k)

    tables: dict[int, TaskTable] = {}
    tasks = tuple(FIRST_TASK_YEAR + i for i in range(n_tasks))
    for t in tasks:
        fert_t = 0.8 * fert_base + 0.2 * flat(_smooth_field(rng, rows, cols, spatial_scale))
        growth_t = flat(_smooth_field(rng, rows, cols, spatial_scale))

        bands = []
        for _ in range(4):
            own = flat(_smooth_field(rng, rows, cols, spatial_scale))
            bands.append(0.10 + 0.020 * fert_t + 0.012 * own)
        spectral = np.column_stack(bands)

        # per-window measurement noise is deliberately rough across cells:
        # the spatial regularizer's anchor on neighboring actual yields is
        # what suppresses it downstream
        rough = 0.04 * rng.standard_normal((n, k))
        ndvi = 0.18 + green[None, :] * (0.22 + 0.12 * fert_t[:, None] + 0.06 * growth_t[:, None])
        ndvi = ndvi + rough

        temp = 24.0 + 5.0 * green + rng.normal(0.0, 0.8, size=k)
        rain = np.maximum(0.0, 1.8 + rng.normal(0.0, 0.9, size=k))

        tables[t] = TaskTable(
            regions=np.arange(n, dtype=np.int64),
            soil=soil.copy(),
            spectral=spectral,
            ndvi=ndvi,
            temp=temp,
            rain=rain,
            yields=np.zeros(n),  # filled below
        )

    # generating combination, original units; NDVI dominant with weight
    # growing over the season
    coef = {
        "soil": np.array([1.0, 12.0, 10.0, 14.0]),
        "spectral": np.array([220.0, -180.0, 160.0, 240.0]),
        "ndvi": 820.0 * (0.35 + 0.65 * w_idx / k),
        "weather": np.concatenate([np.full(k, 1.5), np.full(k, 3.0)]),
    }
    intercept = -700.0

    clean = {}
    for t in tasks:
        tab = tables[t]
        weather = np.concatenate([tab.temp, tab.rain])
        y = (
            intercept
            + tab.soil @ coef["soil"]
            + tab.spectral @ coef["spectral"]
            + tab.ndvi @ coef["ndvi"]
            + np.full(n, weather @ coef["weather"])
        )
        clean[t] = y
        # lightly smoothed: neighbors share part of the noise but keep a
        # cell-level component
        noise = noise_sd * flat(_smooth_field(rng, rows, cols, 1)) if noise_sd > 0 else 0.0
        tables[t] = TaskTable(
            regions=tab.regions,
            soil=tab.soil,
            spectral=tab.spectral,
            ndvi=tab.ndvi,
            temp=tab.temp,
            rain=tab.rain,
            yields=y + noise,
        )

    dataset = FieldDataset(
        grid=grid,
        season=season,
        soil_names=SOIL_NAMES,
        tasks=tasks,
        tables=tables,
    )
    return dataset, SynthTruth(intercept=intercept, coef=coef, clean_yield=clean)


def default_benchmark(seed: int) -> tuple[FieldDataset, SynthTruth]:
    """The 20x20, 3-task synthetic benchmark used by the experiment suite."""
    return synth_field(rows=20, cols=20, n_tasks=3, spatial_scale=2, noise_sd=25.0, seed=seed)
