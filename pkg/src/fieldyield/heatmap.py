"""Within-field heatmap export: a row-major values CSV (masked cells
empty) and a binary 8-bit portable graymap where darker pixels mean
higher values."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataValidationError
from .grid import FieldGrid


def _values_array(grid: FieldGrid, values) -> np.ndarray:
    if isinstance(values, Mapping):
        missing = [k for k in range(grid.n_regions) if k not in values]
        if missing:
            raise DataValidationError(f"values missing for regions {missing}")
        arr = np.array([float(values[k]) for k in range(grid.n_regions)])
    else:
        arr = np.asarray(values, dtype=float)
        if arr.shape != (grid.n_regions,):
            raise DataValidationError(
                f"expected one value per region ({grid.n_regions}), got shape {arr.shape}"
            )
    if not np.all(np.isfinite(arr)):
        raise DataValidationError("heatmap values must be finite")
    return arr


def export_heatmap(grid: FieldGrid, values, base_path: str | Path) -> tuple[Path, Path]:
    """Write ``<base>.pgm`` and ``<base>.csv`` for one value per region.

    Pixel levels are min-max scaled: level = 255 - round(255*(v-min)/(max-min)),
    so the highest value renders darkest; masked cells render white (255).
    A constant field maps to mid-gray. The mapping is recorded in the PGM
    comment header.
    """
    base = Path(base_path)
    arr = _values_array(grid, values)
    lo = float(arr.min())
    hi = float(arr.max())
    if hi > lo:
        scaled = (arr - lo) / (hi - lo)
    else:
        scaled = np.full_like(arr, 0.5)
    levels = 255 - np.rint(255.0 * scaled).astype(int)
    image = np.full((grid.rows, grid.cols), 255, dtype=np.uint8)
    image[grid.region_rc[:, 0], grid.region_rc[:, 1]] = np.clip(levels, 0, 255).astype(np.uint8)

    pgm_path = base.with_suffix(".pgm")
    csv_path = base.with_suffix(".csv")
    header = (
        b"P5\n"
        b"# level = 255 - round(255*(value-min)/(max-min)); darker = higher\n"
        b"# masked cells = 255 (white); constant fields = 128\n"
        + f"# min={lo!r} max={hi!r}\n".encode()
        + f"{grid.cols} {grid.rows}\n255\n".encode()
    )
    pgm_path.write_bytes(header + image.tobytes())

    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for r in range(grid.rows):
            row = []
            for c in range(grid.cols):
                k = grid.rc_region[r, c]
                row.append(repr(float(arr[k])) if k >= 0 else "")
            writer.writerow(row)
    return pgm_path, csv_path


def read_heatmap_csv(path: str | Path) -> np.ndarray:
    """Re-ingest an exported values CSV; masked cells come back as NaN."""
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            rows.append([float("nan") if cell == "" else float(cell) for cell in row])
    if not rows:
        raise DataValidationError(f"{path}: empty heatmap CSV")
    return np.array(rows, dtype=float)
