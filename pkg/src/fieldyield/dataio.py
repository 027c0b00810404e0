"""Field CSV loading/writing and the plain-text run configuration.

Field CSV: UTF-8 with a header row, one row per (task, region):

    task,region,row,col,yield,soil_*...,band1..band4,ndvi_01..ndvi_NN,
    temp_01..temp_NN,rain_01..rain_NN

NN is the number of biweekly windows. An empty ``yield`` cell marks a
prediction-only row. Region ids must be the dense row-major numbering of
the valid grid cells. The sidecar config is a ``key = value`` text file.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, fields as dc_fields, replace
from pathlib import Path

import numpy as np

from .data import N_SPECTRAL, FieldDataset, Season, TaskTable
from .errors import DataValidationError
from .grid import FieldGrid

_FIXED_COLUMNS = ("task", "region", "row", "col", "yield")


def _windowed_columns(header: list[str], prefix: str) -> list[str]:
    pat = re.compile(rf"^{prefix}_(\d+)$")
    found = {}
    for name in header:
        m = pat.match(name)
        if m:
            found[int(m.group(1))] = name
    if not found:
        raise DataValidationError(f"no {prefix}_NN columns in header")
    nn = max(found)
    missing = sorted(set(range(1, nn + 1)) - set(found))
    if missing:
        raise DataValidationError(f"{prefix}_NN columns not contiguous, missing indices {missing}")
    return [found[i] for i in range(1, nn + 1)]


def _parse_float(value: str, line: int, column: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataValidationError(f"line {line}: non-numeric value {value!r} in column {column}")


def _parse_int(value: str, line: int, column: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise DataValidationError(f"line {line}: non-integer value {value!r} in column {column}")


def load_field_csv(path: str | Path, season: Season | None = None) -> FieldDataset:
    """Load and fully validate a field CSV into a dataset."""
    path = Path(path)
    season = season or Season()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty file")
        rows = [(i + 2, row) for i, row in enumerate(reader) if row]

    seen = set()
    for name in header:
        if name in seen:
            raise DataValidationError(f"duplicate column {name!r}")
        seen.add(name)
    missing = [c for c in _FIXED_COLUMNS if c not in header]
    if missing:
        raise DataValidationError(f"missing required columns: {missing}")
    soil_cols = [c for c in header if c.startswith("soil_")]
    if not soil_cols:
        raise DataValidationError("no soil_* columns in header")
    band_cols = [f"band{i}" for i in range(1, N_SPECTRAL + 1)]
    missing = [c for c in band_cols if c not in header]
    if missing:
        raise DataValidationError(f"missing spectral columns: {missing}")
    ndvi_cols = _windowed_columns(header, "ndvi")
    temp_cols = _windowed_columns(header, "temp")
    rain_cols = _windowed_columns(header, "rain")
    if not (len(ndvi_cols) == len(temp_cols) == len(rain_cols)):
        raise DataValidationError(
            f"window counts disagree: {len(ndvi_cols)} ndvi, "
            f"{len(temp_cols)} temp, {len(rain_cols)} rain"
        )
    if len(ndvi_cols) != season.n_windows:
        raise DataValidationError(
            f"{len(ndvi_cols)} biweekly windows in file, season defines {season.n_windows}"
        )
    col_idx = {name: header.index(name) for name in header}

    region_cell: dict[int, tuple[int, int]] = {}
    per_task: dict[int, dict[int, tuple[int, list]]] = {}
    for line, row in rows:
        if len(row) != len(header):
            raise DataValidationError(f"line {line}: {len(row)} cells, header has {len(header)}")

        def cell(name: str) -> str:
            return row[col_idx[name]].strip()

        task = _parse_int(cell("task"), line, "task")
        region = _parse_int(cell("region"), line, "region")
        r = _parse_int(cell("row"), line, "row")
        c = _parse_int(cell("col"), line, "col")
        if region in region_cell and region_cell[region] != (r, c):
            raise DataValidationError(
                f"line {line}: region {region} at ({r}, {c}) but previously at "
                f"{region_cell[region]}"
            )
        region_cell[region] = (r, c)
        y_raw = cell("yield")
        y = float("nan") if y_raw == "" else _parse_float(y_raw, line, "yield")
        soil = [_parse_float(cell(n), line, n) for n in soil_cols]
        spectral = [_parse_float(cell(n), line, n) for n in band_cols]
        ndvi_v = [_parse_float(cell(n), line, n) for n in ndvi_cols]
        temp_v = [_parse_float(cell(n), line, n) for n in temp_cols]
        rain_v = [_parse_float(cell(n), line, n) for n in rain_cols]
        task_rows = per_task.setdefault(task, {})
        if region in task_rows:
            raise DataValidationError(
                f"line {line}: duplicate row for task {task}, region {region} "
                f"(first at line {task_rows[region][0]})"
            )
        task_rows[region] = (line, [y, soil, spectral, ndvi_v, temp_v, rain_v])

    if not region_cell:
        raise DataValidationError(f"{path}: no data rows")
    cells = set(region_cell.values())
    if len(cells) != len(region_cell):
        raise DataValidationError("two region ids share one (row, col) cell")
    n_rows = max(r for r, _ in cells) + 1
    n_cols = max(c for _, c in cells) + 1
    mask = np.zeros((n_rows, n_cols), dtype=bool)
    for r, c in cells:
        mask[r, c] = True
    grid = FieldGrid(rows=n_rows, cols=n_cols, valid=mask)
    for region, (r, c) in region_cell.items():
        expected = grid.region_at(r, c)
        if region != expected:
            raise DataValidationError(
                f"region {region} at ({r}, {c}) must carry row-major dense id {expected}"
            )

    tables = {}
    for task in sorted(per_task):
        task_rows = per_task[task]
        regions = np.array(sorted(task_rows), dtype=np.int64)
        first_line, first = task_rows[int(regions[0])]
        temp = np.array(first[4])
        rain = np.array(first[5])
        for region in regions:
            line, vals = task_rows[int(region)]
            if not (np.array_equal(np.array(vals[4]), temp) and np.array_equal(np.array(vals[5]), rain)):
                raise DataValidationError(
                    f"line {line}: weather differs from line {first_line}; weather "
                    f"must be identical across all regions of task {task}"
                )
        tables[task] = TaskTable(
            regions=regions,
            soil=np.array([task_rows[int(g)][1][1] for g in regions], dtype=float),
            spectral=np.array([task_rows[int(g)][1][2] for g in regions], dtype=float),
            ndvi=np.array([task_rows[int(g)][1][3] for g in regions], dtype=float),
            temp=temp.astype(float),
            rain=rain.astype(float),
            yields=np.array([task_rows[int(g)][1][0] for g in regions], dtype=float),
        )
    return FieldDataset(
        grid=grid,
        season=season,
        soil_names=tuple(soil_cols),
        tasks=tuple(sorted(per_task)),
        tables=tables,
    )


def write_field_csv(dataset: FieldDataset, path: str | Path) -> None:
    """Write a dataset back to the field CSV format (full float precision)."""
    path = Path(path)
    k = dataset.n_windows
    header = (
        list(_FIXED_COLUMNS)
        + list(dataset.soil_names)
        + [f"band{i}" for i in range(1, N_SPECTRAL + 1)]
        + [f"ndvi_{i:02d}" for i in range(1, k + 1)]
        + [f"temp_{i:02d}" for i in range(1, k + 1)]
        + [f"rain_{i:02d}" for i in range(1, k + 1)]
    )
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for task in dataset.tasks:
            tab = dataset.tables[task]
            for i, region in enumerate(tab.regions):
                r, c = dataset.grid.position(int(region))
                y = tab.yields[i]
                row = [task, int(region), r, c, "" if np.isnan(y) else repr(float(y))]
                row += [repr(float(v)) for v in tab.soil[i]]
                row += [repr(float(v)) for v in tab.spectral[i]]
                row += [repr(float(v)) for v in tab.ndvi[i]]
                row += [repr(float(v)) for v in tab.temp]
                row += [repr(float(v)) for v in tab.rain]
                writer.writerow(row)


@dataclass(frozen=True)
class RunConfig:
    """Knobs shared by the CLI and the experiment harness.

    Every key can appear in a ``key = value`` sidecar config file and be
    overridden by a command-line flag.
    """

    season_start: str = "05-01"
    season_end: str = "09-30"
    radius: float = 5.0
    power: float = 2.0
    lam: float = 0.1
    neighbor_target: str = "actual"
    extractor_width: int = 16
    shared_width: int = 32
    head_widths: tuple[int, ...] = (32, 16)
    dropout: float = 0.2
    optimizer: str = "adam"
    learning_rate: float = 0.02
    epochs: int = 2000
    early_stop_patience: int = 50
    test_fraction: float = 0.2
    val_fraction: float = 0.2
    ridge: float = 1e-8
    tree_max_depth: int = 8
    tree_min_samples_leaf: int = 5

    def season(self) -> Season:
        return Season(start=_parse_month_day(self.season_start), end=_parse_month_day(self.season_end))


def _parse_month_day(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d{1,2})-(\d{1,2})", text.strip())
    if not m:
        raise DataValidationError(f"expected MM-DD date, got {text!r}")
    return int(m.group(1)), int(m.group(2))


_CONFIG_PARSERS = {
    "season_start": str,
    "season_end": str,
    "radius": float,
    "power": float,
    "lam": float,
    "neighbor_target": str,
    "extractor_width": int,
    "shared_width": int,
    "head_widths": lambda v: tuple(int(x) for x in v.split(",") if x.strip()),
    "dropout": float,
    "optimizer": str,
    "learning_rate": float,
    "epochs": int,
    "early_stop_patience": int,
    "test_fraction": float,
    "val_fraction": float,
    "ridge": float,
    "tree_max_depth": int,
    "tree_min_samples_leaf": int,
}


def load_run_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    """Parse a ``key = value`` config file on top of ``base`` (or defaults).

    Blank lines and ``#`` comments are ignored; unknown keys are rejected.
    """
    cfg = base or RunConfig()
    known = {f.name for f in dc_fields(RunConfig)}
    updates = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataValidationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise DataValidationError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            updates[key] = _CONFIG_PARSERS[key](value)
        except ValueError:
            raise DataValidationError(f"{path}:{lineno}: bad value {value!r} for {key}")
    return replace(cfg, **updates)
