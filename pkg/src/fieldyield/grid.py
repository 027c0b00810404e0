"""Grid geometry, neighborhood sets and inverse-distance spatial weights.

All distances are measured in grid-cell units; ``cell_size`` (meters) is
carried as metadata only. Region ids are dense integers assigned to the
valid cells in row-major order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataValidationError


@dataclass(frozen=True)
class FieldGrid:
    """Rectangular grid with a validity mask over the cells under study."""

    rows: int
    cols: int
    valid: np.ndarray  # bool, shape (rows, cols)
    cell_size: float = 30.0
    region_rc: np.ndarray = field(init=False, repr=False)  # (n_regions, 2)
    rc_region: np.ndarray = field(init=False, repr=False)  # (rows, cols), -1 = masked

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DataValidationError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if self.cell_size <= 0:
            raise DataValidationError(f"cell_size must be positive, got {self.cell_size}")
        valid = np.asarray(self.valid, dtype=bool)
        if valid.shape != (self.rows, self.cols):
            raise DataValidationError(
                f"valid mask shape {valid.shape} does not match grid {self.rows}x{self.cols}"
            )
        if not valid.any():
            raise DataValidationError("grid has no valid cells")
        object.__setattr__(self, "valid", valid)
        rr, cc = np.nonzero(valid)  # row-major order
        region_rc = np.stack([rr, cc], axis=1).astype(np.int64)
        rc_region = np.full((self.rows, self.cols), -1, dtype=np.int64)
        rc_region[rr, cc] = np.arange(len(rr))
        object.__setattr__(self, "region_rc", region_rc)
        object.__setattr__(self, "rc_region", rc_region)

    @property
    def n_regions(self) -> int:
        return self.region_rc.shape[0]

    def position(self, k: int) -> tuple[int, int]:
        """(row, col) of region ``k``."""
        self._check_region(k)
        r, c = self.region_rc[k]
        return int(r), int(c)

    def region_at(self, row: int, col: int) -> int:
        """Region id of a valid cell, or -1 for a masked cell."""
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise DataValidationError(f"cell ({row}, {col}) outside {self.rows}x{self.cols} grid")
        return int(self.rc_region[row, col])

    def _check_region(self, k: int) -> None:
        if not (0 <= k < self.n_regions):
            raise DataValidationError(f"unknown region id {k} (grid has {self.n_regions} regions)")


def build_grid(rows: int, cols: int, valid_mask: Sequence[bool], cell_size: float = 30.0) -> FieldGrid:
    """Build a grid from a flat row-major validity mask."""
    mask = np.asarray(list(valid_mask), dtype=bool)
    if mask.size == 0:
        raise DataValidationError("empty validity mask")
    if mask.size != rows * cols:
        raise DataValidationError(
            f"mask has {mask.size} entries, expected rows*cols = {rows * cols}"
        )
    return FieldGrid(rows=rows, cols=cols, valid=mask.reshape(rows, cols), cell_size=cell_size)


def euclidean_distance(grid: FieldGrid, k: int, j: int) -> float:
    """Euclidean distance between two regions, in grid-cell units."""
    rk, ck = grid.position(k)
    rj, cj = grid.position(j)
    return math.sqrt(float((rk - rj) ** 2 + (ck - cj) ** 2))


def idw_weight(d: float, p: float) -> float:
    """Inverse-distance weight 1/d^p."""
    if d <= 0:
        raise DataValidationError(f"distance must be positive, got {d}")
    if p <= 0:
        raise DataValidationError(f"power must be positive, got {p}")
    return 1.0 / d**p


@dataclass(frozen=True)
class SpatialWeights:
    """Per-region neighbor lists with inverse-distance weights.

    ``neighbors`` maps every region id to a list of (neighbor id, weight)
    sorted by neighbor id. A region never lists itself.
    """

    radius: float
    power: float
    neighbors: dict[int, list[tuple[int, float]]]

    def degree(self, k: int) -> int:
        return len(self.neighbors[k])

    def pair_count(self) -> int:
        """Number of directed (k, j) pairs stored."""
        return sum(len(v) for v in self.neighbors.values())

    def restrict(self, regions: Iterable[int]) -> "SpatialWeights":
        """Sub-graph over ``regions``: drop absent regions from keys and lists."""
        keep = set(int(r) for r in regions)
        sub = {
            k: [(j, w) for j, w in lst if j in keep]
            for k, lst in self.neighbors.items()
            if k in keep
        }
        return SpatialWeights(radius=self.radius, power=self.power, neighbors=sub)


def _weight_from_d2(d2: float, p: float) -> float:
    # computed from the squared distance so p=2 gives exactly 1/(dr^2+dc^2)
    return 1.0 / d2 ** (0.5 * p)


def build_spatial_weights(grid: FieldGrid, radius: float, power: float = 2.0) -> SpatialWeights:
    """Neighborhoods G(k) = valid regions within ``radius``, IDW-weighted.

    The membership predicate is d(k,j) <= radius with Euclidean d in cell
    units; the region itself is excluded.
    """
    if radius <= 0:
        raise DataValidationError(f"radius must be positive, got {radius}")
    if power <= 0:
        raise DataValidationError(f"power must be positive, got {power}")
    r2 = float(radius) * float(radius)
    reach = int(math.floor(float(radius)))
    neighbors: dict[int, list[tuple[int, float]]] = {}
    for k in range(grid.n_regions):
        rk, ck = grid.region_rc[k]
        lst: list[tuple[int, float]] = []
        for rr in range(max(0, rk - reach), min(grid.rows, rk + reach + 1)):
            for cc in range(max(0, ck - reach), min(grid.cols, ck + reach + 1)):
                j = grid.rc_region[rr, cc]
                if j < 0 or j == k:
                    continue
                d2 = float((rk - rr) ** 2 + (ck - cc) ** 2)
                if d2 <= r2:
                    lst.append((int(j), _weight_from_d2(d2, power)))
        lst.sort(key=lambda t: t[0])
        neighbors[k] = lst
    return SpatialWeights(radius=float(radius), power=float(power), neighbors=neighbors)
