"""Per-time discretisation points and the induced box partition of the
truncated state space."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .market_data import MarketSnapshot


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    points: Tuple[np.ndarray, ...]

    def __post_init__(self):
        pts = tuple(np.asarray(p, dtype=float) for p in self.points)
        if not pts:
            raise GridError("grid needs at least one time index")
        for i, p in enumerate(pts):
            if p.ndim != 1 or p.size < 2:
                raise GridError(f"time {i + 1}: need at least two points")
            if np.any(np.diff(p) <= 0):
                raise GridError(f"time {i + 1}: points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @property
    def n_times(self) -> int:
        return len(self.points)

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(p.size for p in self.points)

    @property
    def cell_shape(self) -> Tuple[int, ...]:
        return tuple(p.size - 1 for p in self.points)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cell_shape))

    @property
    def lower(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def upper(self) -> np.ndarray:
        return np.array([p[-1] for p in self.points])

    def has_point(self, time_index: int, value: float, rtol: float = 1e-12) -> bool:
        p = self.points[time_index - 1]
        return bool(np.any(np.abs(p - value) <= rtol * max(1.0, abs(value))))

    def contains(self, x: np.ndarray, atol: float = 1e-9) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lower - atol) & (x <= self.upper + atol), axis=1)

    def locate(self, x: np.ndarray) -> np.ndarray:
        """Multi-index (0-based) of the owning cell; points on shared faces go
        to the lowest index."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = np.empty(x.shape, dtype=np.int64)
        for i, p in enumerate(self.points):
            j = np.searchsorted(p, x[:, i], side="left") - 1
            idx[:, i] = np.clip(j, 0, p.size - 2)
        return idx

    def flat_index(self, multi: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(multi).T), self.cell_shape)

    def cell_indices(self) -> np.ndarray:
        """All cell multi-indices in lexicographic order, shape (C, n)."""
        grids = np.indices(self.cell_shape).reshape(self.n_times, -1).T
        return grids.astype(np.int64)

    def cell_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        idx = self.cell_indices()
        lo = np.column_stack([p[idx[:, i]] for i, p in enumerate(self.points)])
        hi = np.column_stack([p[idx[:, i] + 1] for i, p in enumerate(self.points)])
        return lo, hi

    def vertex_points(self) -> np.ndarray:
        """Product set of all grid points, shape (prod n_i, n)."""
        mesh = np.meshgrid(*self.points, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def bisect(self, times: int = 1) -> "Grid":
        pts = self.points
        for _ in range(times):
            pts = tuple(np.sort(np.concatenate([p, 0.5 * (p[1:] + p[:-1])])) for p in pts)
        return Grid(pts)

    def to_json(self) -> dict:
        return {"points": [p.tolist() for p in self.points]}

    @classmethod
    def from_json(cls, data) -> "Grid":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(tuple(np.array(p, dtype=float) for p in data["points"]))

    def summary(self) -> dict:
        return {"n_times": self.n_times, "points_per_time": list(self.sizes), "cells": self.n_cells}


@dataclass(frozen=True)
class Cell:
    index: Tuple[int, ...]
    lower: np.ndarray
    upper: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.index)

    @property
    def inequalities(self) -> Tuple[np.ndarray, np.ndarray]:
        """``(F, l)`` with the cell equal to ``{x : F x >= l}``; rows ordered
        per coordinate as (lower face, upper face)."""
        n = self.dim
        F = np.zeros((2 * n, n))
        ell = np.zeros(2 * n)
        for i in range(n):
            F[2 * i, i] = 1.0
            ell[2 * i] = self.lower[i]
            F[2 * i + 1, i] = -1.0
            ell[2 * i + 1] = -self.upper[i]
        return F, ell

    @property
    def vertices(self) -> np.ndarray:
        return box_corners(self.lower, self.upper)

    @property
    def barycenter(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x: np.ndarray, atol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))


def box_corners(lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """The 2^n corners, bit i of the row number selecting lower/upper in coordinate i."""
    n = len(lower)
    bits = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1
    return np.where(bits == 1, upper, lower).astype(float)


ExtraPoints = Union[None, Sequence[float], Sequence[Sequence[float]]]


def _per_time(extra: ExtraPoints, n: int) -> List[List[float]]:
    if extra is None:
        return [[] for _ in range(n)]
    extra = list(extra)
    if extra and all(np.ndim(e) == 0 for e in extra):
        return [[float(e) for e in extra] for _ in range(n)]
    if len(extra) != n:
        raise GridError(f"extra points given for {len(extra)} times, expected {n}")
    return [[float(e) for e in row] for row in extra]


def build_grid(snapshot: MarketSnapshot, extra_points: ExtraPoints = None,
               lower: Optional[float] = None, upper: Optional[float] = None,
               refine: int = 0) -> Grid:
    """Merge state bounds, quoted strikes and extra points (e.g. barriers).

    ``extra_points`` is either one flat sequence applied to every time or one
    sequence per time.  ``lower``/``upper`` override the snapshot's box.
    """
    n = snapshot.n_times
    lo = snapshot.state_lower_bound if lower is None else float(lower)
    hi = snapshot.state_upper_bound if upper is None else float(upper)
    extras = _per_time(extra_points, n)
    pts = []
    for i in range(1, n + 1):
        for e in extras[i - 1]:
            if not lo <= e <= hi:
                raise GridError(f"extra point {e:g} outside state box [{lo:g}, {hi:g}]")
        ks = [k for k in snapshot.strikes(i)]
        for k in ks:
            if not lo < k < hi:
                raise GridError(f"strike {k:g} outside state box [{lo:g}, {hi:g}]")
        pts.append(np.unique(np.array([lo, hi, *ks, *extras[i - 1]], dtype=float)))
    grid = Grid(tuple(pts))
    return grid.bisect(refine) if refine else grid


def cells(grid: Grid) -> Iterator[Cell]:
    """Cells in lexicographic multi-index order."""
    for idx in itertools.product(*(range(s) for s in grid.cell_shape)):
        lo = np.array([p[j] for p, j in zip(grid.points, idx)])
        hi = np.array([p[j + 1] for p, j in zip(grid.points, idx)])
        yield Cell(tuple(idx), lo, hi)


@dataclass(frozen=True)
class Box:
    """A k-dimensional box of adjacent grid points over the first k times."""

    index: Tuple[int, ...]
    lower: np.ndarray
    upper: np.ndarray

    @property
    def k(self) -> int:
        return len(self.index)


def adjacent_boxes_upto(grid: Grid, k: int) -> List[Box]:
    """All products of adjacent-point intervals over times 1..k; there are
    prod_{i<=k} (n_i - 1) of them."""
    if not 1 <= k <= grid.n_times - 1:
        raise GridError(f"k must lie in 1..{grid.n_times - 1}, got {k}")
    shape = grid.cell_shape[:k]
    out = []
    for idx in itertools.product(*(range(s) for s in shape)):
        lo = np.array([grid.points[i][j] for i, j in enumerate(idx)])
        hi = np.array([grid.points[i][j + 1] for i, j in enumerate(idx)])
        out.append(Box(tuple(idx), lo, hi))
    return out
