"""Measure-side oracle: the discretised primal program over atomic measures.

Built independently of :mod:`mfbounds.dual` from the grid and the payoff
functions only, so that comparing the two optima is a real check.

An atom is a vertex of a piece of the payoff partition, tagged with the
cell it belongs to.  Functions that jump across cell faces (barrier payoffs,
the box-indicator martingale tests) take the value of the tagged piece, so a
grid point shared by several cells may carry several atoms.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .grid import Grid
from .lp import LinearProgram
from .market_data import MarketSnapshot
from .payoffs import PiecewiseLinearFunction, build_payoff, common_refinement, polytope_vertices
from .simplex import OPTIMAL, LPSolution

DEFAULT_ATOM_CAP = 1_000_000


class PrimalError(ValueError):
    pass


def _atom_name(x: np.ndarray, cell: Sequence[int]) -> str:
    return "w[" + ",".join(repr(float(v)) for v in x) + "|" + ",".join(str(int(c)) for c in cell) + "]"


_NAME = re.compile(r"^w\[([^|]*)\|([^\]]*)\]$")


def _parse_atom(name: str) -> Tuple[np.ndarray, Tuple[int, ...]]:
    m = _NAME.match(name)
    if not m:
        raise PrimalError(f"not an atom variable: {name!r}")
    x = np.array([float(v) for v in m.group(1).split(",")])
    cell = tuple(int(v) for v in m.group(2).split(","))
    return x, cell


def build_primal(snapshot: MarketSnapshot, grid: Grid, objective: PiecewiseLinearFunction,
                 bound: str = "upper", extras: Optional[Sequence[PiecewiseLinearFunction]] = None,
                 spot: Optional[float] = None, atom_cap: int = DEFAULT_ATOM_CAP) -> LinearProgram:
    """Maximise (``upper``) or minimise (``lower``) the expected payoff over
    atomic martingale measures that reprice every quote inside its band.

    The optimum is the bound itself, with no sign flip for ``lower``.
    """
    if bound not in ("upper", "lower"):
        raise PrimalError(f"bound must be 'upper' or 'lower', got {bound!r}")
    n = grid.n_times
    if snapshot.n_times != n:
        raise PrimalError("grid and snapshot disagree on the number of times")
    if extras is None:
        extras = [build_payoff(e.payoff, grid, spot).function for e in snapshot.extras]
    extras = list(extras)
    if len(extras) != len(snapshot.extras):
        raise PrimalError("one built payoff per extra quote required")

    R = common_refinement([objective, *extras])
    lo, hi = grid.cell_bounds()
    if R.cell.size * 2 ** n > atom_cap and not any(c[0].shape[0] for c in R.cuts):
        raise PrimalError(f"{R.cell.size * 2 ** n} atoms exceed the cap of {atom_cap}; use a coarser grid")
    pts, owner = [], []
    total = 0
    for p, c in enumerate(R.cell):
        V = polytope_vertices(lo[c], hi[c], R.cuts[p])
        total += V.shape[0]
        if total > atom_cap:
            raise PrimalError(f"more than {atom_cap} atoms; use a coarser grid")
        pts.append(V)
        owner.append(np.full(V.shape[0], p))
    X = np.vstack(pts)
    piece = np.concatenate(owner)
    cell = R.cell[piece]
    multi = np.array(np.unravel_index(cell, grid.cell_shape)).T
    K = X.shape[0]

    def values(f: PiecewiseLinearFunction, m: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->i", f.grad[m][piece], X) + f.offset[m][piece]

    rows: List[np.ndarray] = []
    rel: List[str] = []
    rhs: List[float] = []
    names: List[str] = []

    def add(coef: np.ndarray, r: str, b: float, name: str) -> None:
        rows.append(coef)
        rel.append(r)
        rhs.append(b)
        names.append(name)

    for q in sorted(snapshot.quotes, key=lambda q: (q.time_index, q.strike)):
        payoff = np.maximum(X[:, q.time_index - 1] - q.strike, 0.0)
        tag = f"call_{q.time_index}_{q.strike:g}"
        if q.bid == q.ask:
            add(payoff, "=", q.bid, tag)
        else:
            add(payoff, ">=", q.bid, tag + "_bid")
            add(payoff, "<=", q.ask, tag + "_ask")
    for j, (e, f) in enumerate(zip(snapshot.extras, extras)):
        v = values(f, R.maps[1 + j])
        if e.bid == e.ask:
            add(v, "=", e.bid, f"extra_{j + 1}")
            continue
        if np.isfinite(e.bid):
            add(v, ">=", e.bid, f"extra_{j + 1}_bid")
        if np.isfinite(e.ask):
            add(v, "<=", e.ask, f"extra_{j + 1}_ask")

    blocks = []
    for k in range(1, n):
        shape = grid.cell_shape[:k]
        box = np.ravel_multi_index(tuple(multi[:, :k].T), shape)
        inc = X[:, k] - X[:, k - 1]
        M = sp.csr_matrix((inc, (box, np.arange(K))), shape=(int(np.prod(shape)), K))
        blocks.append(M)
        for b in range(M.shape[0]):
            idx = np.unravel_index(b, shape)
            names.append(f"mart_{k}_" + "-".join(str(int(i) + 1) for i in idx))
        rel.extend(["="] * M.shape[0])
        rhs.extend([0.0] * M.shape[0])
    dense = sp.csr_matrix(np.array(rows)) if rows else sp.csr_matrix((0, K))
    A = sp.vstack([dense, *blocks, sp.csr_matrix(np.ones((1, K)))], format="csc")
    rel.append("=")
    rhs.append(1.0)
    names.append("mass")

    obj = values(objective, R.maps[0])
    var_names = [_atom_name(x, m) for x, m in zip(X, multi)]
    return LinearProgram(c=obj, A=A, relations=np.array(rel, dtype=object), rhs=np.array(rhs),
                         lb=np.zeros(K), ub=np.full(K, np.inf), var_names=var_names, row_names=names,
                         sense="max" if bound == "upper" else "min", blocks={"atoms": (0, K)},
                         name=f"primal_{bound}")


@dataclass
class AtomicMeasure:
    """Weights on points of the state box; ``cells`` tags each atom with the
    multi-index of the cell whose formulas apply to it (``None`` means the
    owning cell of the point)."""

    points: np.ndarray
    weights: np.ndarray
    cells: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.points.shape[0] != self.weights.size:
            raise PrimalError("one weight per atom required")
        if np.any(self.weights < 0):
            raise PrimalError("negative weight")
        if self.cells is not None:
            self.cells = np.asarray(self.cells, dtype=np.int64).reshape(self.points.shape)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def expectation(self, f) -> float:
        return float(self.weights @ np.asarray(f(self.points), dtype=float))

    def as_dict(self) -> Dict[Tuple[float, ...], float]:
        """Weights merged by point."""
        out: Dict[Tuple[float, ...], float] = {}
        for x, w in zip(self.points, self.weights):
            key = tuple(float(v) for v in x)
            out[key] = out.get(key, 0.0) + float(w)
        return out

    def to_json(self) -> dict:
        atoms = []
        for a, (x, w) in enumerate(zip(self.points, self.weights)):
            rec = {"x": x.tolist(), "w": float(w)}
            if self.cells is not None:
                rec["cell"] = self.cells[a].tolist()
            atoms.append(rec)
        return {"atoms": atoms}

    @classmethod
    def from_json(cls, data) -> "AtomicMeasure":
        if isinstance(data, str):
            data = json.loads(data)
        atoms = data["atoms"]
        pts = [a["x"] for a in atoms]
        ws = [a["w"] for a in atoms]
        cells = [a["cell"] for a in atoms] if atoms and all("cell" in a for a in atoms) else None
        return cls(np.array(pts, dtype=float), np.array(ws, dtype=float), cells)


def extract_measure(solution: LPSolution, threshold: float = 1e-12) -> AtomicMeasure:
    """Atoms of an optimal primal solution carrying weight above ``threshold``."""
    if solution.status != OPTIMAL:
        raise PrimalError(f"no measure: solver status {solution.status}")
    w = np.asarray(solution.primal_values)
    keep = np.flatnonzero(w > threshold)
    if keep.size == 0:
        raise PrimalError("no measure: all weights vanish")
    parsed = [_parse_atom(solution.var_names[j]) for j in keep]
    pts = np.array([p[0] for p in parsed])
    cells = np.array([p[1] for p in parsed])
    weights = w[keep]
    if abs(weights.sum() - 1.0) > 1e-9:
        weights = weights / weights.sum()
    return AtomicMeasure(pts, weights, cells)


@dataclass
class MartingaleReport:
    max_residual: float
    worst: Optional[Tuple[int, Tuple[int, ...]]]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol


def check_martingale(measure: AtomicMeasure, grid: Grid, tol: float = 1e-8) -> MartingaleReport:
    """Largest ``|E[1{x_1..x_k in box} (x_{k+1} - x_k)]|`` over adjacent boxes."""
    X = measure.points
    if X.shape[1] != grid.n_times:
        raise PrimalError("measure and grid disagree on the number of times")
    cells = measure.cells if measure.cells is not None else grid.locate(X)
    worst, worst_at = 0.0, None
    for k in range(1, grid.n_times):
        shape = grid.cell_shape[:k]
        box = np.ravel_multi_index(tuple(cells[:, :k].T), shape)
        res = np.bincount(box, weights=measure.weights * (X[:, k] - X[:, k - 1]), minlength=int(np.prod(shape)))
        b = int(np.argmax(np.abs(res)))
        if abs(res[b]) > worst:
            worst = float(abs(res[b]))
            worst_at = (k, tuple(int(i) for i in np.unravel_index(b, shape)))
    return MartingaleReport(worst, worst_at, tol)
