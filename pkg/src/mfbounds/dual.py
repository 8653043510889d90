"""Compile quotes, martingale tests and an objective payoff into the finite
dual (super-hedging) LP, one Farkas block per cell or sub-piece.

For the upper bound the program is

    min  sum(ask * yask - bid * ybid) + sum(ask' * zask - bid' * zbid) + w
    s.t. phi(x) = sum (yask - ybid) * call(x) + sum (zask - zbid) * extra(x)
                  + sum mart * psi(x) + w - h(x) >= 0   on every piece,

where each piece's nonnegativity is written through Farkas multipliers
``lam >= 0`` over the piece's inequalities ``F x >= l``:

    grad(phi) = F' lam           (one equality per coordinate)
    off(phi) + l . lam >= 0.

The lower bound reuses the same program with ``-h`` and flips the sign.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .grid import Cell, Grid
from .lp import LinearProgram, LPBuilder
from .market_data import MarketSnapshot
from .payoffs import (PiecewiseLinearFunction, PayoffError, build_payoff, common_refinement, make_call,
                      polytope_vertices)
from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, LPSolution, SolverOptions, WarmStart, solve


log = logging.getLogger(__name__)


class AssemblyError(ValueError):
    pass


def _box_ids(grid: Grid, cells: np.ndarray, k: int) -> np.ndarray:
    """Flat index of the level-``k`` adjacent box containing each cell."""
    idx = np.array(np.unravel_index(cells, grid.cell_shape)).T
    return np.ravel_multi_index(tuple(idx[:, :k].T), grid.cell_shape[:k])


def box_label(index: Sequence[int]) -> str:
    return "-".join(str(j + 1) for j in index)


def martingale_tests(grid: Grid) -> List[PiecewiseLinearFunction]:
    """``1{x|k in b} (x_{k+1} - x_k)`` for every level ``k`` and adjacent box
    ``b``, in (k, box) lexicographic order.  Empty when ``n = 1``."""
    n = grid.n_times
    out = []
    cells = np.arange(grid.n_cells)
    for k in range(1, n):
        ids = _box_ids(grid, cells, k)
        g = np.zeros(n)
        g[k], g[k - 1] = 1.0, -1.0
        for b in range(int(np.prod(grid.cell_shape[:k]))):
            on = ids == b
            grad = np.where(on[:, None], g, 0.0)
            label = f"mart_{k}_{box_label(np.unravel_index(b, grid.cell_shape[:k]))}"
            out.append(PiecewiseLinearFunction.from_cells(grid, grad, np.zeros(grid.n_cells), label=label))
    return out


def _farkas_block(F: np.ndarray, ell: np.ndarray) -> np.ndarray:
    """Coefficients of ``lam`` in the n equality rows and the one ``>=`` row."""
    return np.vstack([-F.T, ell[None, :]])


def farkas_encode(cell: Union[Cell, Tuple[np.ndarray, np.ndarray]], affine: Tuple[np.ndarray, float]) -> LinearProgram:
    """Feasibility program in ``lam >= 0`` equivalent to ``u.x + beta >= 0`` on
    the cell: ``F' lam = u`` and ``beta + l.lam >= 0``."""
    F, ell = cell.inequalities if isinstance(cell, Cell) else cell
    F = np.atleast_2d(np.asarray(F, float))
    ell = np.asarray(ell, float)
    u = np.atleast_1d(np.asarray(affine[0], float))
    beta = float(affine[1])
    n, m = u.size, F.shape[0]
    b = LPBuilder()
    b.add_block("lam", [f"lam_{j + 1}" for j in range(m)], 0.0, 0.0, np.inf)
    b.add_rows([f"c1_{i + 1}" for i in range(n)] + ["c2"], ["="] * n + [">="],
               np.concatenate([-u, [-beta]]))
    block = _farkas_block(F, ell)
    rows, cols = np.nonzero(block)
    b.add_entries(rows, cols, block[rows, cols])
    return b.build("min", name="farkas")


@dataclass
class DualLayout:
    """Where things sit in a built dual, for certificate extraction."""

    bound: str
    n_pieces: int
    quotes: List[Tuple[int, float]]
    mart_keys: List[Tuple[int, Tuple[int, ...]]]
    piece_cells: np.ndarray


def _extra_functions(snapshot: MarketSnapshot, grid: Grid, spot: Optional[float]) -> List[PiecewiseLinearFunction]:
    return [build_payoff(e.payoff, grid, spot).function for e in snapshot.extras]


def build_dual(snapshot: MarketSnapshot, grid: Grid, objective: PiecewiseLinearFunction, bound: str = "upper",
               extras: Optional[Sequence[PiecewiseLinearFunction]] = None,
               spot: Optional[float] = None) -> LinearProgram:
    """Assemble the Farkas dual.  ``extras`` are the payoffs of
    ``snapshot.extras`` already built on ``grid`` (built here when omitted).

    Variable blocks, in order: ``yask, ybid, zask, zbid, mart, w, lam``.  Rows:
    per piece (sorted by cell, then sub-piece) ``n`` equalities then one
    ``>=`` row.  For ``bound="lower"`` the optimum is minus the bound.
    """
    if bound not in ("upper", "lower"):
        raise AssemblyError(f"bound must be 'upper' or 'lower', got {bound!r}")
    if objective.grid is not grid and objective.grid.sizes != grid.sizes:
        raise AssemblyError("objective lives on a different grid")
    n = grid.n_times
    if n != snapshot.n_times:
        raise AssemblyError("grid and snapshot disagree on the number of times")
    extras = list(extras) if extras is not None else _extra_functions(snapshot, grid, spot)
    if len(extras) != len(snapshot.extras):
        raise AssemblyError("one built payoff per extra quote required")
    h = objective if bound == "upper" else -objective
    R = common_refinement([h, *extras])
    P = R.cell.size
    multi = np.array(np.unravel_index(R.cell, grid.cell_shape)).T
    counts = np.bincount(R.cell, minlength=grid.n_cells)
    sub = np.zeros(P, dtype=np.int64)
    first = np.searchsorted(R.cell, R.cell)
    sub = np.arange(P) - first
    labels = [box_label(m) + (f"p{s + 1}" if counts[c] > 1 else "")
              for m, c, s in zip(multi.tolist(), R.cell.tolist(), sub.tolist())]

    quotes = sorted(snapshot.quotes, key=lambda q: (q.time_index, q.strike))
    rank = {}
    qnames = []
    for q in quotes:
        rank[q.time_index] = rank.get(q.time_index, 0) + 1
        qnames.append(f"{q.time_index}_{rank[q.time_index]}")

    b = LPBuilder()
    Q = len(quotes)
    ys = b.add_block("yask", [f"yask_{s}" for s in qnames], [q.ask for q in quotes], 0.0, np.inf)
    yb = b.add_block("ybid", [f"ybid_{s}" for s in qnames], [-q.bid for q in quotes], 0.0, np.inf)
    E = len(snapshot.extras)
    ask = np.array([e.ask for e in snapshot.extras])
    bid = np.array([e.bid for e in snapshot.extras])
    za = b.add_block("zask", [f"zask_{i + 1}" for i in range(E)], np.where(np.isfinite(ask), ask, 0.0),
                     0.0, np.where(np.isfinite(ask), np.inf, 0.0))
    zb = b.add_block("zbid", [f"zbid_{i + 1}" for i in range(E)], np.where(np.isfinite(bid), -bid, 0.0),
                     0.0, np.where(np.isfinite(bid), np.inf, 0.0))
    mart_keys = []
    mart_start = {}
    for k in range(1, n):
        shape = grid.cell_shape[:k]
        mart_start[k] = len(mart_keys)
        mart_keys.extend((k, tuple(int(v) for v in np.unravel_index(j, shape))) for j in range(int(np.prod(shape))))
    mt = b.add_block("mart", [f"mart_{k}_{box_label(bx)}" for k, bx in mart_keys], 0.0, -np.inf, np.inf)
    wc = b.add_block("w", ["w"], 1.0, -np.inf, np.inf)

    ncuts = np.array([c[0].shape[0] for c in R.cuts], dtype=np.int64)
    nlam = 2 * n + ncuts
    lam_off = np.concatenate([[0], np.cumsum(nlam)])
    lam_names = [f"lam_{labels[p]}_{j + 1}" for p in range(P) for j in range(int(nlam[p]))]
    lm = b.add_block("lam", lam_names, 0.0, 0.0, np.inf)

    row_names = []
    for p in range(P):
        row_names.extend(f"c1_{labels[p]}_{i + 1}" for i in range(n))
        row_names.append(f"c2_{labels[p]}")
    hg = h.grad[R.maps[0]]
    ho = h.offset[R.maps[0]]
    rhs = np.column_stack([hg, ho]).ravel()
    b.add_rows(row_names, (["="] * n + [">="]) * P, rhs)

    base = np.arange(P) * (n + 1)
    c2 = base + n

    def add_function(grad: np.ndarray, off: np.ndarray, col: int, sign: float) -> None:
        pr, ci = np.nonzero(grad)
        b.add_entries(base[pr] + ci, np.full(pr.size, col), sign * grad[pr, ci])
        po = np.flatnonzero(off)
        b.add_entries(c2[po], np.full(po.size, col), sign * off[po])

    for j, q in enumerate(quotes):
        f = make_call(grid, q.time_index, q.strike)
        add_function(f.grad[R.cell], f.offset[R.cell], ys + j, 1.0)
        add_function(f.grad[R.cell], f.offset[R.cell], yb + j, -1.0)
    for j, f in enumerate(extras):
        m = R.maps[1 + j]
        add_function(f.grad[m], f.offset[m], za + j, 1.0)
        add_function(f.grad[m], f.offset[m], zb + j, -1.0)
    for k in range(1, n):
        col = mt + mart_start[k] + _box_ids(grid, R.cell, k)
        b.add_entries(base + k, col, np.ones(P))
        b.add_entries(base + k - 1, col, -np.ones(P))
    b.add_entries(c2, np.full(P, wc), np.ones(P))

    # Farkas blocks: box faces in closed form, then the cuts of split pieces
    lo, hi = grid.cell_bounds()
    lo, hi = lo[R.cell], hi[R.cell]
    i = np.arange(n)
    lam0 = lm + lam_off[:-1]
    rows_lo = base[:, None] + i[None, :]
    cols_lo = lam0[:, None] + 2 * i[None, :]
    b.add_entries(rows_lo, cols_lo, -np.ones((P, n)))
    b.add_entries(np.repeat(c2, n), cols_lo, lo)
    b.add_entries(rows_lo, cols_lo + 1, np.ones((P, n)))
    b.add_entries(np.repeat(c2, n), cols_lo + 1, -hi)
    for p in np.flatnonzero(ncuts):
        A, bb = R.cuts[p]
        block = _farkas_block(A, bb)
        r, c = np.nonzero(block)
        b.add_entries(base[p] + r, lam0[p] + 2 * n + c, block[r, c])

    layout = DualLayout(bound, P, [(q.time_index, q.strike) for q in quotes], mart_keys, R.cell)
    lp = b.build("min", name=f"dual_{bound}", meta={"layout": layout, "refinement": R, "objective": h})
    return lp


def phi_value(lp: LinearProgram, x: np.ndarray, grid: Grid, extras: Sequence[PiecewiseLinearFunction],
              values: np.ndarray) -> np.ndarray:
    """Evaluate the hedge ``sum y*call + sum z*extra + sum mart*psi + w`` at
    points ``x`` (N, n) directly from variable values."""
    layout: DualLayout = lp.meta["layout"]
    X = np.atleast_2d(x)
    y = values[lp.block("yask")] - values[lp.block("ybid")]
    out = np.full(X.shape[0], values[lp.block("w")][0])
    for (t, K), v in zip(layout.quotes, y):
        if v:
            out += v * np.maximum(X[:, t - 1] - K, 0.0)
    z = values[lp.block("zask")] - values[lp.block("zbid")]
    for f, v in zip(extras, z):
        if v:
            out += v * f.evaluate(X)
    cells = grid.locate(X)
    mart = values[lp.block("mart")]
    start = 0
    for k in range(1, grid.n_times):
        ids = np.ravel_multi_index(tuple(cells[:, :k].T), grid.cell_shape[:k])
        out += mart[start + ids] * (X[:, k] - X[:, k - 1])
        start += int(np.prod(grid.cell_shape[:k]))
    return out


# -- solving: whole program or delayed cell generation --------------------------

@dataclass
class DualSolve:
    """Optimal (or failed) solve of a full dual program.  ``pieces_used`` is
    the number of Farkas blocks the solver actually materialised."""

    solution: "LPSolution"
    rounds: int
    pieces_used: int
    strategy: str


def _piece_slices(lp: LinearProgram):
    layout: DualLayout = lp.meta["layout"]
    R = lp.meta["refinement"]
    n = R.grid.n_times
    P = layout.n_pieces
    ncuts = np.array([c[0].shape[0] for c in R.cuts], dtype=np.int64)
    nlam = 2 * n + ncuts
    lam_start = lp.blocks["lam"][0] + np.concatenate([[0], np.cumsum(nlam)])
    return n, P, lam_start, lp.blocks["lam"][0]


def piece_affine(lp: LinearProgram, shared: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Affine record ``(u, beta)`` of the hedge minus payoff on every piece,
    given values of the non-Farkas variables."""
    n, P, _, s_end = _piece_slices(lp)
    v = lp.A[:, :s_end] @ shared - lp.rhs
    v = v.reshape(P, n + 1)
    return v[:, :n], v[:, n]


def piece_minimum(lp: LinearProgram, u: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Minimum of ``u.x + beta`` over each piece (vertex enumeration)."""
    R = lp.meta["refinement"]
    grid = R.grid
    lo, hi = grid.cell_bounds()
    lo, hi = lo[R.cell], hi[R.cell]
    out = beta + np.sum(np.minimum(u * lo, u * hi), axis=1)
    for p in np.flatnonzero([c[0].shape[0] for c in R.cuts]):
        V = polytope_vertices(lo[p], hi[p], R.cuts[p])
        out[p] = float(np.min(V @ u[p] + beta[p]))
    return out


def _complete_lambda(lp: LinearProgram, x: np.ndarray, pieces: np.ndarray, opts) -> None:
    """Fill Farkas multipliers of ``pieces`` in place from the shared values."""
    n, P, lam_start, s_end = _piece_slices(lp)
    R = lp.meta["refinement"]
    u, beta = piece_affine(lp, x[:s_end])
    for p in pieces:
        s = lam_start[p]
        if R.cuts[p][0].shape[0] == 0:
            x[s:s + 2 * n:2] = np.maximum(u[p], 0.0)
            x[s + 1:s + 2 * n:2] = np.maximum(-u[p], 0.0)
            continue
        lo, hi = R.grid.cell_bounds()
        c = R.cell[p]
        F = np.zeros((2 * n, n))
        F[0::2], F[1::2] = np.eye(n), -np.eye(n)
        F = np.vstack([F, R.cuts[p][0]])
        ell = np.concatenate([np.column_stack([lo[c], -hi[c]]).ravel(), R.cuts[p][1]])
        sub = solve(farkas_encode((F, ell), (u[p], beta[p])), opts)
        if sub.status != "optimal":
            raise AssemblyError(f"no Farkas certificate for piece {p}")
        x[s:s + F.shape[0]] = sub.primal_values


def _sub_lp(lp: LinearProgram, pieces: np.ndarray, big: float):
    n, P, lam_start, s_end = _piece_slices(lp)
    rows = (pieces[:, None] * (n + 1) + np.arange(n + 1)[None, :]).ravel()
    lam_cols = np.concatenate([np.arange(lam_start[p], lam_start[p + 1]) for p in pieces]) \
        if pieces.size else np.zeros(0, dtype=np.int64)
    cols = np.concatenate([np.arange(s_end), lam_cols])
    A = lp.A.tocsr()[rows][:, cols].tocsc()
    lb = lp.lb[cols].copy()
    ub = lp.ub[cols].copy()
    lb[:s_end] = np.maximum(lb[:s_end], -big)
    ub[:s_end] = np.minimum(ub[:s_end], big)
    sub = LinearProgram(c=lp.c[cols], A=A, relations=lp.relations[rows], rhs=lp.rhs[rows], lb=lb, ub=ub,
                        var_names=[lp.var_names[j] for j in cols], row_names=[lp.row_names[r] for r in rows],
                        sense=lp.sense, name=lp.name + "_master")
    return sub, rows, cols


def solve_dual(lp: LinearProgram, opts=None, strategy: str = "auto", max_rounds: int = 200,
               full_limit: int = 4000, tol: float = 1e-9, batch: int = 200) -> DualSolve:
    """Solve a program from :func:`build_dual`.

    ``full`` hands the whole program to the simplex.  ``cells`` first solves
    the vertex form of the program, in which the hedge is only required to
    dominate the payoff at the vertices of every piece.  That is equivalent
    for affine pieces, and the optimal weights and duals are mapped back to
    a primal-dual pair of the Farkas program.  If the mapped hedge fails the
    exact check on some piece, it falls back to a cutting loop: only the
    Farkas blocks of a working set of pieces are kept, and up to ``batch``
    violated pieces are added per round.  In both cases the missing
    multipliers are filled in exactly, so the result is an optimal solution
    of the whole program.  ``auto`` picks ``cells`` above ``full_limit`` rows.
    """

    opts = opts or SolverOptions()
    if strategy == "auto":
        strategy = "full" if lp.n_rows <= full_limit else "cells"
    if strategy == "full":
        sol = solve(lp, opts)
        return DualSolve(sol, 1, lp.meta["layout"].n_pieces, "full")
    if strategy != "cells":
        raise ValueError(f"unknown strategy {strategy!r}")

    n, P, lam_start, s_end = _piece_slices(lp)
    vp = _vertex_program(lp)
    vsol = solve(vp.lp, opts)
    if vsol.status == INFEASIBLE:
        # no consistent measure: the hedge side is unbounded below
        return DualSolve(_failed(lp, UNBOUNDED, vsol.iterations), 1, 0, "cells")
    if vsol.status != OPTIMAL:
        return DualSolve(_failed(lp, vsol.status, vsol.iterations), 1, 0, "cells")
    shared = np.zeros(s_end)
    shared[vp.keep] = vsol.dual_values
    viol, _ = _violations(lp, shared, np.zeros(P, dtype=bool), tol)
    if viol.size == 0:
        x = np.zeros(lp.n_vars)
        x[:s_end] = shared
        _complete_lambda(lp, x, np.arange(P), opts)
        y = vp.W.T @ vsol.primal_values
        return DualSolve(_assembled(lp, x, y, vsol.iterations, ()), 1, P, "cells")
    log.debug("vertex hedge fails on %d pieces; switching to the cutting loop", viol.size)
    active = np.union1d(np.unique(vp.piece[vsol.primal_values > 1e-12]), viol[:batch])
    return _cutting_loop(lp, opts, active, max_rounds, tol, batch, vsol.iterations)


def _failed(lp: LinearProgram, status: str, iters: int):
    return LPSolution(status, np.nan, np.zeros(lp.n_vars), np.full(lp.n_rows, np.nan),
                      np.full(lp.n_vars, np.nan), iters, (), np.zeros(lp.n_rows),
                      var_names=list(lp.var_names))


def _assembled(lp: LinearProgram, x: np.ndarray, y: np.ndarray, iters: int, basis: tuple):
    rc = lp.c - lp.A.T @ y
    slack = lp.rhs - lp.A @ x
    return LPSolution(OPTIMAL, float(lp.c @ x), x, y, rc, iters, basis, slack,
                      var_names=list(lp.var_names))


def _violations(lp: LinearProgram, shared: np.ndarray, skip: np.ndarray, tol: float):
    """Pieces (most violated first) on which the hedge dips below the payoff."""
    R = lp.meta["refinement"]
    hi = R.grid.cell_bounds()[1][R.cell]
    u, beta = piece_affine(lp, shared)
    mins = piece_minimum(lp, u, beta)
    pscale = 1.0 + np.abs(beta) + np.sum(np.abs(u) * hi, axis=1)
    bad = np.flatnonzero(~skip & (mins < -tol * pscale))
    return bad[np.argsort(mins[bad] / pscale[bad], kind="stable")], u


def _cutting_loop(lp, opts, active, max_rounds, tol, batch, iters0) -> DualSolve:

    n, P, lam_start, s_end = _piece_slices(lp)
    R = lp.meta["refinement"]
    hi = R.grid.cell_bounds()[1][R.cell]
    scale = max(1.0, float(np.max(np.abs(lp.rhs))), float(np.max(np.abs(lp.c))), float(np.max(hi)))
    big = np.inf
    warm = None
    total_iters = iters0
    rounds = 0
    while True:
        rounds += 1
        sub, rows, cols = _sub_lp(lp, active, big)
        sol = solve(sub, opts, warm)
        total_iters += sol.iterations
        if sol.status == UNBOUNDED and rounds < max_rounds:
            # working set does not yet pin the hedge down; box it and retry
            big = 1e3 * scale if not np.isfinite(big) else big * 100.0
            warm = None
            continue
        if sol.status != OPTIMAL:
            return DualSolve(_failed(lp, sol.status, total_iters), rounds, active.size, "cells")
        shared = sol.primal_values[:s_end]
        mask = np.zeros(P, dtype=bool)
        mask[active] = True
        viol, u = _violations(lp, shared, mask, tol)
        at_big = bool(np.isfinite(big) and np.any(np.abs(shared) >= big * (1 - 1e-9)))
        if viol.size == 0 and not at_big:
            break
        if rounds >= max_rounds:
            raise AssemblyError("cell generation did not converge")
        if at_big:
            big *= 100.0
        new_active = np.union1d(active, viol[:batch])
        warm = _extend_warm(lp, sol, active, new_active, u, s_end, lam_start)
        log.debug("round %d: %d pieces, %d violated", rounds, active.size, viol.size)
        active = new_active

    x = np.zeros(lp.n_vars)
    x[cols] = sol.primal_values
    rest = np.setdiff1d(np.arange(P), active)
    _complete_lambda(lp, x, rest, opts)
    y = np.zeros(lp.n_rows)
    y[rows] = sol.dual_values
    basis = list(sol.basis)
    for p in rest:
        for i in range(n):
            s = lam_start[p] + 2 * i
            basis.append(lp.var_names[s] if x[s] > 0 or x[s + 1] == 0 else lp.var_names[s + 1])
        basis.append("slack:" + lp.row_names[p * (n + 1) + n])
    return DualSolve(_assembled(lp, x, y, total_iters, tuple(basis)), rounds, int(active.size), "cells")


def _piece_vertex_table(lp: LinearProgram) -> Tuple[np.ndarray, np.ndarray]:
    """All (piece, vertex) pairs: piece ids (K,) and points (K, n)."""
    R = lp.meta["refinement"]
    lo, hi = R.grid.cell_bounds()
    ids, pts = [], []
    for p, c in enumerate(R.cell):
        V = polytope_vertices(lo[c], hi[c], R.cuts[p])
        ids.append(np.full(V.shape[0], p))
        pts.append(V)
    return np.concatenate(ids), np.vstack(pts)


@dataclass
class _VertexProgram:
    lp: LinearProgram
    W: sp.csr_matrix        # weight -> Farkas row moments, shape (K, rows)
    piece: np.ndarray       # piece id of every weight
    keep: np.ndarray        # hedge variables that get a row


def _vertex_program(lp: LinearProgram) -> _VertexProgram:
    """Measure side of the program with the hedge written at piece vertices.

    One weight per (piece, vertex) and one row per non-fixed hedge variable.
    A weight contributes ``[v, 1]`` to the (first moment, mass) rows of its
    piece, so ``W.T @ q`` is a dual vector of the Farkas program.
    """
    n, P, _, s_end = _piece_slices(lp)
    pid, V = _piece_vertex_table(lp)
    K = pid.size
    rows = np.repeat(np.arange(K), n + 1)
    cols = (pid[:, None] * (n + 1) + np.arange(n + 1)[None, :]).ravel()
    vals = np.column_stack([V, np.ones(K)]).ravel()
    W = sp.csr_matrix((vals, (rows, cols)), shape=(K, lp.n_rows))
    M = (W @ lp.A[:, :s_end]).T.tocsr()
    lb, ub = lp.lb[:s_end], lp.ub[:s_end]
    keep = np.flatnonzero(~((lb == 0) & (ub == 0)))
    if np.any(np.isfinite(lb[keep]) & (lb[keep] != 0)) or np.any(np.isfinite(ub[keep])):
        raise AssemblyError("hedge variables must be free or nonnegative")
    rel = np.where(np.isfinite(lb[keep]), "<=", "=").astype(object)
    vlp = LinearProgram(c=W @ lp.rhs, A=M[keep], relations=rel, rhs=lp.c[keep],
                        lb=np.zeros(K), ub=np.full(K, np.inf),
                        var_names=[f"q{a}" for a in range(K)],
                        row_names=[lp.var_names[j] for j in keep], sense="max",
                        name=lp.name + "_vertex")
    return _VertexProgram(vlp, W, pid, keep)


def _extend_warm(lp, sol, old, new, u, s_end, lam_start):
    """Map the master basis onto a larger working set; new pieces enter with
    one Farkas multiplier per equality row and their ``>=`` slack basic."""
    n = lp.meta["refinement"].grid.n_times
    old_rows = len(old) * (n + 1)
    new_rows = len(new) * (n + 1)
    pos_new = {int(p): k for k, p in enumerate(new)}
    # old internal index -> new internal index
    lam_old = np.concatenate([[0], np.cumsum([lam_start[p + 1] - lam_start[p] for p in old])])
    lam_new = np.concatenate([[0], np.cumsum([lam_start[p + 1] - lam_start[p] for p in new])])
    mapping = np.empty(old_rows + s_end + int(lam_old[-1]), dtype=np.int64)
    for k, p in enumerate(old):
        kn = pos_new[int(p)]
        mapping[k * (n + 1):(k + 1) * (n + 1)] = kn * (n + 1) + np.arange(n + 1)
        mapping[old_rows + s_end + lam_old[k]:old_rows + s_end + lam_old[k + 1]] = \
            new_rows + s_end + lam_new[kn] + np.arange(lam_old[k + 1] - lam_old[k])
    mapping[old_rows:old_rows + s_end] = new_rows + np.arange(s_end)
    basis = list(mapping[sol.warm.basis])
    at_upper = list(mapping[sol.warm.at_upper])
    old_set = set(int(p) for p in old)
    for kn, p in enumerate(new):
        if int(p) in old_set:
            continue
        for i in range(n):
            j = 0 if u[p, i] >= 0 else 1
            basis.append(new_rows + s_end + lam_new[kn] + 2 * i + j)
        basis.append(kn * (n + 1) + n)
    return WarmStart(np.array(basis, dtype=np.int64), np.array(at_upper, dtype=np.int64))
