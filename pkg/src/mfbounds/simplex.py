"""Bounded-variable revised simplex with product-form basis updates, plus a
delayed column generation driver.

Internally every row gets a slack ``s`` with ``A x + s = rhs``; slack bounds
encode the row relation.  Slacks occupy internal columns ``0..m-1`` and the
structural columns follow, so columns appended by column generation never
renumber existing ones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .lp import LinearProgram

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-7
    pivot_tol: float = 1e-9
    max_iters: int = 1_000_000
    pricing: str = "dantzig"
    degenerate_streak: int = 50
    refactor_every: int = 100
    perturbation: float = 1e-6
    seed: int = 20240101

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.pricing not in ("dantzig", "bland"):
            raise ValueError(f"unknown pricing rule {self.pricing!r}")


@dataclass
class WarmStart:
    basis: np.ndarray
    at_upper: np.ndarray


@dataclass
class LPSolution:
    status: str
    objective_value: float
    primal_values: np.ndarray
    dual_values: np.ndarray
    reduced_costs: np.ndarray
    iterations: int
    basis: Tuple[str, ...]
    slack_values: np.ndarray
    phase1_duals: Optional[np.ndarray] = None
    warm: Optional[WarmStart] = None
    var_names: List[str] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def values(self, lp: LinearProgram, block: str) -> np.ndarray:
        return self.primal_values[lp.block(block)]


class SingularBasisError(RuntimeError):
    pass


class _Factor:
    """LU of the starting basis plus an eta file of column replacements."""

    def __init__(self, B: sp.csc_matrix):
        self.m = B.shape[0]
        self.etas: List[Tuple[int, np.ndarray, np.ndarray, float]] = []
        if self.m == 0:
            self.lu = None
            return
        try:
            self.lu = splu(B, permc_spec="COLAMD", diag_pivot_thresh=0.1)
        except RuntimeError as exc:
            raise SingularBasisError(str(exc)) from exc

    def ftran(self, a: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return a.copy()
        z = self.lu.solve(a)
        for p, idx, vals, piv in self.etas:
            zp = z[p] / piv
            if zp != 0.0:
                z[idx] -= vals * zp
            z[p] = zp
        return z

    def btran(self, c: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return c.copy()
        v = c.astype(float, copy=True)
        for p, idx, vals, piv in reversed(self.etas):
            v[p] = (v[p] - vals @ v[idx]) / piv
        return self.lu.solve(v, trans="T")

    def push(self, p: int, alpha: np.ndarray) -> None:
        nz = np.flatnonzero(alpha)
        nz = nz[nz != p]
        self.etas.append((p, nz, alpha[nz].copy(), float(alpha[p])))


def _slack_bounds(relations: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    m = len(relations)
    lo = np.zeros(m)
    hi = np.zeros(m)
    hi[relations == "<="] = np.inf
    lo[relations == ">="] = -np.inf
    return lo, hi


class _Simplex:
    def __init__(self, lp: LinearProgram, opts: SolverOptions):
        self.lp = lp
        self.opts = opts
        m, n = lp.A.shape
        self.m, self.n = m, n
        self.full = sp.hstack([sp.identity(m, format="csc"), lp.A], format="csc")
        self.full.sort_indices()
        self.fullT = self.full.T.tocsr()
        sign = 1.0 if lp.sense == "min" else -1.0
        self.sign = sign
        self.cost = np.concatenate([np.zeros(m), sign * lp.c])
        slo, shi = _slack_bounds(lp.relations)
        self.lb = np.concatenate([slo, lp.lb])
        self.ub = np.concatenate([shi, lp.ub])
        self.b = lp.rhs.astype(float)
        tol = opts.tol
        self.ftol_l = tol * np.maximum(1.0, np.where(np.isfinite(self.lb), np.abs(self.lb), 0.0))
        self.ftol_u = tol * np.maximum(1.0, np.where(np.isfinite(self.ub), np.abs(self.ub), 0.0))
        self.dtol = tol * np.maximum(1.0, np.abs(self.cost))
        self.fixed = self.lb == self.ub
        self.iterations = 0
        self.perturbed = False
        self.perturb_used = False

    # -- basis bookkeeping -------------------------------------------------
    def _column(self, j: int) -> np.ndarray:
        a = np.zeros(self.m)
        s, e = self.full.indptr[j], self.full.indptr[j + 1]
        a[self.full.indices[s:e]] = self.full.data[s:e]
        return a

    def _refactor(self) -> None:
        B = self.full[:, self.basis]
        try:
            self.factor = _Factor(sp.csc_matrix(B))
        except SingularBasisError:
            self._repair_basis()
            self.factor = _Factor(sp.csc_matrix(self.full[:, self.basis]))

    def _repair_basis(self) -> None:
        # Swap dependent basic columns for slacks of uncovered rows.
        import scipy.linalg as sla

        B = self.full[:, self.basis].toarray()
        _, _, piv = sla.qr(B, pivoting=True, mode="economic")
        diag = np.abs(sla.qr(B[:, piv], mode="r")[0].diagonal())
        rank = int(np.sum(diag > 1e-9 * max(1.0, diag.max(initial=0.0))))
        keep = list(np.asarray(self.basis)[piv[:rank]])
        Bk = self.full[:, keep].toarray()
        for r in range(self.m):
            if len(keep) == self.m:
                break
            if r in keep:
                continue
            trial = np.column_stack([Bk, np.eye(self.m)[:, r]])
            if np.linalg.matrix_rank(trial) > Bk.shape[1]:
                keep.append(r)
                Bk = trial
        dropped = set(self.basis) - set(keep)
        for j in dropped:
            self.pos[j] = -1
            self.x[j] = self._home(j)
        self.basis = np.array(keep, dtype=np.int64)
        self.pos[:] = -1
        self.pos[self.basis] = np.arange(self.m)
        log.warning("basis repaired: %d columns replaced by slacks", len(dropped))

    def _home(self, j: int) -> float:
        if np.isfinite(self.lb[j]):
            self.at_upper[j] = False
            return self.lb[j]
        if np.isfinite(self.ub[j]):
            self.at_upper[j] = True
            return self.ub[j]
        self.at_upper[j] = False
        return 0.0

    def _recompute_xb(self) -> None:
        xn = self.x.copy()
        xn[self.basis] = 0.0
        r = self.b - self.full @ xn
        self.x[self.basis] = self.factor.ftran(r)

    def _init_state(self, warm: Optional[WarmStart]) -> None:
        N = self.m + self.n
        lo_ok = np.isfinite(self.lb)
        self.at_upper = ~lo_ok & np.isfinite(self.ub)
        self.x = np.where(lo_ok, self.lb, np.where(self.at_upper, self.ub, 0.0))
        if warm is not None and len(warm.basis) == self.m:
            self.basis = np.asarray(warm.basis, dtype=np.int64).copy()
            up = np.asarray(warm.at_upper, dtype=np.int64)
            up = up[up < N]
            up = up[np.isfinite(self.ub[up])]
            self.at_upper[:] = False
            self.at_upper[up] = True
            self.at_upper |= ~np.isfinite(self.lb) & np.isfinite(self.ub)
            home = np.where(np.isfinite(self.lb), self.lb, 0.0)
            self.x = np.where(self.at_upper, self.ub, home)
        else:
            self.basis = self._crash()
        self.pos = np.full(N, -1, dtype=np.int64)
        self.pos[self.basis] = np.arange(self.m)
        self._refactor()
        self._recompute_xb()

    def _crash(self) -> np.ndarray:
        """Slack basis, with equality-row slacks replaced by structural columns
        that are singletons within the equality rows (keeps the basis
        triangular, hence nonsingular)."""
        m = self.m
        basis = np.arange(m, dtype=np.int64)
        eq = np.flatnonzero(self.fixed[:m])
        if eq.size == 0 or self.n == 0:
            return basis
        A = self.lp.A
        Aeq = A.tocsr()[eq, :].tocsc()
        counts = np.diff(Aeq.indptr)
        cand = np.flatnonzero((counts == 1) & ~self.fixed[m:])
        if cand.size == 0:
            return basis
        rows_local = Aeq.indices[Aeq.indptr[cand]]
        coef = Aeq.data[Aeq.indptr[cand]]
        rows = eq[rows_local]
        x0 = self.x[m:]
        rowdot = A @ x0
        val = (self.b[rows] - rowdot[rows] + coef * x0[cand]) / coef
        j_full = cand + m
        feas = (val >= self.lb[j_full] - self.ftol_l[j_full]) & (val <= self.ub[j_full] + self.ftol_u[j_full])
        # rank candidates per row: feasible first, then larger |coef|, then lower index
        order = np.lexsort((cand, -np.abs(coef), ~feas, rows))
        seen = set()
        for k in order:
            r = int(rows[k])
            if r in seen:
                continue
            seen.add(r)
            basis[r] = j_full[k]
        return basis

    def _set_nonbasic_to_bounds(self) -> None:
        nb = self.pos < 0
        lo_ok = np.isfinite(self.lb)
        up_ok = np.isfinite(self.ub)
        at_up = nb & self.at_upper & up_ok
        at_lo = nb & ~at_up & lo_ok
        self.at_upper[nb & ~at_up] = False
        self.x[at_up] = self.ub[at_up]
        self.x[at_lo] = self.lb[at_lo]
        only_up = nb & ~lo_ok & up_ok
        self.x[only_up] = self.ub[only_up]
        self.at_upper[only_up] = True

    def _perturb(self) -> None:
        """Widen finite, non-fixed bounds by small deterministic random amounts
        so that degenerate vertices split apart."""
        rng = np.random.default_rng(self.opts.seed)
        N = self.lb.size
        xi = self.opts.perturbation * (1.0 + rng.random(N))
        self._lb0, self._ub0 = self.lb.copy(), self.ub.copy()
        free_to_move = ~self.fixed
        lo = free_to_move & np.isfinite(self.lb)
        up = free_to_move & np.isfinite(self.ub)
        # relative size, capped so that huge bounds do not move far
        self.lb[lo] -= xi[lo] * (1.0 + np.minimum(np.abs(self.lb[lo]), 1e3))
        self.ub[up] += xi[up] * (1.0 + np.minimum(np.abs(self.ub[up]), 1e3))
        self._set_nonbasic_to_bounds()
        self._recompute_xb()
        self.perturbed = True
        self.perturb_used = True
        log.debug("bounds perturbed at iteration %d", self.iterations)

    def _unperturb(self) -> None:
        self.lb, self.ub = self._lb0, self._ub0
        self._set_nonbasic_to_bounds()
        self._recompute_xb()
        self.perturbed = False
        log.debug("bounds restored at iteration %d", self.iterations)

    # -- main loop ---------------------------------------------------------
    def run(self, warm: Optional[WarmStart] = None) -> Tuple[str, Optional[np.ndarray]]:
        opts = self.opts
        self._init_state(warm)
        streak = 0
        bland = opts.pricing == "bland"
        since_refactor = 0
        rechecked = False
        best_obj, best_at = np.inf, 0
        stall_window = max(1000, self.m)
        stalled = False
        while True:
            if self.iterations >= opts.max_iters:
                if self.perturbed:
                    self._unperturb()
                return ITERATION_LIMIT, None
            xb = self.x[self.basis]
            lbB, ubB = self.lb[self.basis], self.ub[self.basis]
            below = xb < lbB - self.ftol_l[self.basis]
            above = xb > ubB + self.ftol_u[self.basis]
            if self.perturbed and (below.any() or above.any()):
                # Absorb small drift by shifting the (already perturbed) bound;
                # the original bounds come back in _unperturb.
                small_b = below & (lbB - xb <= 100 * self.ftol_l[self.basis])
                small_a = above & (xb - ubB <= 100 * self.ftol_u[self.basis])
                if small_b.any() or small_a.any():
                    jb = self.basis[small_b]
                    ja = self.basis[small_a]
                    self.lb[jb] = self.x[jb]
                    self.ub[ja] = self.x[ja]
                    lbB, ubB = self.lb[self.basis], self.ub[self.basis]
                    below &= ~small_b
                    above &= ~small_a
            phase1 = bool(below.any() or above.any())
            if phase1:
                cB = np.where(below, -1.0, np.where(above, 1.0, 0.0))
                y = self.factor.btran(cB)
                d = -(self.fullT @ y)
                dtol = self.opts.tol
            else:
                y = self.factor.btran(self.cost[self.basis])
                d = self.cost - self.fullT @ y
                dtol = self.dtol
            d[self.basis] = 0.0
            if log.isEnabledFor(logging.DEBUG) and self.iterations % 500 == 0:
                infeas = float(np.sum(np.where(below, lbB - xb, 0.0) + np.where(above, xb - ubB, 0.0)))
                log.debug("iter %d phase %d infeas %.6g obj %.10g streak %d", self.iterations,
                          1 if phase1 else 2, infeas, float(self.cost @ self.x), streak)
            elig = self._eligible(d, dtol)
            cand = np.flatnonzero(elig)
            if cand.size == 0:
                if self.factor.etas and not rechecked:
                    self._refactor()
                    self._recompute_xb()
                    since_refactor = 0
                    rechecked = True
                    continue
                if self.perturbed:
                    self._unperturb()
                    streak = 0
                    continue
                if phase1:
                    self.phase1_duals = y
                    return INFEASIBLE, y
                return OPTIMAL, y
            rechecked = False
            if streak >= opts.degenerate_streak and not self.perturb_used and opts.perturbation > 0:
                self._perturb()
                streak = 0
                continue
            # stall guard: no phase-2 progress over a long window
            if not phase1:
                obj = float(self.cost @ self.x)
                if obj < best_obj - 1e-12 * max(1.0, abs(obj)):
                    best_obj, best_at = obj, self.iterations
                elif self.iterations - best_at > stall_window:
                    if self.perturbed:
                        self._unperturb()
                    stalled = True
                    best_at = self.iterations
                    continue
            use_bland = bland or stalled or (streak >= opts.degenerate_streak and (
                self.perturb_used or opts.perturbation <= 0))
            if use_bland:
                q = int(cand[0])
            else:
                q = int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if d[q] < 0 else -1.0
            alpha = self.factor.ftran(self._column(q))
            delta = -direction * alpha
            p, t, leave_at_upper = self._ratio(xb, delta, lbB, ubB, below, above, use_bland)
            rng = self.ub[q] - self.lb[q]
            flip = np.isfinite(rng) and (p < 0 or rng <= t)
            if p < 0 and not flip:
                if phase1:
                    # numerically unreliable direction: drop it this round
                    log.debug("phase-1 ray without blocking row at column %d", q)
                    self._refactor()
                    self._recompute_xb()
                    since_refactor = 0
                    self.iterations += 1
                    continue
                return UNBOUNDED, None
            if flip:
                t = rng
            self.x[self.basis] = xb + t * delta
            self.x[q] += direction * t
            self.iterations += 1
            streak = streak + 1 if t <= 1e-12 * max(1.0, abs(self.x[q])) else 0
            if flip:
                self.at_upper[q] = not self.at_upper[q]
                self.x[q] = self.ub[q] if self.at_upper[q] else self.lb[q]
                continue
            r = int(self.basis[p])
            self.x[r] = self.ub[r] if leave_at_upper else self.lb[r]
            self.at_upper[r] = leave_at_upper
            self.pos[r] = -1
            self.basis[p] = q
            self.pos[q] = p
            self.at_upper[q] = False
            self.factor.push(p, alpha)
            since_refactor += 1
            if since_refactor >= opts.refactor_every:
                self._refactor()
                self._recompute_xb()
                since_refactor = 0

    def _eligible(self, d: np.ndarray, dtol) -> np.ndarray:
        nb = (self.pos < 0) & ~self.fixed
        free = ~np.isfinite(self.lb) & ~np.isfinite(self.ub)
        can_inc = ~self.at_upper
        can_dec = self.at_upper | free
        return nb & (((d < -dtol) & can_inc) | ((d > dtol) & can_dec))

    def _ratio(self, xb, delta, lbB, ubB, below, above, bland: bool):
        m = self.m
        if m == 0:
            return -1, np.inf, False
        ptol = self.opts.pivot_tol * max(1.0, float(np.max(np.abs(delta))))
        feas = ~below & ~above
        neg = delta < -ptol
        pos = delta > ptol
        ftl = self.ftol_l[self.basis]
        ftu = self.ftol_u[self.basis]
        with np.errstate(divide="ignore", invalid="ignore"):
            dn = feas & neg & np.isfinite(lbB)
            up = feas & pos & np.isfinite(ubB)
            t_exact = np.full(m, np.inf)
            t_relax = np.full(m, np.inf)
            t_exact[dn] = (xb[dn] - lbB[dn]) / -delta[dn]
            t_relax[dn] = (xb[dn] - lbB[dn] + ftl[dn]) / -delta[dn]
            t_exact[up] = (ubB[up] - xb[up]) / delta[up]
            t_relax[up] = (ubB[up] + ftu[up] - xb[up]) / delta[up]
            bu = below & pos
            ab = above & neg
            t_exact[bu] = (lbB[bu] - xb[bu]) / delta[bu]
            t_relax[bu] = t_exact[bu]
            t_exact[ab] = (xb[ab] - ubB[ab]) / -delta[ab]
            t_relax[ab] = t_exact[ab]
        hit_upper = up | ab
        if not np.isfinite(t_relax).any():
            return -1, np.inf, False
        if bland:
            tmin = np.min(t_exact)
            ties = np.flatnonzero(t_exact <= tmin + 1e-15 * max(1.0, abs(tmin)))
            p = int(ties[np.argmin(self.basis[ties])])
        else:
            tmax = np.min(t_relax)
            cands = np.flatnonzero(t_exact <= tmax)
            if cands.size == 0:
                cands = np.array([int(np.argmin(t_exact))])
            mags = np.abs(delta[cands])
            best = cands[mags >= mags.max()]
            p = int(best[np.argmin(self.basis[best])])
        t = max(float(t_exact[p]), 0.0)
        return p, t, bool(hit_upper[p])

    def solution(self, status: str, y: Optional[np.ndarray]) -> LPSolution:
        m = self.m
        lp = self.lp
        names = ["slack:" + r for r in lp.row_names] + list(lp.var_names)
        x = self.x[m:].copy()
        basis = tuple(names[j] for j in self.basis)
        warm = WarmStart(self.basis.copy(), np.flatnonzero(self.at_upper))
        if status == OPTIMAL:
            duals = self.sign * y
            rc = lp.c - lp.A.T @ duals
            obj = float(lp.c @ x)
            return LPSolution(status, obj, x, duals, rc, self.iterations, basis, self.x[:m].copy(),
                              warm=warm, var_names=list(lp.var_names))
        nan = np.full(m, np.nan)
        obj = float(lp.c @ x) if status == ITERATION_LIMIT else np.nan
        return LPSolution(status, obj, x, nan, np.full(self.n, np.nan), self.iterations, basis,
                          self.x[:m].copy(), phase1_duals=y if status == INFEASIBLE else None,
                          warm=warm, var_names=list(lp.var_names))


def solve(lp: LinearProgram, opts: Optional[SolverOptions] = None,
          warm_start: Optional[WarmStart] = None) -> LPSolution:
    """Solve ``lp`` with the bounded revised simplex.

    Dual values follow the convention ``reduced_costs = c - A' y``; for a
    minimisation at optimality a ``<=`` row has ``y <= 0`` and a ``>=`` row
    ``y >= 0``.
    """
    opts = opts or SolverOptions()
    engine = _Simplex(lp, opts)
    status, y = engine.run(warm_start)
    return engine.solution(status, y)


def dual_objective(lp: LinearProgram, sol: LPSolution) -> float:
    """``rhs'y + sum_j d_j x_j``; equals the primal objective at optimality."""
    return float(lp.rhs @ sol.dual_values + sol.reduced_costs @ sol.primal_values)


# -- delayed column generation -------------------------------------------------

class ColumnSource(Protocol):
    """Rows are fixed up front; columns are produced on demand by key."""

    sense: str
    rhs: np.ndarray
    relations: np.ndarray
    row_names: List[str]

    def initial_columns(self) -> List[str]: ...

    def column(self, key: str) -> Tuple[float, float, float, np.ndarray, np.ndarray]: ...

    def price(self, y: np.ndarray, phase1: bool, tol: float, exclude: set) -> List[str]: ...

    @property
    def n_columns(self) -> int: ...


@dataclass
class ColumnGenerationResult:
    solution: LPSolution
    columns: List[str]
    rounds: int
    lp: LinearProgram

    @property
    def n_materialized(self) -> int:
        return len(self.columns)


def _restricted_lp(source: ColumnSource, keys: Sequence[str], cols: Dict[str, tuple]) -> LinearProgram:
    m = len(source.rhs)
    c, lb, ub, rr, cc, vv = [], [], [], [], [], []
    for j, k in enumerate(keys):
        cost, lo, hi, idx, val = cols[k]
        c.append(cost)
        lb.append(lo)
        ub.append(hi)
        rr.append(np.asarray(idx, dtype=np.int64))
        cc.append(np.full(len(idx), j, dtype=np.int64))
        vv.append(np.asarray(val, float))
    n = len(keys)
    if n:
        A = sp.csc_matrix((np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))), shape=(m, n))
    else:
        A = sp.csc_matrix((m, 0))
    return LinearProgram(c=np.array(c), A=A, relations=source.relations, rhs=source.rhs,
                         lb=np.array(lb), ub=np.array(ub), var_names=list(keys),
                         row_names=list(source.row_names), sense=source.sense, name="restricted_master")


def solve_column_generation(source: ColumnSource, opts: Optional[SolverOptions] = None,
                            batch: int = 1, max_rounds: int = 100_000) -> ColumnGenerationResult:
    """Delayed column generation: solve a restricted master, ask the source
    for columns with negative reduced cost (phase-1 costs while the master is
    infeasible), add them, and warm-start the next solve."""
    opts = opts or SolverOptions()
    keys = list(source.initial_columns())
    cols = {k: source.column(k) for k in keys}
    warm = None
    sign = 1.0 if source.sense == "min" else -1.0
    rounds = 0
    while True:
        rounds += 1
        lp = _restricted_lp(source, keys, cols)
        engine = _Simplex(lp, opts)
        status, y = engine.run(warm)
        sol = engine.solution(status, y)
        if status in (UNBOUNDED, ITERATION_LIMIT) or rounds >= max_rounds:
            return ColumnGenerationResult(sol, keys, rounds, lp)
        phase1 = status == INFEASIBLE
        y_int = y if phase1 else sign * sol.dual_values
        new = source.price(y_int, phase1, opts.tol, set(keys))[:batch]
        if not new:
            return ColumnGenerationResult(sol, keys, rounds, lp)
        for k in new:
            cols[k] = source.column(k)
            keys.append(k)
        warm = sol.warm


class MatrixColumnSource:
    """Column source over a fully assembled LinearProgram; ``initial`` names
    the columns the restricted master starts with."""

    def __init__(self, lp: LinearProgram, initial: Optional[Sequence[str]] = None):
        self.lp = lp
        self.sense = lp.sense
        self.rhs = lp.rhs
        self.relations = lp.relations
        self.row_names = lp.row_names
        self._index = {nm: j for j, nm in enumerate(lp.var_names)}
        self._initial = list(initial) if initial is not None else []
        # a column whose box excludes zero cannot be left out of the master
        seen = set(self._initial)
        self._initial += [nm for nm, lo, hi in zip(lp.var_names, lp.lb, lp.ub)
                          if (lo > 0 or hi < 0) and nm not in seen]
        self._AT = lp.A.T.tocsr()
        self.served = 0

    @property
    def n_columns(self) -> int:
        return self.lp.n_vars

    def initial_columns(self) -> List[str]:
        return list(self._initial)

    def column(self, key: str):
        j = self._index[key]
        s, e = self.lp.A.indptr[j], self.lp.A.indptr[j + 1]
        self.served += 1
        return (float(self.lp.c[j]), float(self.lp.lb[j]), float(self.lp.ub[j]),
                self.lp.A.indices[s:e].copy(), self.lp.A.data[s:e].copy())

    def price(self, y: np.ndarray, phase1: bool, tol: float, exclude: set) -> List[str]:
        sign = 1.0 if self.sense == "min" else -1.0
        cost = np.zeros(self.lp.n_vars) if phase1 else sign * self.lp.c
        d = cost - self._AT @ y
        return _most_attractive(d, self.lp.lb, self.lp.ub, self.lp.var_names, tol, exclude)


def _most_attractive(d, lb, ub, names, tol, exclude) -> List[str]:
    """Keys ordered by reduced-cost violation.  A column outside the master
    sits at zero, so it may move up when ``ub > 0`` and down when ``lb < 0``."""
    viol = np.maximum(np.where(ub > 0, -d, -np.inf), np.where(lb < 0, d, -np.inf))
    fixed = lb == ub
    order = np.argsort(-viol, kind="stable")
    out = []
    for j in order:
        if viol[j] <= tol:
            break
        if fixed[j] or names[j] in exclude:
            continue
        out.append(names[j])
        if len(out) >= 64:
            break
    return out
