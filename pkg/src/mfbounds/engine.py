"""End-to-end bound computation: grid, payoff, both dual programs, hedge
certificates, optional primal cross-check and Black-Scholes reference."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dual import build_dual, solve_dual
from .grid import Grid, build_grid
from .market_data import ExtraQuote, MarketSnapshot, interpolate_quotes
from .payoffs import (LOG_PAYOFFS, PayoffError, PiecewiseLinearFunction, build_payoff, payoff_formula,
                      payoff_kinks)
from .primal import build_primal
from .simplex import OPTIMAL, UNBOUNDED, SolverOptions, solve

log = logging.getLogger(__name__)


class InfeasibleMarketError(RuntimeError):
    """No martingale measure on the grid reprices the quotes within their bands."""


class SolverFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundsConfig:
    """Knobs of :func:`price_bounds`.

    ``state_lower``/``state_upper`` override the snapshot's truncation box.
    ``log_floor`` replaces a zero lower state bound when a log-return payoff
    or a volatility band is involved (default ``1e-3 * spot``).  ``bs_vol`` and
    ``bs_step`` switch on the Black-Scholes reference.
    """

    refine: int = 0
    state_lower: Optional[float] = None
    state_upper: Optional[float] = None
    extra_points: Optional[Sequence[float]] = None
    interpolate_barriers: bool = False
    oracle: bool = False
    spot: Optional[float] = None
    log_floor: Optional[float] = None
    vol_band: Optional[Tuple[float, float, float]] = None
    bs_vol: Optional[float] = None
    bs_step: Optional[float] = None
    strategy: str = "auto"
    tol: float = 1e-7
    max_iters: int = 1_000_000
    check_points: int = 10_000
    seed: int = 0

    def to_json(self) -> Dict[str, Any]:
        out = dict(self.__dict__)
        for k in ("extra_points", "vol_band"):
            if out[k] is not None:
                out[k] = list(out[k])
        return out

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "BoundsConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        if known.get("vol_band") is not None:
            known["vol_band"] = tuple(known["vol_band"])
        return cls(**known)


@dataclass
class HedgeCertificate:
    """Semi-static portfolio dominating (``super``) or dominated by (``sub``)
    the payoff.  Quantities are signed, positive meaning long."""

    kind: str
    vanilla_positions: List[Tuple[int, float, float]]
    extra_positions: List[float]
    dynamic_positions: Dict[Tuple[int, Tuple[int, ...]], float]
    cash: float
    cost: float
    _extras: List[PiecewiseLinearFunction] = field(default_factory=list, repr=False)

    def payoff(self, X: np.ndarray, grid: Grid) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], self.cash)
        for t, K, q in self.vanilla_positions:
            out += q * np.maximum(X[:, t - 1] - K, 0.0)
        for f, q in zip(self._extras, self.extra_positions):
            if q:
                out += q * f.evaluate(X)
        cells = grid.locate(X)
        for (k, box), g in self.dynamic_positions.items():
            hit = np.all(cells[:, :k] == np.array(box), axis=1)
            out += np.where(hit, g * (X[:, k] - X[:, k - 1]), 0.0)
        return out

    def summary(self, top: int = 5) -> str:
        eps = 1e-10 * max(1.0, abs(self.cost))
        legs = sorted(self.vanilla_positions, key=lambda v: -abs(v[2]))[:top]
        txt = ", ".join(f"{q:+.4g} C(t{t},K={K:g})" for t, K, q in legs if abs(q) > eps)
        dyn = sum(1 for g in self.dynamic_positions.values() if abs(g) > eps)
        return f"{self.kind}-hedge cost {self.cost:.6g}: {txt or 'no vanillas'}; cash {self.cash:+.4g}; " \
               f"{dyn} dynamic box positions"

    def to_json(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "cost": self.cost,
            "cash": self.cash,
            "vanilla_positions": [{"time_index": t, "strike": K, "quantity": q}
                                  for t, K, q in self.vanilla_positions if q],
            "extra_positions": list(self.extra_positions),
            "dynamic_positions": [{"k": k, "box": [i + 1 for i in box], "quantity": g}
                                  for (k, box), g in sorted(self.dynamic_positions.items()) if g],
        }


@dataclass
class ReferencePrice:
    value: float
    stderr: Optional[float]
    method: str

    def __float__(self) -> float:
        return self.value


@dataclass
class Verdict:
    status: str  # below_lower | inside | above_upper
    margin: float
    certificate: Optional[HedgeCertificate] = None

    def to_json(self) -> Dict[str, Any]:
        return {"status": self.status, "margin": self.margin,
                "certificate": None if self.certificate is None else self.certificate.to_json()}


@dataclass
class BoundsReport:
    payoff: Dict[str, Any]
    lower: float
    upper: float
    approximation: Dict[str, str]
    certificates: Dict[str, HedgeCertificate]
    grid: Dict[str, Any]
    solver: Dict[str, Any]
    gap_vs_oracle: Optional[Dict[str, float]] = None
    bs_reference: Optional[ReferencePrice] = None
    verdict: Optional[Verdict] = None
    superreplication: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def validity(self) -> str:
        """``exact`` for piecewise linear payoffs, ``conservative`` when both
        sides used outer approximations, ``heuristic`` otherwise."""
        a = self.approximation
        if a["lower"] == a["upper"] == "exact":
            return "exact"
        if a["lower"] in ("exact", "under") and a["upper"] in ("exact", "over"):
            return "conservative"
        return "heuristic"

    def to_json(self) -> Dict[str, Any]:
        ref = self.bs_reference
        return {
            "payoff": self.payoff,
            "lower": self.lower,
            "upper": self.upper,
            "approximation": self.approximation,
            "validity": self.validity,
            "bs_reference": None if ref is None else ref.value,
            "bs_reference_stderr": None if ref is None else ref.stderr,
            "bs_reference_method": None if ref is None else ref.method,
            "gap_vs_oracle": self.gap_vs_oracle,
            "certificate": {k: c.to_json() for k, c in self.certificates.items()},
            "superreplication": self.superreplication,
            "verdict": None if self.verdict is None else self.verdict.to_json(),
            "grid": self.grid,
            "solver": self.solver,
            "warnings": self.warnings,
        }


# -- construction helpers -------------------------------------------------------

def _payoff_spot(spec: Dict[str, Any], config: BoundsConfig) -> Optional[float]:
    p = spec.get("params") or {}
    return float(p["spot"]) if p.get("spot") is not None else config.spot


def _barrier_levels(spec: Dict[str, Any]) -> List[float]:
    p = spec.get("params") or {}
    if not str(spec.get("type", "")).startswith("barrier_"):
        return []
    return [float(p[k]) for k in ("B1", "B2") if p.get(k) is not None]


def volatility_band_constraints(grid: Grid, sigma_lo: float, sigma_hi: float, step: float,
                                spot: Optional[float] = None) -> List[ExtraQuote]:
    """Bound the expected squared log-return of every step to
    ``[sigma_lo^2 step, sigma_hi^2 step]``.

    The cap uses the under-approximation and the floor the over-approximation
    of the payoff, so no measure satisfying the true band is cut off.  The
    step from ``spot`` to the first date is included when ``spot`` is given.
    """
    if not (math.isfinite(sigma_lo) and math.isfinite(sigma_hi)) or sigma_lo < 0 or sigma_hi < sigma_lo:
        raise ValueError("need 0 <= sigma_lo <= sigma_hi")
    if not step > 0:
        raise ValueError("step must be positive")
    if grid.lower.min() <= 0:
        raise PayoffError("volatility band needs a positive state lower bound")
    ks = ([0] if spot is not None else []) + list(range(1, grid.n_times))
    out = []
    for k in ks:
        params: Dict[str, Any] = {"k": k}
        if k == 0:
            params["spot"] = float(spot)
        out.append(ExtraQuote({"type": "squared_log_return", "params": {**params, "mode": "under"}},
                              ask=sigma_hi ** 2 * step))
        if sigma_lo > 0:
            out.append(ExtraQuote({"type": "squared_log_return", "params": {**params, "mode": "over"}},
                                  bid=sigma_lo ** 2 * step))
    return out


def _prepare(snapshot: MarketSnapshot, spec: Dict[str, Any], config: BoundsConfig):
    """Snapshot (possibly interpolated / with band constraints) and grid."""
    n = snapshot.n_times
    warnings = []
    if config.interpolate_barriers:
        levels = _barrier_levels(spec)
        if levels:
            snapshot = interpolate_quotes(snapshot, levels)
    lo = snapshot.state_lower_bound if config.state_lower is None else float(config.state_lower)
    hi = snapshot.state_upper_bound if config.state_upper is None else float(config.state_upper)
    spot = _payoff_spot(spec, config)
    needs_log = spec.get("type") in LOG_PAYOFFS or config.vol_band is not None \
        or any(e.payoff.get("type") in LOG_PAYOFFS for e in snapshot.extras)
    if needs_log and lo <= 0:
        if config.log_floor is not None:
            lo = float(config.log_floor)
        elif spot is not None:
            lo = 1e-3 * spot
        else:
            raise PayoffError("log-return payoffs need a spot (for the default floor) or an explicit log_floor")
        warnings.append(f"state lower bound raised to {lo:g} to avoid the log singularity")
    if (lo, hi) != snapshot.state_bounds:
        keep = [q for q in snapshot.quotes if lo < q.strike < hi]
        if len(keep) < len(snapshot.quotes):
            warnings.append(f"{len(snapshot.quotes) - len(keep)} quotes outside the state box dropped")
        snapshot = MarketSnapshot(n, tuple(keep), snapshot.extras, hi, lo)
    extra = [[v for v in row if lo <= v <= hi] for row in payoff_kinks(spec, n)]
    for e in snapshot.extras:
        for t, row in enumerate(payoff_kinks(e.payoff, n)):
            extra[t].extend(v for v in row if lo <= v <= hi)
    if config.extra_points:
        for row in extra:
            row.extend(float(v) for v in config.extra_points if lo <= v <= hi)
    grid = build_grid(snapshot, extra, refine=config.refine)
    if config.vol_band is not None:
        s_lo, s_hi, step = config.vol_band
        snapshot = snapshot.with_extras(volatility_band_constraints(grid, s_lo, s_hi, step, spot))
    return snapshot, grid, spot, warnings


def _sided_specs(spec: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    """``mode: conservative`` means under for the lower, over for the upper bound."""
    p = dict(spec.get("params") or {})
    if spec.get("type") in LOG_PAYOFFS and p.get("mode") == "conservative":
        return {"lower": {**spec, "params": {**p, "mode": "under"}},
                "upper": {**spec, "params": {**p, "mode": "over"}}}
    return {"lower": spec, "upper": spec}


def _certificate(lp, sol, snapshot: MarketSnapshot, extras, bound: str) -> HedgeCertificate:
    sgn = 1.0 if bound == "upper" else -1.0
    v = sol.primal_values
    layout = lp.meta["layout"]
    y = sgn * (v[lp.block("yask")] - v[lp.block("ybid")])
    z = sgn * (v[lp.block("zask")] - v[lp.block("zbid")])
    quotes = sorted(snapshot.quotes, key=lambda q: (q.time_index, q.strike))
    cash = sgn * float(v[lp.block("w")][0])
    # upper: pay ask for longs, receive bid for shorts; lower: the reverse view
    def leg(q, bid, ask):
        if bound == "upper":
            return ask * max(q, 0.0) - bid * max(-q, 0.0)
        return bid * max(q, 0.0) - ask * max(-q, 0.0)
    cost = cash + sum(leg(q, qt.bid, qt.ask) for q, qt in zip(y, quotes))
    cost += sum(leg(q, e.bid, e.ask) for q, e in zip(z, snapshot.extras) if q)
    mart = sgn * v[lp.block("mart")]
    dyn = {key: float(g) for key, g in zip(layout.mart_keys, mart) if g != 0.0}
    return HedgeCertificate("super" if bound == "upper" else "sub",
                            [(t, K, float(q)) for (t, K), q in zip(layout.quotes, y)],
                            [float(q) for q in z], dyn, cash, float(cost), list(extras))


def _solve_side(snapshot, grid, f, bound, extras, spot, opts, config):
    t0 = time.perf_counter()
    lp = build_dual(snapshot, grid, f, bound, extras=extras, spot=spot)
    res = solve_dual(lp, opts, strategy=config.strategy)
    sol = res.solution
    if sol.status == UNBOUNDED:
        raise InfeasibleMarketError("quotes inconsistent under discretization: no martingale measure "
                                    "on the grid reprices every quote within its bid/ask band")
    if sol.status != OPTIMAL:
        raise SolverFailure(f"{bound} bound: solver stopped with status {sol.status}")
    value = sol.objective_value if bound == "upper" else 0.0 - sol.objective_value
    stats = {"rows": lp.n_rows, "columns": lp.n_vars, "iterations": sol.iterations,
             "strategy": res.strategy, "pieces_used": res.pieces_used,
             "max_residual": float(lp.residuals(sol.primal_values).max(initial=0.0)),
             "seconds": round(time.perf_counter() - t0, 4)}
    return value, _certificate(lp, sol, snapshot, extras, bound), stats


def _oracle(snapshot, grid, f, bound, extras, opts) -> float:
    sol = solve(build_primal(snapshot, grid, f, bound, extras=extras), opts)
    if sol.status != OPTIMAL:
        raise SolverFailure(f"primal oracle ({bound}): status {sol.status}")
    return sol.objective_value


def price_bounds(snapshot: MarketSnapshot, payoff_spec: Dict[str, Any],
                 config: Optional[BoundsConfig] = None) -> BoundsReport:
    """Lower and upper model-free bounds of ``payoff_spec`` given ``snapshot``."""
    config = config or BoundsConfig()
    snap, grid, spot, warnings = _prepare(snapshot, payoff_spec, config)
    opts = SolverOptions(tol=config.tol, max_iters=config.max_iters)
    extras = [build_payoff(e.payoff, grid, spot).function for e in snap.extras]
    sided = _sided_specs(payoff_spec)
    built = {b: build_payoff(sided[b], grid, spot) for b in ("lower", "upper")}

    values, certs, stats = {}, {}, {}
    for b in ("upper", "lower"):
        values[b], certs[b], stats[b] = _solve_side(snap, grid, built[b].function, b, extras, spot, opts, config)

    rng = np.random.default_rng(config.seed)
    X = grid.lower + rng.random((config.check_points, grid.n_times)) * (grid.upper - grid.lower)
    sup = {}
    for b, sgn in (("upper", 1.0), ("lower", -1.0)):
        h = built[b].function.evaluate(X)
        sup[b] = float(np.min(sgn * (certs[b].payoff(X, grid) - h)))
        if sup[b] < -1e-6:
            warnings.append(f"{b} certificate misses the payoff by {-sup[b]:.3g} at a sampled point")
        if abs(certs[b].cost - values[b]) > 1e-8 * max(1.0, abs(values[b])):
            warnings.append(f"{b} certificate cost {certs[b].cost:.12g} differs from the bound")

    if values["lower"] > values["upper"] + 1e-8:
        warnings.append("lower bound exceeds upper bound")

    gap = None
    if config.oracle:
        gap = {b: values[b] - _oracle(snap, grid, built[b].function, b, extras, opts) for b in ("lower", "upper")}

    ref = None
    if config.bs_vol is not None and config.bs_step is not None:
        if spot is None:
            raise ValueError("the Black-Scholes reference needs a spot")
        ref = bs_reference_price(payoff_spec, spot, config.bs_vol, grid.n_times, config.bs_step,
                                 seed=config.seed)
    approx = {b: built[b].approximation for b in ("lower", "upper")}
    if payoff_spec.get("type") in LOG_PAYOFFS:
        warnings.append("log-return payoff: squared log-return definition assumed")
    return BoundsReport(payoff=payoff_spec, lower=values["lower"], upper=values["upper"],
                        approximation=approx, certificates=certs,
                        grid={**grid.summary(), "state_bounds": [float(grid.lower[0]), float(grid.upper[0])],
                              "points": [p.tolist() for p in grid.points]},
                        solver=stats, gap_vs_oracle=gap, bs_reference=ref, superreplication=sup,
                        warnings=warnings)


def detect_arbitrage(report: BoundsReport, traded_price: float, tol: float = 1e-8) -> Verdict:
    """Where a traded price sits relative to the bounds.  Outside them, the
    attached certificate is the hedge to hold against the opposite position
    in the exotic (sell above the upper bound, buy below the lower one)."""
    if traded_price > report.upper + tol:
        return Verdict("above_upper", traded_price - report.upper, report.certificates.get("upper"))
    if traded_price < report.lower - tol:
        return Verdict("below_lower", report.lower - traded_price, report.certificates.get("lower"))
    return Verdict("inside", min(traded_price - report.lower, report.upper - traded_price))


# -- Black-Scholes reference ----------------------------------------------------

def _gl_panels(breaks: np.ndarray, nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(nodes)
    a, b = breaks[:-1, None], breaks[1:, None]
    return (0.5 * (b - a) * x + 0.5 * (a + b)).ravel(), (0.5 * (b - a) * w).ravel()


def bs_reference_price(payoff_spec: Dict[str, Any], spot: float, vol: float, steps: int,
                       step: float = 0.5, nodes: int = 8, panels: int = 14, paths: int = 100_000,
                       seed: int = 0) -> ReferencePrice:
    """Expected payoff under driftless lognormal dynamics sampled every ``step``.

    Up to three steps the expectation is a tensor Gauss-Legendre quadrature in
    cumulative log-returns, with panel breaks at the payoff's kink levels so
    that barrier and strike discontinuities fall on panel edges.  Longer
    paths use Monte Carlo and report a standard error.  Smooth payoffs are
    evaluated exactly, not through their grid approximation.
    """
    if not (spot > 0 and vol > 0 and step > 0 and steps >= 1):
        raise ValueError("need spot, vol, step > 0 and steps >= 1")
    f = payoff_formula(payoff_spec, spot)
    sd = vol * math.sqrt(step)
    drift = -0.5 * sd * sd
    if steps > 3:
        rng = np.random.default_rng(seed)
        Z = rng.standard_normal((paths, steps))
        X = spot * np.exp(np.cumsum(drift + sd * Z, axis=1))
        v = f(X)
        return ReferencePrice(float(v.mean()), float(v.std(ddof=1) / math.sqrt(paths)), "monte_carlo")
    kinks = sorted({v for row in payoff_kinks(payoff_spec, steps) for v in row if v > 0})
    axes = []
    for i in range(1, steps + 1):
        m, s = drift * i, sd * math.sqrt(i)
        edges = np.linspace(m - 9 * s, m + 9 * s, panels + 1)
        cuts = [math.log(k / spot) for k in kinks if m - 9 * s < math.log(k / spot) < m + 9 * s]
        axes.append(_gl_panels(np.unique(np.concatenate([edges, cuts])), nodes))
    mesh = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    S = np.stack([g.ravel() for g in mesh], axis=1)
    W = np.ones(S.shape[0])
    for g, (_, w) in zip(np.meshgrid(*[a[1] for a in axes], indexing="ij"), axes):
        W *= g.ravel()
    prev = np.zeros(S.shape[0])
    for i in range(steps):
        z = (S[:, i] - prev - drift) / sd
        W *= np.exp(-0.5 * z * z) / (sd * math.sqrt(2 * math.pi))
        prev = S[:, i]
    value = float(W @ f(spot * np.exp(S)))
    return ReferencePrice(value, None, "quadrature")

