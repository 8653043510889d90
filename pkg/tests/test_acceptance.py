"""Acceptance criteria, one test per criterion.

Every test records a single ``criterion N: PASS|FAIL ...`` line; the lines are
collected in the terminal summary.  Tolerances are pinned at module level.
"""

import json
import math
import time

import numpy as np
import pytest

from mfbounds.dual import build_dual, solve_dual
from mfbounds.engine import BoundsConfig, InfeasibleMarketError, price_bounds
from mfbounds.grid import Grid, build_grid
from mfbounds.lp import lp_from_dense
from mfbounds.market_data import ExtraQuote, MarketSnapshot, VanillaQuote, bs_call_price
from mfbounds.payoffs import build_payoff, payoff_formula, payoff_kinks
from mfbounds.primal import build_primal
from mfbounds.simplex import OPTIMAL, MatrixColumnSource, solve, solve_column_generation

from helpers import SPOT, STEP, VOL, ladder_snapshot, random_lp, random_payoff, random_snapshot

DUALITY_TOL = 1e-6
DUALITY_BUDGET = 60.0
SANDWICH_TOL = 1e-4
SANDWICH_BUDGET = 120.0
TABLE_RTOL = 0.02
VANILLA_TOL = 1e-6
INCREMENT_TOL = 1e-8
MONOTONE_TOL = 1e-8
REFINE_TOL = 1e-6
DOMINANCE_TOL = 1e-6
COST_TOL = 1e-8
CG_TOL = 1e-8
MC_PATHS = 100_000

BARRIERS = {"B1": 34.0, "B2": 56.0, "K": 50.0}
# published values for the synthetic experiment, used for comparison only
PUBLISHED = {
    ("barrier_digital", 2): (0.282622, 0.612447, 0.4232),
    ("barrier_call", 2): (0.0, 0.527483, 0.202),
    ("barrier_digital", 3): (0.0610184, 0.533453, 0.2732),
    ("barrier_call", 3): (0.0, 0.43506, 0.1),
}
PUBLISHED_VARSWAP = {2: (0.0, 0.187674, 0.0919), 3: (0.0, 0.326711, 0.1369)}


def verdict(ok):
    return "PASS" if ok else "FAIL"


def band_snapshot(rng, n, upper=200.0):
    """Quotes priced at two Black-Scholes volatilities, bid at the lower and
    ask at the higher one.  Every band end is attained by a lognormal model,
    so each quote's band is exactly its model-free range."""
    lo = rng.uniform(0.2, 0.3)
    hi = lo + rng.uniform(0.02, 0.1)
    quotes = []
    for i in range(1, n + 1):
        ks = np.sort(rng.choice(np.arange(30, 72, 3), size=int(rng.integers(3, 7)), replace=False))
        for k in ks:
            quotes.append(VanillaQuote(i, float(k), bs_call_price(SPOT, lo, STEP * i, float(k)),
                                       bs_call_price(SPOT, hi, STEP * i, float(k))))
    return MarketSnapshot(n, tuple(quotes), (), upper, 0.0)


@pytest.fixture(scope="module")
def ladder_reports():
    """Bounds with Black-Scholes reference for both barrier payoffs at 2 and 3 steps."""
    cfg = BoundsConfig(bs_vol=VOL, bs_step=STEP, spot=SPOT)
    out, t0 = {}, time.perf_counter()
    for n in (2, 3):
        snap = ladder_snapshot(n)
        for kind in ("barrier_digital", "barrier_call"):
            out[(kind, n)] = price_bounds(snap, {"type": kind, "params": dict(BARRIERS)}, cfg)
    return out, time.perf_counter() - t0


def test_criterion_1_finite_strong_duality(record):
    rng = np.random.default_rng(7)
    worst, count, t0 = 0.0, 0, time.perf_counter()
    for t in range(24):
        n = 1 + t % 3
        snap, spec = random_snapshot(rng, n), random_payoff(rng, n)
        g = build_grid(snap, payoff_kinks(spec, n))
        assert all(3 <= s <= 8 for s in g.sizes)
        f = build_payoff(spec, g).function
        for b, sgn in (("upper", 1.0), ("lower", -1.0)):
            d = solve_dual(build_dual(snap, g, f, b), strategy="full").solution
            p = solve(build_primal(snap, g, f, b))
            assert d.status == p.status == OPTIMAL
            v = p.objective_value
            worst = max(worst, abs(sgn * d.objective_value - v) / (1 + abs(v)))
        count += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= DUALITY_TOL and elapsed < DUALITY_BUDGET and count >= 20
    record(f"criterion 1: {verdict(ok)} {count} instances, worst scaled gap {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_black_scholes_sandwich(ladder_reports, record):
    reports, elapsed = ladder_reports
    ok = elapsed < SANDWICH_BUDGET
    for (kind, n), r in sorted(reports.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        ref = r.bs_reference.value
        inside = r.lower - SANDWICH_TOL <= ref <= r.upper + SANDWICH_TOL
        ok &= inside
        pub = PUBLISHED[(kind, n)][2]
        print(f"{kind} n={n}: [{r.lower:.7f}, {r.upper:.7f}] reference {ref:.5f} "
              f"(published {pub}, difference {ref - pub:+.4f}) {'inside' if inside else 'OUTSIDE'}")
    record(f"criterion 2: {verdict(ok)} 4 payoffs sandwiched within {SANDWICH_TOL:g}, {elapsed:.1f}s; "
           f"published reference column differs from quadrature (see report lines)")
    assert ok


def test_criterion_3_table_reproduction(record):
    target = PUBLISHED[("barrier_digital", 2)][:2]
    spec = {"type": "barrier_digital", "params": dict(BARRIERS)}
    snap = ladder_snapshot(2)
    readings = {
        "A: 34/56 are barrier levels": BoundsConfig(oracle=True, spot=SPOT),
        "B: 34/56 are the state box": BoundsConfig(oracle=True, spot=SPOT, state_lower=34.0, state_upper=56.0),
    }
    rows, matched = [], []
    for name, cfg in readings.items():
        row = {"reading": name, "config": {k: v for k, v in cfg.to_json().items()
                                           if k in ("state_lower", "state_upper", "refine", "oracle")},
               "payoff": spec, "target": list(target)}
        try:
            r = price_bounds(snap, spec, cfg)
        except InfeasibleMarketError as exc:
            row.update(status="infeasible", bounds=None, gap_vs_oracle=None, detail=str(exc))
        else:
            rel = [abs(v - t) / abs(t) for v, t in zip((r.lower, r.upper), target)]
            row.update(status="solved", bounds=[r.lower, r.upper], gap_vs_oracle=r.gap_vs_oracle,
                       relative_error=rel)
            if max(rel) <= TABLE_RTOL:
                matched.append(name)
        rows.append(row)
    print(json.dumps({"discrepancy_report": rows}, indent=2, default=str))
    ok = bool(matched)
    record(f"criterion 3: {verdict(ok)} matching readings: {matched or 'none'}; "
           f"bounds " + "; ".join(f"{r['reading'][0]}=" + (f"[{r['bounds'][0]:.7f}, {r['bounds'][1]:.7f}]"
                                                    if r['bounds'] else r['status']) for r in rows))
    assert ok


def test_criterion_4_vanilla_self_consistency(record):
    rng = np.random.default_rng(4)
    worst, count = 0.0, 0
    for n in (1, 2):
        for _ in range(2):
            snap = band_snapshot(rng, n)
            for q in snap.quotes:
                r = price_bounds(snap, {"type": "call", "params": {"time": q.time_index, "K": q.strike}})
                worst = max(worst, abs(r.lower - q.bid), abs(r.upper - q.ask))
                count += 1
    ok = worst <= VANILLA_TOL
    record(f"criterion 4: {verdict(ok)} {count} quotes on n=1,2, worst |bound - quote| {worst:.2e}")
    assert ok


def test_criterion_5_martingale_degeneracy(record):
    rng = np.random.default_rng(5)
    snaps = [ladder_snapshot(2), ladder_snapshot(3)] + [random_snapshot(rng, n, max_strikes=4) for n in (2, 3, 3)]
    worst, count = 0.0, 0
    for snap in snaps:
        for k in range(1, snap.n_times):
            r = price_bounds(snap, {"type": "increment", "params": {"k": k}})
            worst = max(worst, abs(r.lower), abs(r.upper))
            count += 1
    ok = worst <= INCREMENT_TOL
    record(f"criterion 5: {verdict(ok)} {count} increments on {len(snaps)} snapshots, worst |bound| {worst:.2e}")
    assert ok


def test_criterion_6_monotonicity_in_information(record):
    rng = np.random.default_rng(6)
    worst, tightened = 0.0, 0
    for _ in range(10):
        n = int(rng.integers(1, 3))
        snap, spec = random_snapshot(rng, n), random_payoff(rng, n)
        extra_spec = random_payoff(rng, n)
        base = price_bounds(snap, spec)
        # any price strictly inside the extra payoff's own bounds is attained
        # by some admissible model, so a band around it is consistent
        rng_e = price_bounds(snap, extra_spec)
        lo, hi = sorted(rng_e.lower + (rng_e.upper - rng_e.lower) * rng.uniform(0.1, 0.9, size=2))
        aug = price_bounds(snap.with_extras([ExtraQuote(extra_spec, float(lo), float(hi))]), spec)
        worst = max(worst, base.lower - aug.lower, aug.upper - base.upper)
        tightened += (aug.lower > base.lower + 1e-6) or (aug.upper < base.upper - 1e-6)
    ok = worst <= MONOTONE_TOL
    record(f"criterion 6: {verdict(ok)} 10 augmentations ({tightened} strictly tighter), "
           f"worst widening {max(worst, 0.0):.2e}")
    assert ok


def test_criterion_7_grid_refinement_stability(ladder_reports, record):
    base = ladder_reports[0][("barrier_digital", 2)]
    fine = price_bounds(ladder_snapshot(2), {"type": "barrier_digital", "params": dict(BARRIERS)},
                        BoundsConfig(refine=1))
    change = max(abs(fine.lower - base.lower), abs(fine.upper - base.upper))
    ok = change <= REFINE_TOL
    record(f"criterion 7: {verdict(ok)} bisected grid {fine.grid['points_per_time']} changes bounds by {change:.2e}")
    assert ok


def test_criterion_8_certificate_superreplication(ladder_reports, record):
    rng = np.random.default_rng(8)
    worst_dom, worst_cost = math.inf, 0.0
    for (kind, n), r in ladder_reports[0].items():
        snap = ladder_snapshot(n)
        g = Grid(tuple(np.asarray(p) for p in r.grid["points"]))
        X = g.lower + rng.random((10_000, n)) * (g.upper - g.lower)
        h = payoff_formula(r.payoff)(X)
        mids = {(q.time_index, q.strike): (q.bid, q.ask) for q in snap.quotes}
        for b, sgn in (("upper", 1.0), ("lower", -1.0)):
            c = r.certificates[b]
            worst_dom = min(worst_dom, float(np.min(sgn * (c.payoff(X, g) - h))))
            # a long leg is bought at the ask for the super-hedge and sold at the bid for the sub-hedge
            cost = c.cash + sum(q * mids[(t, K)][(q > 0) == (b == "upper")] for t, K, q in c.vanilla_positions)
            value = r.upper if b == "upper" else r.lower
            worst_cost = max(worst_cost, abs(cost - value), abs(c.cost - value))
    ok = worst_dom >= -DOMINANCE_TOL and worst_cost <= COST_TOL
    record(f"criterion 8: {verdict(ok)} 8 certificates at 10^4 points, worst dominance {worst_dom:.2e}, "
           f"worst cost error {worst_cost:.2e}")
    assert ok


def lazy_farkas_instance():
    """Dual LP where only one cell carries payoff, so few Farkas columns matter."""
    q = tuple(VanillaQuote(i, 50.0, bs_call_price(SPOT, VOL, STEP * i, 50) - 0.2,
                           bs_call_price(SPOT, VOL, STEP * i, 50) + 0.2) for i in (1, 2))
    snap = MarketSnapshot(2, q, (), 100.0)
    g = Grid((np.arange(0, 101, 10.0),) * 2)
    h = build_payoff({"type": "custom_pwl", "params": {"pieces": [
        {"lower": [60, 60], "upper": [70, 70], "gradient": [0, 0], "offset": 1.0}]}}, g).function
    lp = build_dual(snap, g, h)
    s0, e0 = lp.blocks["lam"]
    return lp, [nm for j, nm in enumerate(lp.var_names) if not s0 <= j < e0]


def test_criterion_9_column_generation_equivalence(record):
    rng = np.random.default_rng(9)
    instances = [lazy_farkas_instance()]
    while len(instances) < 5:
        lp = lp_from_dense(*random_lp(rng, 30, 300))
        if solve(lp).status == OPTIMAL:
            instances.append((lp, None))
    worst, fewer, sizes = 0.0, 0, []
    for lp, init in instances:
        assert lp.n_vars <= 500
        full = solve(lp)
        cg = solve_column_generation(MatrixColumnSource(lp, init), batch=16)
        assert cg.solution.status == OPTIMAL
        worst = max(worst, abs(cg.solution.objective_value - full.objective_value) / (1 + abs(full.objective_value)))
        fewer += cg.n_materialized < lp.n_vars
        sizes.append(f"{cg.n_materialized}/{lp.n_vars}")
    ok = worst <= CG_TOL and fewer >= 1
    record(f"criterion 9: {verdict(ok)} 5 instances, worst difference {worst:.2e}, "
           f"columns materialized {', '.join(sizes)}")
    assert ok


def test_criterion_10_variance_swap_validity(record):
    spec = {"type": "variance_swap", "params": {"mode": "under", "spot": SPOT}}
    r = price_bounds(ladder_snapshot(2), spec, BoundsConfig(spot=SPOT))
    rng = np.random.default_rng(10)
    sd = VOL * math.sqrt(STEP)
    X = SPOT * np.exp(np.cumsum(-0.5 * sd * sd + sd * rng.standard_normal((MC_PATHS, 2)), axis=1))
    v = payoff_formula(spec, SPOT)(X)
    mc, se = float(v.mean()), float(v.std(ddof=1) / math.sqrt(MC_PATHS))
    ok = r.approximation["lower"] == "under" and r.lower <= mc + 3 * se
    pub = PUBLISHED_VARSWAP[2]
    print(f"variance swap n=2 (under): lower {r.lower:.6f}, Monte Carlo {mc:.6f} +- {se:.1e}; "
          f"published row lower {pub[0]} upper {pub[1]} reference {pub[2]} (informational)")
    record(f"criterion 10: {verdict(ok)} lower {r.lower:.6f} <= Monte Carlo {mc:.6f} + 3*{se:.1e}")
    assert ok
