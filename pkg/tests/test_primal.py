import numpy as np
import pytest

from mfbounds.grid import Grid, build_grid
from mfbounds.lp import lp_from_dense
from mfbounds.market_data import MarketSnapshot, VanillaQuote
from mfbounds.payoffs import make_barrier, make_call, make_increment
from mfbounds.primal import (AtomicMeasure, PrimalError, build_primal, check_martingale, extract_measure)
from mfbounds.simplex import OPTIMAL, solve

from helpers import ladder_snapshot

C50 = 4.2235


def test_call_pinned_by_quote():
    snap = MarketSnapshot(1, (VanillaQuote(1, 50.0, C50, C50),), (), 100.0)
    g = build_grid(snap)
    for b in ("upper", "lower"):
        s = solve(build_primal(snap, g, make_call(g, 1, 50), b))
        assert s.objective_value == pytest.approx(C50, abs=1e-10)


def test_increment_forced_to_zero():
    snap = ladder_snapshot(2)
    g = build_grid(snap)
    for b in ("upper", "lower"):
        assert abs(solve(build_primal(snap, g, make_increment(g, 1), b)).objective_value) <= 1e-10


def test_digital_without_informative_quotes():
    # a single quote with a band as wide as the payoff range says nothing
    snap = MarketSnapshot(2, tuple(VanillaQuote(i, 50.0, 0.0, 50.0) for i in (1, 2)), (), 100.0)
    g = build_grid(snap, [34, 56])
    h = make_barrier(g, 34, 56, "digital")
    assert solve(build_primal(snap, g, h, "upper")).objective_value == pytest.approx(1.0)
    assert solve(build_primal(snap, g, h, "lower")).objective_value == pytest.approx(0.0, abs=1e-12)


def test_atom_cap():
    snap = ladder_snapshot(2)
    g = build_grid(snap)
    with pytest.raises(PrimalError, match="coarser grid"):
        build_primal(snap, g, make_increment(g, 1), atom_cap=100)


def test_extract_optimal_measure():
    snap = ladder_snapshot(2)
    g = build_grid(snap, [34, 56])
    lp = build_primal(snap, g, make_barrier(g, 34, 56, "digital"), "upper")
    m = extract_measure(solve(lp))
    assert abs(m.mass - 1.0) <= 1e-9
    for x in m.points:
        assert all(v in p for v, p in zip(x, g.points))
    rep = check_martingale(m, g)
    assert rep.passed and rep.max_residual <= 1e-8
    # reprices every quote
    for q in snap.quotes:
        assert m.expectation(lambda X: np.maximum(X[:, q.time_index - 1] - q.strike, 0)) == pytest.approx(q.bid, abs=1e-8)


def test_extract_point_mass():
    lp = lp_from_dense([1.0], [[1.0]], ["="], [1.0])
    lp.var_names[0] = "w[50.0,50.0|0,0]"
    m = extract_measure(solve(lp))
    assert m.as_dict() == {(50.0, 50.0): 1.0}


def test_extract_needs_optimal():
    s = solve(lp_from_dense([0.0], [[1.0], [1.0]], [">=", "<="], [1, 0]))
    with pytest.raises(PrimalError, match="no measure"):
        extract_measure(s)


def test_check_martingale_examples():
    g = Grid((np.array([0, 50, 100.0]),) * 2)
    assert check_martingale(AtomicMeasure([[50, 50]], [1.0]), g).max_residual == 0
    assert check_martingale(AtomicMeasure([[50, 60], [50, 40]], [0.5, 0.5]), g).max_residual == 0
    rep = check_martingale(AtomicMeasure([[50, 60]], [1.0]), g, tol=1e-6)
    assert rep.max_residual == 10 and not rep.passed


def test_measure_json_round_trip():
    m = AtomicMeasure([[50, 60], [50, 40]], [0.25, 0.75], [[0, 1], [0, 0]])
    back = AtomicMeasure.from_json(m.to_json())
    assert np.array_equal(back.points, m.points) and np.array_equal(back.weights, m.weights)
    assert np.array_equal(back.cells, m.cells)


def test_weak_duality_with_any_feasible_measure():
    """Any feasible primal point prices below the upper bound."""
    from mfbounds.dual import build_dual, solve_dual
    snap = ladder_snapshot(2)
    g = build_grid(snap, [34, 56])
    h = make_barrier(g, 34, 56, "call", 50)
    upper = solve_dual(build_dual(snap, g, h)).solution.objective_value
    lower = -solve_dual(build_dual(snap, g, h, "lower")).solution.objective_value
    for b in ("upper", "lower"):
        s = solve(build_primal(snap, g, h, b))
        assert s.status == OPTIMAL
        assert lower - 1e-9 <= s.objective_value <= upper + 1e-9
