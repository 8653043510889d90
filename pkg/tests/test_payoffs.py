import numpy as np
import pytest

from mfbounds.grid import Grid
from mfbounds.payoffs import (CATALOG, PayoffError, PiecewiseLinearFunction, build_payoff, check_continuity,
                              make_asian, make_barrier, make_call, make_lookback, make_put,
                              make_variance_swap, payoff_formula, pwl_approximate, pwl_max, pwl_min)


def lattice(n, pts=(0, 30, 34, 40, 48, 50, 52, 55, 56, 60, 100)):
    return Grid((np.array(pts, dtype=float),) * n)


def sample(g, rng, size=10_000):
    return g.lower + rng.random((size, g.n_times)) * (g.upper - g.lower)


def test_call_values():
    g = Grid((np.array([0, 50, 100.0]),))
    f = make_call(g, 1, 50)
    assert f.evaluate([[60.0]])[0] == 10
    assert f.evaluate([[50.0]])[0] == 0
    assert f.grad[:, 0].tolist() == [0, 1] and f.offset.tolist() == [0, -50]


def test_put_values():
    g = Grid((np.array([0, 50, 100.0]),))
    f = make_put(g, 1, 50)
    assert f.grad[:, 0].tolist() == [-1, 0] and f.offset.tolist() == [50, 0]


def test_off_grid_strike():
    g = Grid((np.array([0, 50, 100.0]),))
    with pytest.raises(PayoffError, match="strike off-grid"):
        make_call(g, 1, 51)


def test_evaluate_outside_box():
    g = Grid((np.array([0, 50, 100.0]),))
    with pytest.raises(PayoffError):
        make_call(g, 1, 50).evaluate([[120.0]])


def test_barrier_examples():
    g = lattice(2)
    d = make_barrier(g, 34, 56, "digital")
    assert d.evaluate([[50, 50], [60, 50], [40, 55]]).tolist() == [1, 0, 1]
    c = make_barrier(g, 34, 56, "call", 50)
    assert c.evaluate([[40, 55], [40, 60]]).tolist() == [5, 0]
    with pytest.raises(PayoffError):
        make_barrier(g, 56, 34, "digital")
    with pytest.raises(PayoffError):
        make_barrier(g, 33, 56, "digital")


def test_lookback_examples():
    g = lattice(3)
    x = [[48, 55, 52]]
    assert make_lookback(g, "fixed_call", 50).evaluate(x)[0] == pytest.approx(5, abs=1e-12)
    assert make_lookback(g, "float_call").evaluate(x)[0] == pytest.approx(4, abs=1e-12)
    assert make_lookback(g, "float_put").evaluate(x)[0] == pytest.approx(3, abs=1e-12)


def test_asian_examples():
    g = lattice(2)
    f = make_asian(g, "fixed_call", 50)
    assert f.evaluate([[48, 52], [50, 56]]) == pytest.approx([0, 3], abs=1e-12)
    assert make_asian(g, "float_put").evaluate([[48, 52]])[0] == pytest.approx(-2, abs=1e-12)


def test_max_min_examples():
    g = Grid((np.array([0, 100.0]),))
    x = PiecewiseLinearFunction.affine(g, [1.0], -50.0)
    call = pwl_max(x, PiecewiseLinearFunction.constant(g, 0.0))
    X = np.linspace(0, 100, 101)[:, None]
    assert np.allclose(call.evaluate(X), np.maximum(X[:, 0] - 50, 0), atol=1e-12)
    assert pwl_max(x, x).n_pieces == x.n_pieces
    g2 = Grid((np.array([0, 100.0]),) * 2)
    m = pwl_max(PiecewiseLinearFunction.affine(g2, [1, 0]), PiecewiseLinearFunction.affine(g2, [0, 1]))
    assert m.n_pieces == 2


@pytest.mark.parametrize("spec", [
    {"type": "barrier_digital", "params": {"B1": 34, "B2": 56}},
    {"type": "barrier_call", "params": {"B1": 34, "B2": 56, "K": 50}},
    {"type": "barrier_put", "params": {"B1": 30, "B2": 60, "K": 48}},
    {"type": "call", "params": {"time": 2, "K": 52}},
    {"type": "put", "params": {"time": 1, "K": 40}},
    {"type": "lookback_fixed_call", "params": {"K": 50}},
    {"type": "lookback_fixed_put", "params": {"K": 45}},
    {"type": "lookback_float_call"},
    {"type": "lookback_float_put"},
    {"type": "asian_fixed_call", "params": {"K": 50}},
    {"type": "asian_fixed_put", "params": {"K": 47}},
    {"type": "asian_float_call"},
    {"type": "asian_float_put"},
    {"type": "increment", "params": {"k": 2}},
])
def test_exact_against_direct_formula(spec, rng):
    g = lattice(3)
    f = build_payoff(spec, g).function
    X = sample(g, rng)
    assert np.max(np.abs(f.evaluate(X) - payoff_formula(spec)(X))) <= 1e-12 * 100


def test_closure_matches_pointwise(rng):
    g = lattice(2)
    f = make_asian(g, "float_call")
    h = make_call(g, 1, 48)
    X = sample(g, rng)
    a, b = f.evaluate(X), h.evaluate(X)
    assert np.max(np.abs(pwl_max(f, h).evaluate(X) - np.maximum(a, b))) <= 1e-12 * 100
    assert np.max(np.abs(pwl_min(f, h).evaluate(X) - np.minimum(a, b))) <= 1e-12 * 100


def test_continuity():
    g = lattice(2)
    assert check_continuity(make_lookback(g, "fixed_call", 51)) <= 1e-9
    assert check_continuity(make_asian(g, "fixed_put", 50)) <= 1e-9
    assert check_continuity(make_barrier(g, 34, 56, "digital")) == pytest.approx(1.0)


def test_chord_and_tangent():
    g = Grid((np.array([0, 1.0]),))
    sq = lambda X: X[:, 0] ** 2
    over = pwl_approximate(sq, g, "over", "convex")
    assert over.grad[0, 0] == pytest.approx(1) and over.offset[0] == pytest.approx(0, abs=1e-12)
    under = pwl_approximate(sq, g, "under", "convex")
    assert under.grad[0, 0] == pytest.approx(1, abs=1e-8) and under.offset[0] == pytest.approx(-0.25, abs=1e-8)
    with pytest.raises(PayoffError):
        pwl_approximate(sq, g, "under")


def test_under_over_ordering(rng):
    g = Grid((np.linspace(-2, 3, 7), np.linspace(0, 4, 5)))
    h = lambda X: np.exp(0.5 * X[:, 0]) + X[:, 1] ** 2
    under = pwl_approximate(h, g, "under", "convex")
    over = pwl_approximate(h, g, "over", "convex")
    X = sample(g, rng)
    v = h(X)
    assert np.all(under.evaluate(X) <= v + 1e-12)
    assert np.all(v <= over.evaluate(X) + 1e-12)


@pytest.mark.parametrize("spot", [None, 50.0])
def test_variance_swap_sandwich(spot, rng):
    pts = np.array([5, 20, 30, 40, 45, 50, 55, 60, 80, 120.0])
    g = Grid((pts,) * 3)
    X = sample(g, rng)
    spec = {"type": "variance_swap", "params": {"include_spot": spot is not None}}
    exact = payoff_formula(spec, spot)(X)
    under = make_variance_swap(g, "under", spot).evaluate(X)
    over = make_variance_swap(g, "over", spot).evaluate(X)
    assert np.all(under <= exact + 1e-12)
    assert np.all(exact <= over + 1e-12)
    fine = g.bisect()
    gap = np.mean(over - under)
    fine_gap = np.mean(make_variance_swap(fine, "over", spot).evaluate(X) - make_variance_swap(fine, "under", spot).evaluate(X))
    assert fine_gap < 0.5 * gap


def test_log_payoff_needs_mode_and_positive_box():
    g = lattice(2)
    with pytest.raises(PayoffError, match="mode"):
        build_payoff({"type": "variance_swap"}, g)
    with pytest.raises(PayoffError, match="positive"):
        build_payoff({"type": "variance_swap", "params": {"mode": "under"}}, g)


def test_unknown_type_lists_catalog():
    with pytest.raises(PayoffError) as exc:
        build_payoff({"type": "rainbow"}, lattice(1))
    assert all(k in str(exc.value) for k in CATALOG)


def test_custom_pwl():
    g = lattice(1)
    spec = {"type": "custom_pwl", "params": {"default": 1.0, "pieces": [
        {"lower": [30], "upper": [50], "gradient": [2.0], "offset": -60.0}]}}
    f = build_payoff(spec, g).function
    X = np.array([[20.0], [40.0], [70.0]])
    assert f.evaluate(X).tolist() == [1.0, 20.0, 1.0]
    assert payoff_formula(spec)(X).tolist() == [1.0, 20.0, 1.0]
