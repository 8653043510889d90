import numpy as np
import pytest
from scipy.optimize import linprog

from mfbounds.dual import build_dual
from mfbounds.grid import build_grid
from mfbounds.lp import lp_from_dense
from mfbounds.market_data import MarketSnapshot, VanillaQuote
from mfbounds.payoffs import make_barrier
from mfbounds.simplex import (INFEASIBLE, OPTIMAL, UNBOUNDED, ITERATION_LIMIT, MatrixColumnSource, SolverOptions,
                              dual_objective, solve, solve_column_generation)

from helpers import ladder_snapshot, random_lp


def highs(c, A, rel, b, lb, ub):
    le, ge, eq = rel == "<=", rel == ">=", rel == "="
    A_ub = np.vstack([A[le], -A[ge]])
    b_ub = np.concatenate([b[le], -b[ge]])
    r = linprog(c, A_ub=A_ub if len(A_ub) else None, b_ub=b_ub if len(b_ub) else None,
                A_eq=A[eq] if eq.any() else None, b_eq=b[eq] if eq.any() else None,
                bounds=list(zip(lb, ub)), method="highs")
    return {0: OPTIMAL, 2: INFEASIBLE, 3: UNBOUNDED}[r.status], r.fun


def test_lower_bound_row():
    s = solve(lp_from_dense([1], [[1]], [">="], [3]))
    assert s.status == OPTIMAL and s.primal_values[0] == 3 and s.objective_value == 3


def test_unbounded():
    assert solve(lp_from_dense([-1])).status == UNBOUNDED


def test_infeasible():
    assert solve(lp_from_dense([0], [[1], [1]], [">=", "<="], [1, 0])).status == INFEASIBLE


def test_iteration_limit():
    rng = np.random.default_rng(3)
    c, A, rel, b, lb, ub = random_lp(rng, 12, 15)
    s = solve(lp_from_dense(-np.abs(c) - 1, A, rel, b, lb, np.full(len(c), 3.0)), SolverOptions(max_iters=1))
    assert s.status in (ITERATION_LIMIT, OPTIMAL)
    assert s.primal_values.shape == c.shape


def test_bad_options():
    with pytest.raises(ValueError):
        SolverOptions(tol=0)
    with pytest.raises(ValueError):
        SolverOptions(pricing="steepest")


@pytest.mark.parametrize("pricing", ["dantzig", "bland"])
def test_random_against_highs(pricing):
    rng = np.random.default_rng(0)
    for _ in range(150):
        c, A, rel, b, lb, ub = random_lp(rng)
        lp = lp_from_dense(c, A, rel, b, lb, ub)
        s = solve(lp, SolverOptions(pricing=pricing))
        status, fun = highs(c, A, rel, b, lb, ub)
        assert s.status == status
        if status == OPTIMAL:
            assert abs(s.objective_value - fun) <= 1e-7 * (1 + abs(fun))
            assert abs(dual_objective(lp, s) - s.objective_value) <= 1e-7 * (1 + abs(fun))
            assert lp.residuals(s.primal_values).max() <= 1e-7
            # complementary slackness on rows
            slack = lp.rhs - lp.A @ s.primal_values
            assert np.max(np.abs(slack * s.dual_values)) <= 1e-7 * (1 + np.abs(s.dual_values).max())


def test_maximise_sign_convention():
    s = solve(lp_from_dense([1, 1], [[1, 2], [3, 1]], ["<=", "<="], [4, 6], sense="max"))
    assert s.objective_value == pytest.approx(2.8)
    assert s.primal_values == pytest.approx([1.6, 1.2])


def test_deterministic():
    lp = build_dual(ladder_snapshot(2), *_digital(ladder_snapshot(2)))
    a, b = solve(lp), solve(lp)
    assert a.objective_value == b.objective_value
    assert a.basis == b.basis and a.iterations == b.iterations
    assert np.array_equal(a.primal_values, b.primal_values)


def _digital(snap):
    g = build_grid(snap, [34, 56])
    return g, make_barrier(g, 34, 56, "digital")


def _rescaled_instance(kappa):
    """The 2-step digital instance in a currency unit ``kappa`` times smaller:
    strikes, box, barriers, quotes and payoff all scale by ``kappa``."""
    base = ladder_snapshot(2)
    q = [VanillaQuote(v.time_index, kappa * v.strike, kappa * v.bid, kappa * v.ask)
         for v in base.quotes if v.strike % 6 == 0]
    snap = MarketSnapshot(2, tuple(q), (), kappa * 120.0)
    g = build_grid(snap, [kappa * 34, kappa * 56])
    h = make_barrier(g, kappa * 34, kappa * 56, "digital")
    return snap, g, type(h)(g, h.cell, kappa * h.grad, kappa * h.offset, h.cuts)


@pytest.mark.parametrize("kappa", [1e-3, 1e3])
def test_scale_robustness(kappa):
    lp = build_dual(*_rescaled_instance(1.0))
    base = solve(lp)
    s = solve(build_dual(*_rescaled_instance(kappa)))
    assert s.status == OPTIMAL
    assert abs(s.objective_value - kappa * base.objective_value) <= 1e-8 * abs(kappa * base.objective_value)
    # the program is degenerate, so the basis found may differ; it must still
    # be an optimal basis of the unscaled program
    again = solve(lp, warm_start=s.warm)
    assert again.iterations == 0
    assert abs(again.objective_value - base.objective_value) <= 1e-12


def test_column_generation_matches_full_solve():
    rng = np.random.default_rng(1)
    touched_less = False
    done = 0
    while done < 5:
        c, A, rel, b, lb, ub = random_lp(rng, 30, 300)
        lp = lp_from_dense(c, A, rel, b, lb, ub)
        full = solve(lp)
        if full.status != OPTIMAL:
            continue
        cg = solve_column_generation(MatrixColumnSource(lp))
        assert cg.solution.status == OPTIMAL
        assert abs(cg.solution.objective_value - full.objective_value) <= 1e-8 * (1 + abs(full.objective_value))
        touched_less |= cg.n_materialized < lp.n_vars
        done += 1
    assert touched_less


def test_column_generation_with_no_columns_to_add():
    lp = lp_from_dense([1, 2], [[1, 1]], [">="], [1])
    cg = solve_column_generation(MatrixColumnSource(lp, initial=["x1", "x2"]))
    assert cg.rounds == 1 and cg.n_materialized == 2
    assert cg.solution.objective_value == pytest.approx(1)


def test_lp_text_dump():
    lp = lp_from_dense([1, -2], [[1, 1]], ["<="], [4], ub=[np.inf, 3])
    text = lp.to_lp_text()
    for token in ("Minimize", "Subject To", "Bounds", "End", "x2 <= 3"):
        assert token in text
