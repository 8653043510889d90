"""Shared instance generators for the test suite."""

import numpy as np

from mfbounds.market_data import MarketSnapshot, VanillaQuote, bs_call_price, synthesize_snapshot

SPOT, VOL, STEP = 50.0, 0.30, 0.5
LADDER = list(range(30, 61, 2))


def ladder_snapshot(n):
    """Zero-spread Black-Scholes quotes on the even strikes 30..60."""
    return synthesize_snapshot(SPOT, VOL, STEP, n, LADDER)


def random_snapshot(rng, n, max_strikes=3, upper=200.0, spread=(0.02, 0.25)):
    """Bid/ask bands around Black-Scholes mids on a random strike subset per
    maturity.  The box is wide enough that the truncated tail is far smaller
    than the narrowest band."""
    quotes = []
    for i in range(1, n + 1):
        m = int(rng.integers(1, max_strikes + 1))
        ks = np.sort(rng.choice(np.arange(36, 66, 2), size=m, replace=False))
        for k in ks:
            mid = bs_call_price(SPOT, VOL, i * STEP, float(k))
            h = float(rng.uniform(*spread))
            quotes.append(VanillaQuote(i, float(k), max(mid - h, 0.0), mid + h))
    return MarketSnapshot(n, tuple(quotes), (), upper, 0.0)


def random_payoff(rng, n):
    """A catalog payoff with kinks on the 2-step lattice 30..64."""
    b1 = float(rng.choice([34, 38, 42]))
    b2 = float(rng.choice([56, 60, 64]))
    k = float(rng.choice([44, 48, 50, 54]))
    kind = rng.choice(["barrier_digital", "barrier_call", "barrier_put", "lookback_fixed_call",
                       "lookback_float_call", "lookback_float_put", "asian_fixed_call",
                       "asian_float_call", "call"])
    params = {"B1": b1, "B2": b2, "K": k}
    if kind == "call":
        params = {"time": n, "K": k}
    return {"type": str(kind), "params": params}


def random_lp(rng, m_max=12, n_max=15):
    m, n = int(rng.integers(1, m_max)), int(rng.integers(1, n_max))
    A = rng.normal(size=(m, n)).round(1)
    rel = rng.choice(["<=", "=", ">="], size=m)
    x0 = rng.uniform(0, 2, size=n)
    b = A @ x0 + np.where(rel == "<=", 1, np.where(rel == ">=", -1, 0)) * rng.uniform(0, 1, size=m)
    c = rng.normal(size=n)
    lb = np.where(rng.random(n) < 0.2, -np.inf, 0.0)
    ub = np.where(rng.random(n) < 0.3, 3.0, np.inf)
    return c, A, rel, b, lb, ub
