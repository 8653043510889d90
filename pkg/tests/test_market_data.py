import json
import math
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad

from mfbounds.market_data import (MarketDataError, MarketSnapshot, VanillaQuote, bs_call_price,
                                  check_quote_sanity, interpolate_quotes, load_snapshot, save_snapshot,
                                  synthesize_snapshot)

DATA = Path(__file__).parent / "data"


def lognormal_call(spot, vol, T, K):
    """Integrate the call payoff against the driftless lognormal density."""
    s = vol * math.sqrt(T)
    m = math.log(spot) - 0.5 * s * s

    def dens(x):
        return math.exp(-0.5 * ((math.log(x) - m) / s) ** 2) / (x * s * math.sqrt(2 * math.pi))

    return quad(lambda x: (x - K) * dens(x), K, spot * math.exp(12 * s), limit=200)[0]


def test_csv_row_maps_to_quote(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("time_index,strike,bid,ask\n1,50,4.22,4.23\n")
    snap = load_snapshot(p)
    assert snap.quotes == (VanillaQuote(1, 50.0, 4.22, 4.23),)
    assert snap.n_times == 1


def test_csv_bid_above_ask_rejected(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("time_index,strike,bid,ask\n1,50,4.3,4.2\n")
    with pytest.raises(MarketDataError, match="bid exceeds ask") as exc:
        load_snapshot(p)
    assert "line 2" in str(exc.value)


def test_empty_csv_rejected(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("")
    with pytest.raises(MarketDataError, match="no quotes for time index 1"):
        load_snapshot(p)


def test_csv_parse_error_names_field(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("time_index,strike,bid,ask\n1,50,abc,4.2\n")
    with pytest.raises(MarketDataError, match="line 2, field bid"):
        load_snapshot(p)


def test_strike_outside_box_rejected():
    with pytest.raises(MarketDataError, match="outside state box"):
        MarketSnapshot(1, (VanillaQuote(1, 120.0, 1.0, 1.0),), (), 100.0)


def test_missing_maturity_rejected():
    with pytest.raises(MarketDataError, match="no quotes for time index 2"):
        MarketSnapshot(2, (VanillaQuote(1, 50.0, 1.0, 1.0),))


def test_fixture_with_spreads_loads():
    snap = load_snapshot(DATA / "spread_quotes.csv")
    assert snap.n_times == 2
    assert len(snap.quotes) == 12
    assert all(q.bid < q.ask for q in snap.quotes)
    assert snap.state_bounds == (0.0, 120.0)
    assert check_quote_sanity(snap) == []


def test_bs_zero_strike_is_spot():
    assert bs_call_price(50, 0.30, 0.5, 0) == 50


def test_bs_atm_matches_integration():
    oracle = lognormal_call(50, 0.30, 0.5, 50)
    assert abs(oracle - 4.2235) < 5e-5
    assert abs(bs_call_price(50, 0.30, 0.5, 50) - oracle) < 1e-8


@pytest.mark.parametrize("K", [20.0, 35.0, 62.0, 90.0])
def test_bs_matches_integration_off_the_money(K):
    assert abs(bs_call_price(50, 0.30, 1.5, K) - lognormal_call(50, 0.30, 1.5, K)) < 1e-8


def test_bs_deep_otm():
    assert bs_call_price(50, 0.30, 0.5, 1e6) < 1e-12


def test_bs_rejects_bad_input():
    with pytest.raises(ValueError):
        bs_call_price(50, float("nan"), 0.5, 50)
    with pytest.raises(ValueError):
        bs_call_price(-1, 0.3, 0.5, 50)


def test_bs_monotone_and_convex_in_strike():
    ks = np.linspace(1, 150, 300)
    c = np.array([bs_call_price(50, 0.3, 1.0, k) for k in ks])
    assert np.all(np.diff(c) <= 1e-10)
    assert np.all(c[1:-1] <= 0.5 * (c[:-2] + c[2:]) + 1e-10)


def test_bs_put_call_lower_bound(rng):
    for _ in range(200):
        s, v, t, k = rng.uniform(1, 200), rng.uniform(0.01, 1.5), rng.uniform(0.01, 5), rng.uniform(0, 400)
        c = bs_call_price(s, v, t, k)
        assert c + k >= s - 1e-9
        assert max(s - k, 0.0) <= c <= s


def test_synthesize_even_ladder():
    snap = synthesize_snapshot(50, 0.30, 0.5, 2, range(30, 61, 2))
    assert [len(snap.quotes_at(i)) for i in (1, 2)] == [16, 16]
    q = snap.quotes_at(2)[10]
    assert q.bid == q.ask == bs_call_price(50, 0.3, 1.0, q.strike)


def test_synthesize_single_quote():
    snap = synthesize_snapshot(50, 0.30, 0.5, 1, [50], 100)
    (q,) = snap.quotes
    assert q.bid == q.ask
    assert abs(q.bid - lognormal_call(50, 0.3, 0.5, 50)) < 1e-8


def test_synthesize_without_strikes():
    with pytest.raises(MarketDataError, match="no strikes"):
        synthesize_snapshot(50, 0.30, 0.5, 2, [], 100)


def test_sanity_clean_for_black_scholes():
    assert check_quote_sanity(synthesize_snapshot(50, 0.3, 0.5, 3, range(30, 61, 2))) == []


def test_sanity_monotonicity_warning():
    snap = MarketSnapshot(1, (VanillaQuote(1, 40, 5, 5), VanillaQuote(1, 50, 6, 6)), (), 100)
    w = check_quote_sanity(snap)
    assert len(w) == 1 and "monotone" in w[0] and "K=50" in w[0]


def test_sanity_v_shape_flags_monotonicity_not_convexity():
    # 1 lies below the chord (4 + 3) / 2, so K=50 is convex; the rise to K=60 is the violation
    snap = MarketSnapshot(1, (VanillaQuote(1, 40, 4, 4), VanillaQuote(1, 50, 1, 1),
                              VanillaQuote(1, 60, 3, 3)), (), 100)
    w = check_quote_sanity(snap)
    assert not any("convex" in s for s in w)
    assert any("monotone" in s and "K=60" in s for s in w)


def test_sanity_convexity_violation_detected():
    # mid at K=50 above the chord of its neighbours
    snap = MarketSnapshot(1, (VanillaQuote(1, 40, 6, 6), VanillaQuote(1, 50, 5, 5),
                              VanillaQuote(1, 60, 1, 1)), (), 100)
    assert any("convex" in s and "K=50" in s for s in check_quote_sanity(snap))


def test_sanity_price_above_box():
    snap = MarketSnapshot(1, (VanillaQuote(1, 5, 30, 30),), (), 20)
    assert any("exceeds state upper bound" in s for s in check_quote_sanity(snap))


@pytest.mark.parametrize("suffix", ["csv", "json"])
def test_round_trip(tmp_path, suffix):
    snap = load_snapshot(DATA / "spread_quotes.csv")
    if suffix == "csv":
        p = tmp_path / "s.csv"
        save_snapshot(snap, p)
        back = load_snapshot(p)
    else:
        snap = snap.with_bounds(0.0, 150.0)
        p = tmp_path / "s.json"
        save_snapshot(snap, p)
        back = load_snapshot(p)
        assert json.loads(p.read_text())["state_bounds"] == [0.0, 150.0]
    assert back == snap


def test_interpolated_quote_inherits_spread():
    snap = load_snapshot(DATA / "spread_quotes.csv")
    out = interpolate_quotes(snap, [50.0, 40.0, 70.0])
    new = [q for q in out.quotes if q.strike == 50.0]
    assert len(new) == 2 and len(out.quotes) == 14
    a, b = snap.quotes_at(1)[2], snap.quotes_at(1)[3]
    q = [q for q in new if q.time_index == 1][0]
    assert abs(q.mid - 0.5 * (a.mid + b.mid)) < 1e-12
    assert abs((q.ask - q.bid) - max(a.ask - a.bid, b.ask - b.bid)) < 1e-12
