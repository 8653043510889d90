"""Vanilla quote ingestion, validation and Black-Scholes synthesis."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

CSV_HEADER = ("time_index", "strike", "bid", "ask")


class MarketDataError(ValueError):
    """Raised for unparseable or inconsistent quote data.

    ``where`` names the offending line/field or quote, when known.
    """

    def __init__(self, message: str, where: Optional[str] = None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


@dataclass(frozen=True)
class VanillaQuote:
    time_index: int
    strike: float
    bid: float
    ask: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.strike, self.bid, self.ask)):
            raise MarketDataError("non-finite quote field", str(self))
        if self.time_index < 1:
            raise MarketDataError("time index must be >= 1", str(self))
        if self.strike <= 0:
            raise MarketDataError("strike must be positive", str(self))
        if self.bid < 0 or self.ask < 0:
            raise MarketDataError("negative price", str(self))
        if self.bid > self.ask:
            raise MarketDataError("bid exceeds ask", str(self))

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)


@dataclass(frozen=True)
class ExtraQuote:
    """Quote on a non-vanilla instrument; ``payoff`` is a payoff spec dict.

    One side may be infinite (a one-sided integral constraint).
    """

    payoff: Dict[str, Any]
    bid: float = -math.inf
    ask: float = math.inf

    def __post_init__(self):
        if math.isnan(self.bid) or math.isnan(self.ask):
            raise MarketDataError("NaN extra quote price")
        if self.bid > self.ask:
            raise MarketDataError("bid exceeds ask", f"extra {self.payoff.get('type')}")
        if self.bid == math.inf or self.ask == -math.inf:
            raise MarketDataError("extra quote side is infinite in the wrong direction")

    def to_json(self) -> Dict[str, Any]:
        return {"payoff": self.payoff,
                "bid": None if math.isinf(self.bid) else self.bid,
                "ask": None if math.isinf(self.ask) else self.ask}


@dataclass(frozen=True)
class MarketSnapshot:
    n_times: int
    quotes: Tuple[VanillaQuote, ...]
    extras: Tuple[ExtraQuote, ...] = ()
    state_upper_bound: Optional[float] = None
    state_lower_bound: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "quotes", tuple(self.quotes))
        object.__setattr__(self, "extras", tuple(self.extras))
        if self.n_times < 1:
            raise MarketDataError("n_times must be >= 1")
        for i in range(1, self.n_times + 1):
            if not any(q.time_index == i for q in self.quotes):
                raise MarketDataError(f"no quotes for time index {i}")
        for q in self.quotes:
            if q.time_index > self.n_times:
                raise MarketDataError(f"time index beyond n_times={self.n_times}", str(q))
        if self.state_upper_bound is None:
            object.__setattr__(self, "state_upper_bound", 2.0 * max(q.strike for q in self.quotes))
        lo, hi = self.state_lower_bound, self.state_upper_bound
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0 or lo >= hi:
            raise MarketDataError(f"invalid state bounds [{lo}, {hi}]")
        for q in self.quotes:
            if not lo < q.strike < hi:
                raise MarketDataError(f"strike outside state box ({lo}, {hi})", str(q))

    @property
    def state_bounds(self) -> Tuple[float, float]:
        return (self.state_lower_bound, float(self.state_upper_bound))

    def quotes_at(self, time_index: int) -> List[VanillaQuote]:
        return sorted((q for q in self.quotes if q.time_index == time_index), key=lambda q: q.strike)

    def strikes(self, time_index: int) -> List[float]:
        return [q.strike for q in self.quotes_at(time_index)]

    def with_extras(self, extras: Sequence[ExtraQuote]) -> "MarketSnapshot":
        return MarketSnapshot(self.n_times, self.quotes, tuple(self.extras) + tuple(extras),
                              self.state_upper_bound, self.state_lower_bound)

    def with_quotes(self, quotes: Sequence[VanillaQuote]) -> "MarketSnapshot":
        return MarketSnapshot(self.n_times, tuple(quotes), self.extras,
                              self.state_upper_bound, self.state_lower_bound)

    def with_bounds(self, lower: float, upper: float) -> "MarketSnapshot":
        return MarketSnapshot(self.n_times, self.quotes, self.extras, upper, lower)

    def to_json(self) -> Dict[str, Any]:
        return {
            "n_times": self.n_times,
            "state_bounds": [self.state_lower_bound, self.state_upper_bound],
            "quotes": [{"time_index": q.time_index, "strike": q.strike, "bid": q.bid, "ask": q.ask}
                       for q in self.quotes],
            "extras": [e.to_json() for e in self.extras],
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "MarketSnapshot":
        try:
            quotes = []
            for k, q in enumerate(data.get("quotes", [])):
                try:
                    quotes.append(VanillaQuote(int(q["time_index"]), float(q["strike"]),
                                               float(q["bid"]), float(q["ask"])))
                except KeyError as exc:
                    raise MarketDataError(f"missing field {exc.args[0]!r}", f"quotes[{k}]") from None
            extras = []
            for k, e in enumerate(data.get("extras", [])):
                bid = -math.inf if e.get("bid") is None else float(e["bid"])
                ask = math.inf if e.get("ask") is None else float(e["ask"])
                if "payoff" not in e:
                    raise MarketDataError("missing field 'payoff'", f"extras[{k}]")
                extras.append(ExtraQuote(e["payoff"], bid, ask))
            bounds = data.get("state_bounds") or [0.0, None]
            n_times = int(data["n_times"]) if "n_times" in data else max(
                (q.time_index for q in quotes), default=1)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, MarketDataError):
                raise
            raise MarketDataError(f"malformed snapshot: {exc}") from None
        return cls(n_times, tuple(quotes), tuple(extras),
                   None if bounds[1] is None else float(bounds[1]), float(bounds[0]))


def _read_csv(path: Path) -> List[VanillaQuote]:
    quotes = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if header is None:
                header = tuple(c.strip() for c in row)
                if header != CSV_HEADER:
                    raise MarketDataError(f"expected header {','.join(CSV_HEADER)}", f"line {lineno}")
                continue
            if len(row) != 4:
                raise MarketDataError(f"expected 4 fields, got {len(row)}", f"line {lineno}")
            values = []
            for name, raw in zip(CSV_HEADER, row):
                try:
                    values.append(int(raw) if name == "time_index" else float(raw))
                except ValueError:
                    raise MarketDataError(f"cannot parse {raw!r}", f"line {lineno}, field {name}") from None
            try:
                quotes.append(VanillaQuote(*values))
            except MarketDataError as exc:
                raise MarketDataError(str(exc).split(": ", 1)[-1], f"line {lineno}") from None
    return quotes


def load_snapshot(path, fmt: Optional[str] = None, state_bounds: Optional[Tuple[float, float]] = None,
                  n_times: Optional[int] = None) -> MarketSnapshot:
    """Read a snapshot from CSV (``time_index,strike,bid,ask``) or JSON.

    CSV carries no state bounds; pass ``state_bounds`` or accept the default
    ``[0, 2 * max strike]``.
    """
    path = Path(path)
    if not path.exists():
        raise MarketDataError("file not found", str(path))
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        quotes = _read_csv(path)
        n = n_times or max((q.time_index for q in quotes), default=1)
        lo, hi = state_bounds if state_bounds else (0.0, None)
        return MarketSnapshot(n, tuple(quotes), (), hi, lo)
    if fmt == "json":
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MarketDataError(f"invalid JSON: {exc.msg}", f"line {exc.lineno}") from None
        snap = MarketSnapshot.from_json(data)
        if state_bounds:
            snap = snap.with_bounds(*state_bounds)
        return snap
    raise MarketDataError(f"unknown format {fmt!r}")


def save_snapshot(snapshot: MarketSnapshot, path, fmt: Optional[str] = None) -> None:
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for q in snapshot.quotes:
                w.writerow([q.time_index, repr(q.strike), repr(q.bid), repr(q.ask)])
    elif fmt == "json":
        path.write_text(json.dumps(snapshot.to_json(), indent=2), encoding="utf-8")
    else:
        raise MarketDataError(f"unknown format {fmt!r}")


def bs_call_price(spot: float, vol: float, maturity: float, strike: float) -> float:
    """Black-Scholes call with zero rate and zero dividends."""
    for name, v in (("spot", spot), ("vol", vol), ("maturity", maturity), ("strike", strike)):
        if not math.isfinite(v):
            raise ValueError(f"non-finite {name}")
    if spot <= 0 or vol <= 0 or maturity <= 0 or strike < 0:
        raise ValueError("require spot > 0, vol > 0, maturity > 0, strike >= 0")
    if strike == 0:
        return float(spot)
    sd = vol * math.sqrt(maturity)
    d1 = (math.log(spot / strike) + 0.5 * sd * sd) / sd
    d2 = d1 - sd
    price = spot * ndtr(d1) - strike * ndtr(d2)
    return float(min(max(price, max(spot - strike, 0.0)), spot))


def synthesize_snapshot(spot: float, vol: float, step: float, n_times: int, strikes: Sequence[float],
                        upper_bound: Optional[float] = None, lower_bound: float = 0.0) -> MarketSnapshot:
    """Zero-spread Black-Scholes quotes for every strike at maturities ``i * step``."""
    strikes = [float(k) for k in strikes]
    if not strikes:
        raise MarketDataError("no strikes")
    if sorted(strikes) != strikes or len(set(strikes)) != len(strikes):
        raise MarketDataError("strikes must be sorted and distinct")
    if n_times < 1:
        raise MarketDataError("n_times must be >= 1")
    quotes = []
    for i in range(1, n_times + 1):
        for k in strikes:
            c = bs_call_price(spot, vol, i * step, k)
            quotes.append(VanillaQuote(i, k, c, c))
    return MarketSnapshot(n_times, tuple(quotes), (), upper_bound, lower_bound)


def check_quote_sanity(snapshot: MarketSnapshot, tol: float = 1e-12) -> List[str]:
    """Advisory static-arbitrage checks on mid prices, per maturity."""
    warnings = []
    hi = snapshot.state_upper_bound
    for i in range(1, snapshot.n_times + 1):
        qs = snapshot.quotes_at(i)
        ks = np.array([q.strike for q in qs])
        mids = np.array([q.mid for q in qs])
        for q in qs:
            if q.mid > hi + tol:
                warnings.append(f"t{i} K={q.strike:g}: mid {q.mid:g} exceeds state upper bound {hi:g}")
        for a in range(len(qs) - 1):
            if mids[a + 1] > mids[a] + tol:
                warnings.append(f"t{i} K={ks[a + 1]:g}: mid not monotone nonincreasing in strike")
        for a in range(1, len(qs) - 1):
            w = (ks[a] - ks[a - 1]) / (ks[a + 1] - ks[a - 1])
            chord = (1 - w) * mids[a - 1] + w * mids[a + 1]
            if mids[a] > chord + tol:
                warnings.append(f"t{i} K={ks[a]:g}: mid not convex in strike")
    return warnings


def interpolate_quotes(snapshot: MarketSnapshot, levels: Sequence[float]) -> MarketSnapshot:
    """Add quotes at ``levels`` by linear interpolation of mids, each carrying
    the wider of its two neighbours' spreads.  Levels already quoted, or
    outside the quoted strike range, are skipped."""
    new = list(snapshot.quotes)
    for i in range(1, snapshot.n_times + 1):
        qs = snapshot.quotes_at(i)
        ks = [q.strike for q in qs]
        for lvl in levels:
            if lvl in ks or lvl <= ks[0] or lvl >= ks[-1]:
                continue
            j = int(np.searchsorted(ks, lvl))
            a, b = qs[j - 1], qs[j]
            w = (lvl - a.strike) / (b.strike - a.strike)
            mid = (1 - w) * a.mid + w * b.mid
            half = 0.5 * max(a.ask - a.bid, b.ask - b.bid)
            new.append(VanillaQuote(i, float(lvl), max(mid - half, 0.0), mid + half))
    return snapshot.with_quotes(new)
