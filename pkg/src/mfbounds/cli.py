"""Command-line front end.

    mfbounds synth  --spot 50 --vol 0.3 --step 0.5 --times 2 --strikes 30:2:60
    mfbounds bounds --synth --times 2 --payoff barrier_digital --barriers 34 56
    mfbounds arb    --quotes quotes.csv --payoff barrier_call --barriers 34 56 --strike 50 --price 0.7

Exit codes: 0 success (or price inside the bounds), 1 operational or usage
error, 2 arbitrage found, 3 quotes infeasible on the grid.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .engine import BoundsConfig, InfeasibleMarketError, SolverFailure, detect_arbitrage, price_bounds
from .grid import GridError
from .market_data import (MarketDataError, check_quote_sanity, load_snapshot, save_snapshot,
                          synthesize_snapshot)
from .payoffs import CATALOG, PayoffError

EXIT_OK, EXIT_ERROR, EXIT_ARBITRAGE, EXIT_INFEASIBLE = 0, 1, 2, 3
CSV_FIELDS = ("payoff", "steps", "lower", "upper", "reference")

DEFAULT_SYNTH = {"spot": 50.0, "vol": 0.30, "step": 0.5, "times": 2, "strikes": "30:2:60"}

log = logging.getLogger("mfbounds")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1; 2 is reserved for arbitrage
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def parse_strikes(text: str) -> List[float]:
    """``lo:step:hi`` (inclusive) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError("strike range must be lo:step:hi")
        lo, step, hi = (float(p) for p in parts)
        if step <= 0 or hi < lo:
            raise argparse.ArgumentTypeError("strike range needs step > 0 and hi >= lo")
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return [float(v) for v in np.round(lo + step * np.arange(n), 10)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse strikes {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _level(text: str) -> Optional[float]:
    return None if text.lower() in ("none", "-") else float(text)


def _add_synth_args(p: argparse.ArgumentParser, defaults: bool) -> None:
    d = DEFAULT_SYNTH if defaults else {k: None for k in DEFAULT_SYNTH}
    p.add_argument("--spot", type=float, default=d["spot"], help="spot price (default 50)")
    p.add_argument("--vol", type=float, default=d["vol"], help="Black-Scholes volatility (default 0.30)")
    p.add_argument("--step", type=float, default=d["step"], help="years between dates (default 0.5)")
    p.add_argument("--times", type=_positive_int, default=d["times"], help="number of dates (default 2)")
    p.add_argument("--strikes", type=parse_strikes, default=d["strikes"],
                   help="lo:step:hi or comma list (default 30:2:60)")
    p.add_argument("--spread", type=float, default=0.0,
                   help="relative bid/ask half-spread around the model price")
    p.add_argument("--box", type=float, nargs=2, metavar=("LO", "HI"), default=None,
                   help="state truncation box (default [0, 2 * max strike])")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mfbounds", description="Model-free price bounds for discrete path-dependent options.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a Black-Scholes quote snapshot")
    _add_synth_args(s, defaults=True)
    s.add_argument("--out", default="snapshot.json", help="snapshot path (.json or .csv)")
    s.add_argument("--config-out", default=None,
                   help="where to write the matching default run config (default <out>.config.json)")

    for name, helptext in (("bounds", "compute lower and upper bounds"),
                           ("arb", "check a traded price against the bounds")):
        p = sub.add_parser(name, help=helptext)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--quotes", help="snapshot file (.csv or .json)")
        src.add_argument("--synth", action="store_true", help="use synthetic Black-Scholes quotes")
        _add_synth_args(p, defaults=False)
        p.add_argument("--config", help="JSON run config; command-line flags override it")
        p.add_argument("--payoff", action="append", default=None,
                       help=f"payoff type, repeatable; one of: {', '.join(CATALOG)}")
        p.add_argument("--payoff-json", help="full payoff spec as JSON (e.g. for custom_pwl)")
        p.add_argument("--barriers", type=_level, nargs=2, metavar=("B1", "B2"),
                       help="barrier levels; 'none' for a one-sided barrier")
        p.add_argument("--strike", type=float, help="strike K of the payoff")
        p.add_argument("--time", type=int, help="date of a call/put payoff")
        p.add_argument("--k", type=int, help="step index of increment / squared_log_return")
        p.add_argument("--mode", choices=("under", "over", "interpolate", "conservative"),
                       help="approximation mode of log-return payoffs")
        p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                       help="extra payoff parameter (repeatable)")
        p.add_argument("--refine", type=int, help="bisect every grid interval this many times")
        p.add_argument("--state-bounds", type=float, nargs=2, metavar=("LO", "HI"),
                       help="override the truncation box")
        p.add_argument("--grid-points", type=parse_strikes, help="extra grid points at every date")
        p.add_argument("--interpolate-barriers", action="store_true", default=None,
                       help="add interpolated quotes at barrier levels")
        p.add_argument("--vol-band", type=float, nargs=3, metavar=("SIGMA_LO", "SIGMA_HI", "STEP"),
                       help="bound the expected squared log-return of every step")
        p.add_argument("--oracle", action="store_true", default=None, help="cross-check with the primal program")
        p.add_argument("--bs-reference", action="store_true",
                       help="compute the Black-Scholes reference (uses --vol/--step)")
        p.add_argument("--strategy", choices=("auto", "full", "cells"), help="dual solve strategy")
        p.add_argument("--report", help="write the JSON report here")
        p.add_argument("--csv", help="append tidy rows (payoff,steps,lower,upper,reference) here")
        p.add_argument("--plot", action="store_true",
                       help="also render PNG figures next to the CSV (or report)")
        if name == "arb":
            p.add_argument("--price", type=float, required=True, help="traded price of the exotic")
    return parser


# -- helpers ---------------------------------------------------------------------

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_config(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    return data


def _synth_snapshot(args, cfg: Dict[str, Any]):
    s = {**DEFAULT_SYNTH, **cfg.get("synth", {})}
    for key in ("spot", "vol", "step", "times", "strikes"):
        if getattr(args, key, None) is not None:
            s[key] = getattr(args, key)
    strikes = parse_strikes(s["strikes"]) if isinstance(s["strikes"], str) else list(s["strikes"])
    box = args.box or s.get("box")
    snap = synthesize_snapshot(float(s["spot"]), float(s["vol"]), float(s["step"]), int(s["times"]), strikes,
                               upper_bound=box[1] if box else None, lower_bound=box[0] if box else 0.0)
    spread = args.spread or float(s.get("spread", 0.0))
    if spread:
        snap = _widen(snap, spread)
    s["strikes"] = strikes
    return snap, s


def _widen(snap, rel: float):
    from .market_data import VanillaQuote
    quotes = [VanillaQuote(q.time_index, q.strike, max(q.bid * (1 - rel), 0.0), q.ask * (1 + rel))
              for q in snap.quotes]
    return snap.with_quotes(quotes)


def _payoff_specs(args, cfg: Dict[str, Any]) -> List[Dict[str, Any]]:
    if args.payoff_json:
        try:
            spec = json.loads(args.payoff_json)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--payoff-json: {exc}") from None
        return [spec]
    types = args.payoff or ([cfg["payoff"]["type"]] if "payoff" in cfg else [])
    if not types:
        raise UsageError("no payoff given (use --payoff or --payoff-json)")
    base = dict((cfg.get("payoff") or {}).get("params") or {})
    if args.barriers:
        base["B1"], base["B2"] = args.barriers
    for key, attr in (("K", "strike"), ("time", "time"), ("k", "k"), ("mode", "mode")):
        if getattr(args, attr) is not None:
            base[key] = getattr(args, attr)
    for item in args.param:
        if "=" not in item:
            raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        try:
            base[key] = json.loads(value)
        except json.JSONDecodeError:
            base[key] = value
    out = []
    for t in types:
        if t not in CATALOG:
            raise UsageError(f"unknown payoff type {t!r}; catalog: {', '.join(CATALOG)}")
        out.append({"type": t, "params": dict(base)})
    return out


def _bounds_config(args, cfg: Dict[str, Any], spot: Optional[float]) -> BoundsConfig:
    data = dict(cfg.get("config") or {})
    flags = {"refine": args.refine, "oracle": args.oracle, "strategy": args.strategy,
             "interpolate_barriers": args.interpolate_barriers}
    data.update({k: v for k, v in flags.items() if v is not None})
    if args.state_bounds:
        data["state_lower"], data["state_upper"] = args.state_bounds
    if args.grid_points:
        data["extra_points"] = args.grid_points
    if args.vol_band:
        data["vol_band"] = args.vol_band
    if spot is not None and data.get("spot") is None:
        data["spot"] = spot
    try:
        return BoundsConfig.from_json(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _append_csv(path, rows: Sequence[Dict[str, Any]]) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        if new:
            w.writeheader()
        for r in rows:
            w.writerow(r)


# -- commands --------------------------------------------------------------------

def cmd_synth(args) -> int:
    snap = synthesize_snapshot(args.spot, args.vol, args.step, args.times, args.strikes,
                               upper_bound=args.box[1] if args.box else None,
                               lower_bound=args.box[0] if args.box else 0.0)
    if args.spread:
        snap = _widen(snap, args.spread)
    out = Path(args.out)
    save_snapshot(snap, out)
    cfg_path = Path(args.config_out) if args.config_out else out.with_suffix(".config.json")
    run = {
        "quotes": str(out),
        "synth": {"spot": args.spot, "vol": args.vol, "step": args.step, "times": args.times,
                  "strikes": args.strikes},
        "payoff": {"type": "barrier_digital", "params": {"B1": 34.0, "B2": 56.0}},
        "config": BoundsConfig(spot=args.spot).to_json(),
    }
    cfg_path.write_text(json.dumps(run, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(snap.quotes)} quotes over {snap.n_times} dates to {out}; default run config {cfg_path}")
    return EXIT_OK


def _run(args):
    cfg = _load_config(args.config)
    run: Dict[str, Any] = {"argv": sys.argv[1:], "version": __version__}
    if args.config:
        run["config_sha256"] = _sha256(args.config)
    quotes = args.quotes or (cfg.get("quotes") if not args.synth else None)
    synth = None
    if quotes:
        snap = load_snapshot(quotes, state_bounds=tuple(args.box) if args.box else None)
        run["quotes"] = str(quotes)
        run["input_sha256"] = _sha256(quotes)
        spot = args.spot
    elif args.synth or "synth" in cfg:
        snap, synth = _synth_snapshot(args, cfg)
        run["synth"] = synth
        spot = float(synth["spot"])
    else:
        raise UsageError("no market data: give --quotes FILE or --synth")
    for w in check_quote_sanity(snap):
        log.warning("quote check: %s", w)
    config = _bounds_config(args, cfg, spot)
    if args.bs_reference:
        # a config written by `synth` records how its quote file was made
        meta = synth or cfg.get("synth") or {}
        vol = args.vol if args.vol is not None else meta.get("vol")
        step = args.step if args.step is not None else meta.get("step")
        if vol is None or step is None or config.spot is None:
            raise UsageError("--bs-reference needs --spot, --vol and --step")
        config = BoundsConfig.from_json({**config.to_json(), "bs_vol": vol, "bs_step": step})
    run["config"] = config.to_json()
    specs = _payoff_specs(args, cfg)
    reports = [price_bounds(snap, spec, config) for spec in specs]
    return snap, run, reports


def _emit(args, snap, run, reports) -> None:
    header = ["payoff", "lower", "upper", "bs_reference"]
    if args.oracle:
        header.append("gap")
    print(",".join(header))
    rows = []
    for r in reports:
        ref = r.bs_reference.value if r.bs_reference else None
        cells = [r.payoff["type"], _fmt(r.lower), _fmt(r.upper), _fmt(ref)]
        if args.oracle and r.gap_vs_oracle:
            cells.append(_fmt(max(abs(v) for v in r.gap_vs_oracle.values())))
        print(",".join(cells))
        for w in r.warnings:
            log.warning("%s: %s", r.payoff["type"], w)
        rows.append({"payoff": r.payoff["type"], "steps": snap.n_times, "lower": _fmt(r.lower),
                     "upper": _fmt(r.upper), "reference": _fmt(ref)})
    if args.report:
        doc = {"run": run, "results": [r.to_json() for r in reports]}
        Path(args.report).write_text(json.dumps(doc, indent=2, default=float) + "\n", encoding="utf-8")
    if args.csv:
        _append_csv(args.csv, rows)
    if args.plot:
        from .plotting import plot_bounds, plot_positions, read_rows
        anchor = Path(args.csv or args.report or "bounds.csv")
        table = read_rows(args.csv) if args.csv else rows
        figs = [plot_bounds(table, anchor.with_name(anchor.stem + "_bounds.png"))]
        for r in reports:
            figs.append(plot_positions(r.to_json(), anchor.with_name(f"{anchor.stem}_{r.payoff['type']}_hedge.png")))
        log.info("figures: %s", ", ".join(str(f) for f in figs))


def cmd_bounds(args) -> int:
    snap, run, reports = _run(args)
    _emit(args, snap, run, reports)
    return EXIT_OK


def cmd_arb(args) -> int:
    snap, run, reports = _run(args)
    if len(reports) != 1:
        raise UsageError("arb takes exactly one payoff")
    r = reports[0]
    r.verdict = detect_arbitrage(r, args.price)
    _emit(args, snap, run, reports)
    v = r.verdict
    print(f"verdict: {v.status} (price {args.price:g}, bounds [{r.lower:.6g}, {r.upper:.6g}], margin {v.margin:.6g})")
    if v.status == "inside":
        return EXIT_OK
    side = "sell the exotic and hold" if v.status == "above_upper" else "buy the exotic and hold"
    print(f"strategy: {side} the {v.certificate.summary()}")
    return EXIT_ARBITRAGE


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    handlers = {"synth": cmd_synth, "bounds": cmd_bounds, "arb": cmd_arb}
    try:
        return handlers[args.command](args)
    except InfeasibleMarketError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UsageError, MarketDataError, PayoffError, GridError, SolverFailure, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
