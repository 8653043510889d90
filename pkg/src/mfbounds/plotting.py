"""Figures for bound tables: one interval per payoff and horizon, with the
reference price marked when present."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 150,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}


def read_rows(path) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _num(v: str) -> float:
    return float(v) if v not in ("", None) else np.nan


def plot_bounds(rows: List[Dict[str, str]], path) -> Path:
    """Vertical bound intervals grouped by payoff, one colour per horizon."""
    path = Path(path)
    payoffs = list(dict.fromkeys(r["payoff"] for r in rows))
    steps = sorted({int(r["steps"]) for r in rows})
    width = 0.8 / max(len(steps), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for j, n in enumerate(steps):
            color = f"C{j}"
            label = f"{n} steps"
            for i, p in enumerate(payoffs):
                sel = [r for r in rows if r["payoff"] == p and int(r["steps"]) == n]
                if not sel:
                    continue
                r = sel[-1]
                x = i - 0.4 + width * (j + 0.5)
                lo, hi, ref = _num(r["lower"]), _num(r["upper"]), _num(r["reference"])
                ax.plot([x, x], [lo, hi], color=color, lw=6, solid_capstyle="butt", label=label)
                label = None
                if np.isfinite(ref):
                    ax.plot(x, ref, marker="_", ms=14, mew=2, color="k")
        ax.set_xlim(-0.7, len(payoffs) - 0.3)
        ax.set_xticks(range(len(payoffs)))
        ax.set_xticklabels([p.replace("_", " ") for p in payoffs], rotation=15)
        ax.set_ylabel("price")
        ax.set_title("model-free bounds (bars) and Black-Scholes reference (ticks)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_positions(report: dict, path) -> Path:
    """Static vanilla legs of both certificates of one report."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for c, (side, cert) in enumerate(sorted(report["certificate"].items())):
            legs = cert["vanilla_positions"]
            if not legs:
                continue
            x = np.array([leg["strike"] + 0.25 * (leg["time_index"] - 1) for leg in legs])
            q = np.array([leg["quantity"] for leg in legs])
            ax.bar(x + (0.3 if c else -0.3), q, width=0.5, color=f"C{c}", label=f"{side} ({cert['kind']})")
        ax.axhline(0.0, color="0.5", lw=0.6)
        ax.set_xlabel("strike (offset by maturity)")
        ax.set_ylabel("call quantity")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
