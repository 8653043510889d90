"""Finite linear program container shared by the dual builder, the primal
oracle and the simplex solver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

RELATIONS = ("<=", "=", ">=")


@dataclass
class LinearProgram:
    """``sense  c'x  s.t.  A x  (<=|=|>=)  rhs,  lb <= x <= ub``.

    ``blocks`` maps a block name (``"yask"``, ``"lam"``, ...) to the half-open
    column range it occupies, so certificates can be read back by name.
    """

    c: np.ndarray
    A: sp.csc_matrix
    relations: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    var_names: List[str]
    row_names: List[str]
    sense: str = "min"
    blocks: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    name: str = "lp"
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = sp.csc_matrix(self.A, dtype=float)
        self.A.sum_duplicates()
        self.A.eliminate_zeros()
        self.relations = np.asarray(self.relations, dtype=object)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        self.validate()

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def validate(self) -> None:
        m, n = self.A.shape
        if self.c.shape != (n,) or self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("objective/bounds length does not match column count")
        if self.rhs.shape != (m,) or self.relations.shape != (m,):
            raise ValueError("rhs/relations length does not match row count")
        if len(self.var_names) != n or len(self.row_names) != m:
            raise ValueError("name lists do not match LP shape")
        if self.sense not in ("min", "max"):
            raise ValueError(f"unknown sense {self.sense!r}")
        bad = [r for r in self.relations if r not in RELATIONS]
        if bad:
            raise ValueError(f"unknown row relation {bad[0]!r}")
        if not np.all(np.isfinite(self.A.data)) or not np.all(np.isfinite(self.rhs)):
            raise ValueError("constraint data must be finite")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("objective must be finite")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)) or np.any(self.lb > self.ub):
            raise ValueError("invalid variable bounds")

    def block(self, name: str) -> slice:
        start, stop = self.blocks[name]
        return slice(start, stop)

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Per-row constraint violation (0 when satisfied)."""
        ax = self.A @ x
        out = np.zeros(self.n_rows)
        le = self.relations == "<="
        ge = self.relations == ">="
        eq = self.relations == "="
        out[le] = np.maximum(ax[le] - self.rhs[le], 0.0)
        out[ge] = np.maximum(self.rhs[ge] - ax[ge], 0.0)
        out[eq] = np.abs(ax[eq] - self.rhs[eq])
        return out

    def to_lp_text(self) -> str:
        """Dump in CPLEX LP text format (Minimize/Maximize, Subject To,
        Bounds, End) for differential testing with external solvers."""
        lines = [f"\\ {self.name}", "Minimize" if self.sense == "min" else "Maximize"]
        lines.extend(_wrap(" obj:", _terms(self.c, range(self.n_vars), self.var_names)))
        lines.append("Subject To")
        csr = self.A.tocsr()
        op = {"<=": "<=", ">=": ">=", "=": "="}
        for i in range(self.n_rows):
            s, e = csr.indptr[i], csr.indptr[i + 1]
            terms = _terms(csr.data[s:e], csr.indices[s:e], self.var_names) or ["0 " + self.var_names[0]]
            terms.append(f"{op[self.relations[i]]} {_num(self.rhs[i])}")
            lines.extend(_wrap(f" {self.row_names[i]}:", terms))
        lines.append("Bounds")
        for j, nm in enumerate(self.var_names):
            lo, hi = self.lb[j], self.ub[j]
            if lo == 0.0 and hi == np.inf:
                continue
            if lo == -np.inf and hi == np.inf:
                lines.append(f" {nm} free")
            else:
                lo_s = "-inf" if lo == -np.inf else _num(lo)
                hi_s = "+inf" if hi == np.inf else _num(hi)
                lines.append(f" {lo_s} <= {nm} <= {hi_s}")
        lines.append("End")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_lp_text())


def _num(v: float) -> str:
    return repr(float(v))


def _terms(coefs: Sequence[float], idx, names: List[str]) -> List[str]:
    out = []
    for k, (a, j) in enumerate(zip(coefs, idx)):
        if a == 0:
            continue
        sign = "-" if a < 0 else "+"
        mag = abs(float(a))
        body = names[j] if mag == 1.0 else f"{_num(mag)} {names[j]}"
        out.append(f"{sign} {body}" if out or sign == "-" else body)
    return out


def _wrap(head: str, terms: List[str], width: int = 200) -> List[str]:
    lines, cur = [], head
    for t in terms:
        if len(cur) + len(t) + 1 > width:
            lines.append(cur)
            cur = "   "
        cur += " " + t
    lines.append(cur)
    return lines


class LPBuilder:
    """Accumulates columns and COO triplets, then freezes into a LinearProgram."""

    def __init__(self):
        self.c: List[float] = []
        self.lb: List[float] = []
        self.ub: List[float] = []
        self.var_names: List[str] = []
        self.blocks: Dict[str, Tuple[int, int]] = {}
        self._rows: List[np.ndarray] = []
        self._cols: List[np.ndarray] = []
        self._vals: List[np.ndarray] = []
        self.rhs: List[float] = []
        self.relations: List[str] = []
        self.row_names: List[str] = []

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def add_block(self, name: str, names: Sequence[str], cost, lb, ub) -> int:
        start = len(self.c)
        k = len(names)
        self.c.extend(np.broadcast_to(np.asarray(cost, float), (k,)).tolist())
        self.lb.extend(np.broadcast_to(np.asarray(lb, float), (k,)).tolist())
        self.ub.extend(np.broadcast_to(np.asarray(ub, float), (k,)).tolist())
        self.var_names.extend(names)
        self.blocks[name] = (start, start + k)
        return start

    def add_rows(self, names: Sequence[str], relations: Sequence[str], rhs) -> int:
        start = len(self.rhs)
        self.row_names.extend(names)
        self.relations.extend(relations)
        self.rhs.extend(np.asarray(rhs, float).tolist())
        return start

    def add_entries(self, rows, cols, vals) -> None:
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        keep = vals != 0.0
        self._rows.append(rows[keep])
        self._cols.append(cols[keep])
        self._vals.append(vals[keep])

    def build(self, sense: str = "min", name: str = "lp", meta=None) -> LinearProgram:
        m, n = len(self.rhs), len(self.c)
        if self._rows:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            vals = np.concatenate(self._vals)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        A = sp.coo_matrix((vals, (rows, cols)), shape=(m, n)).tocsc()
        return LinearProgram(
            c=np.array(self.c), A=A, relations=np.array(self.relations, dtype=object),
            rhs=np.array(self.rhs), lb=np.array(self.lb), ub=np.array(self.ub),
            var_names=list(self.var_names), row_names=list(self.row_names),
            sense=sense, blocks=dict(self.blocks), name=name, meta=dict(meta or {}),
        )


def lp_from_dense(c, A_rows: Optional[Sequence[Sequence[float]]] = None, relations=(), rhs=(),
                  lb=None, ub=None, sense="min") -> LinearProgram:
    """Small-LP convenience constructor, mostly for tests."""
    c = np.asarray(c, float)
    n = c.size
    A = np.zeros((0, n)) if A_rows is None or len(A_rows) == 0 else np.asarray(A_rows, float).reshape(-1, n)
    m = A.shape[0]
    return LinearProgram(
        c=c, A=sp.csc_matrix(A), relations=np.array(list(relations), dtype=object).reshape(m),
        rhs=np.asarray(rhs, float).reshape(m),
        lb=np.zeros(n) if lb is None else np.asarray(lb, float),
        ub=np.full(n, np.inf) if ub is None else np.asarray(ub, float),
        var_names=[f"x{j + 1}" for j in range(n)], row_names=[f"r{i + 1}" for i in range(m)],
        sense=sense,
    )
