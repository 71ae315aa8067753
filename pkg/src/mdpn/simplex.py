"""Dense two-phase primal simplex with Bland's anti-cycling rule.

Solves ``max c.x  s.t.  A x = b, x >= 0`` on a full tableau. Sizes here are a
few hundred columns at most, so clarity wins over sparse tricks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9


class SimplexError(RuntimeError):
    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message)
        self.state = state or {}


@dataclass
class SimplexResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray
    objective: float
    basis: list[int]
    reduced_costs: np.ndarray
    iterations: int
    removed_rows: list[int] = field(default_factory=list)


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    col_vals = T[:, col].copy()
    col_vals[row] = 0.0
    T -= np.outer(col_vals, T[row])


def _run(T: np.ndarray, basis: list[int], n_cols: int, max_iter: int) -> tuple[str, int]:
    """Maximize with the objective in the last row as reduced costs ``c_B B^-1 A - c``."""
    m = T.shape[0] - 1
    for it in range(max_iter):
        obj = T[-1, :n_cols]
        entering = np.flatnonzero(obj < -PIVOT_TOL)
        if len(entering) == 0:
            return "optimal", it
        col = int(entering[0])  # Bland: lowest index improving column
        column = T[:m, col]
        pos = column > PIVOT_TOL
        if not np.any(pos):
            return "unbounded", it
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / column[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
        row = int(min(ties, key=lambda r: basis[r]))  # Bland: lowest basic index leaves
        _pivot(T, row, col)
        basis[row] = col
    raise SimplexError("iteration limit reached", {"basis": list(basis), "iterations": max_iter})


def simplex_solve(c, A_eq, b_eq, max_iter: int = 50_000) -> SimplexResult:
    c = np.asarray(c, dtype=float)
    A = np.array(A_eq, dtype=float, copy=True)
    b = np.array(b_eq, dtype=float, copy=True)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    # phase 1: artificials n..n+m-1, minimize their sum
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(n, n + m))
    status, it1 = _run(T, basis, n + m, max_iter)
    if status != "optimal":
        raise SimplexError(f"phase 1 ended {status}", {"basis": basis})
    if -T[-1, -1] > FEAS_TOL * max(1.0, b.sum()):
        return SimplexResult("infeasible", np.zeros(n), float("nan"), basis, np.zeros(n), it1)

    # drive remaining artificials out; rows with no usable pivot are redundant
    removed = []
    r = 0
    while r < len(basis):
        if basis[r] >= n:
            cols = np.flatnonzero(np.abs(T[r, :n]) > PIVOT_TOL)
            if len(cols):
                _pivot(T, r, int(cols[0]))
                basis[r] = int(cols[0])
            else:
                removed.append(basis[r] - n)
                T = np.delete(T, r, axis=0)
                del basis[r]
                continue
        r += 1

    # phase 2 on the original columns
    m2 = len(basis)
    T2 = np.zeros((m2 + 1, n + 1))
    T2[:m2, :n] = T[:m2, :n]
    T2[:m2, -1] = T[:m2, -1]
    T2[-1, :n] = -c
    for i, j in enumerate(basis):
        if T2[-1, j] != 0.0:
            T2[-1] -= T2[-1, j] * T2[i]
    status, it2 = _run(T2, basis, n, max_iter)

    x = np.zeros(n)
    x[basis] = T2[:m2, -1]
    x[np.abs(x) < 1e-13] = 0.0
    reduced = T2[-1, :n].copy()
    if status == "unbounded":
        return SimplexResult("unbounded", x, float("inf"), basis, reduced, it1 + it2, sorted(removed))
    resid = np.abs(np.asarray(A_eq, dtype=float) @ x - np.asarray(b_eq, dtype=float)).max() if m else 0.0
    if resid > 1e-8 or x.min() < -1e-9:
        raise SimplexError(
            f"solution residual {resid:.3g}, min x {x.min():.3g}",
            {"basis": basis, "x": x, "iterations": it1 + it2},
        )
    return SimplexResult("optimal", np.clip(x, 0.0, None), float(c @ x), basis, reduced, it1 + it2, sorted(removed))
