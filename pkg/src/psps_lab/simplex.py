"""Dense two-phase tableau simplex with Bland's anti-cycling rule.

Solves ``min c x`` s.t. ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``x >= 0``.
Meant for small problems (a few hundred rows); it is the cross-check for the
sparse HiGHS path, not a production solver.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SimplexError(RuntimeError):
    pass


@dataclass
class SimplexResult:
    x: np.ndarray | None
    fun: float
    status: str  # "optimal" | "infeasible" | "unbounded"
    iterations: int


def _pivot(T, row, col):
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]


def _run(T, basis, n_cols, tol, max_iter):
    """Minimize the objective stored in the last row of ``T`` (reduced costs)."""
    it = 0
    m = T.shape[0] - 1
    while True:
        if it >= max_iter:
            raise SimplexError("iteration limit reached")
        cost = T[-1, :n_cols]
        entering = next((j for j in range(n_cols) if cost[j] < -tol), None)
        if entering is None:
            return "optimal", it
        col = T[:m, entering]
        best, leave = None, None
        for r in range(m):
            if col[r] > tol:
                ratio = T[r, -1] / col[r]
                if (best is None or ratio < best - tol
                        or (abs(ratio - best) <= tol and basis[r] < basis[leave])):
                    best, leave = ratio, r
        if leave is None:
            return "unbounded", it
        _pivot(T, leave, entering)
        basis[leave] = entering
        it += 1


def simplex(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, tol: float = 1e-9,
            max_iter: int = 100_000) -> SimplexResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    # columns: x (n) | slacks (m_ub) | artificials (m)
    n_cols = n + m_ub + m
    T = np.zeros((m + 1, n_cols + 1))
    T[:m_ub, :n] = A_ub
    T[:m_ub, n:n + m_ub] = np.eye(m_ub)
    T[:m_ub, -1] = b_ub
    T[m_ub:m, :n] = A_eq
    T[m_ub:m, -1] = b_eq
    neg = T[:m, -1] < 0
    T[:m][neg] *= -1.0

    basis = [-1] * m
    art_cols = []
    for r in range(m):
        if r < m_ub and not neg[r]:
            basis[r] = n + r  # slack is a feasible starting basic variable
        else:
            col = n + m_ub + r
            T[r, col] = 1.0
            basis[r] = col
            art_cols.append(col)

    # phase 1: minimize the sum of artificials
    T[-1, :] = 0.0
    for col in art_cols:
        T[-1, col] = 1.0
    for r in range(m):
        if basis[r] in art_cols:
            T[-1] -= T[r]
    status, it1 = _run(T, basis, n_cols, tol, max_iter)
    if status != "optimal":
        raise SimplexError("phase 1 did not terminate at an optimum")
    if T[-1, -1] < -1e-7 * max(1.0, np.abs(b_ub).max(initial=0), np.abs(b_eq).max(initial=0)):
        return SimplexResult(None, np.nan, "infeasible", it1)

    # drive remaining artificials out of the basis
    art = set(art_cols)
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] in art:
            row = T[r, :n + m_ub]
            j = next((j for j in range(n + m_ub) if abs(row[j]) > tol), None)
            if j is None:
                keep[r] = False  # redundant row
            else:
                _pivot(T, r, j)
                basis[r] = j
    T = np.vstack([T[:m][keep], T[-1:]])
    basis = [b for b, k in zip(basis, keep) if k]
    T = np.hstack([T[:, :n + m_ub], T[:, -1:]])
    n_cols = n + m_ub
    mk = T.shape[0] - 1

    # phase 2
    T[-1, :] = 0.0
    T[-1, :n] = c
    for r in range(mk):
        if T[-1, basis[r]] != 0.0:
            T[-1] -= T[-1, basis[r]] * T[r]
    status, it2 = _run(T, basis, n_cols, tol, max_iter)
    if status == "unbounded":
        return SimplexResult(None, -np.inf, "unbounded", it1 + it2)
    x = np.zeros(n_cols)
    for r in range(mk):
        x[basis[r]] = T[r, -1]
    x = x[:n]
    return SimplexResult(x, float(c @ x), "optimal", it1 + it2)
