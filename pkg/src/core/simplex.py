"""Dense two-phase tableau simplex with Bland's rule.

minimize c.x subject to A_ub x <= b_ub, A_eq x = b_eq, x >= 0 except for
columns flagged free. The programs solved here are tiny (a few dozen rows).
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from loguru import logger

from .errors import LinearProgramError

FEASIBILITY_TOL = 1e-9
PIVOT_TOL = 1e-11


class LPStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LPResult:
    status: LPStatus
    x: Optional[np.ndarray]
    objective: float
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == LPStatus.OPTIMAL


class _Tableau:
    def __init__(self, table: np.ndarray, basis: np.ndarray, max_iterations: int):
        self.table = table
        self.basis = basis
        self.max_iterations = max_iterations
        self.iterations = 0

    def pivot(self, row: int, col: int):
        t = self.table
        t[row] /= t[row, col]
        factors = t[:, col].copy()
        factors[row] = 0.0
        t -= np.outer(factors, t[row])
        t[:, col] = 0.0
        t[row, col] = 1.0
        self.basis[row] = col

    def run(self, allowed: np.ndarray) -> LPStatus:
        t = self.table
        while True:
            reduced = t[-1, :-1]
            entering = np.flatnonzero((reduced < -FEASIBILITY_TOL) & allowed)
            if entering.size == 0:
                return LPStatus.OPTIMAL
            col = int(entering[0])

            column = t[:-1, col]
            positive = np.flatnonzero(column > PIVOT_TOL)
            if positive.size == 0:
                return LPStatus.UNBOUNDED
            ratios = t[positive, -1] / column[positive]
            best = ratios.min()
            ties = positive[ratios <= best + 1e-12 * max(1.0, abs(best))]
            row = int(ties[np.argmin(self.basis[ties])])

            self.pivot(row, col)
            self.iterations += 1
            if self.iterations > self.max_iterations:
                raise LinearProgramError(f"simplex exceeded {self.max_iterations} pivots")


def solve_lp(c: Sequence[float],
             A_ub=None, b_ub=None, A_eq=None, b_eq=None,
             free: Optional[Sequence[bool]] = None,
             max_iterations: int = 10000) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).reshape(-1)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    if A_ub.shape[0] == 0:
        A_ub = A_ub.reshape(0, n)
    if A_eq.shape[0] == 0:
        A_eq = A_eq.reshape(0, n)
    if A_ub.shape != (b_ub.size, n) or A_eq.shape != (b_eq.size, n):
        raise LinearProgramError("inconsistent linear program dimensions")

    # free variables split into positive and negative parts
    free_idx = np.flatnonzero(np.asarray(free, dtype=bool)) if free is not None else np.zeros(0, dtype=int)
    c_full = np.concatenate([c, -c[free_idx]])
    A_ub_full = np.hstack([A_ub, -A_ub[:, free_idx]])
    A_eq_full = np.hstack([A_eq, -A_eq[:, free_idx]])
    n_struct = c_full.size

    m_ub, m_eq = b_ub.size, b_eq.size
    m = m_ub + m_eq
    if m == 0:
        if np.any(c_full < 0):
            return LPResult(LPStatus.UNBOUNDED, None, -np.inf, 0)
        return LPResult(LPStatus.OPTIMAL, np.zeros(n), 0.0, 0)

    rows = np.vstack([A_ub_full, A_eq_full])
    rhs = np.concatenate([b_ub, b_eq])
    slack = np.vstack([np.eye(m_ub), np.zeros((m_eq, m_ub))])
    sign = np.where(rhs < 0.0, -1.0, 1.0)
    rows *= sign[:, None]
    slack *= sign[:, None]
    rhs *= sign

    # rows whose slack is basic at +1 need no artificial
    needs_artificial = np.ones(m, dtype=bool)
    needs_artificial[:m_ub] = sign[:m_ub] < 0.0
    art_rows = np.flatnonzero(needs_artificial)
    n_art = art_rows.size
    artificial = np.zeros((m, n_art))
    artificial[art_rows, np.arange(n_art)] = 1.0

    n_cols = n_struct + m_ub + n_art
    table = np.zeros((m + 1, n_cols + 1))
    table[:m, :n_struct] = rows
    table[:m, n_struct:n_struct + m_ub] = slack
    table[:m, n_struct + m_ub:n_cols] = artificial
    table[:m, -1] = rhs

    basis = np.empty(m, dtype=int)
    for i in range(m):
        basis[i] = n_struct + i if i < m_ub and not needs_artificial[i] else -1
    basis[art_rows] = n_struct + m_ub + np.arange(n_art)

    tableau = _Tableau(table, basis, max_iterations)
    art_start = n_struct + m_ub

    if n_art:
        table[-1, :] = 0.0
        table[-1, art_start:n_cols] = 1.0
        for i in art_rows:
            table[-1] -= table[i]
        tableau.run(np.ones(n_cols, dtype=bool))
        infeasibility = -table[-1, -1]
        if infeasibility > FEASIBILITY_TOL * max(1.0, float(np.abs(rhs).max())):
            logger.debug(f"LP infeasible (phase-one residual {infeasibility:.3e})")
            return LPResult(LPStatus.INFEASIBLE, None, np.nan, tableau.iterations)

        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if tableau.basis[i] >= art_start:
                candidates = np.flatnonzero(np.abs(table[i, :art_start]) > 1e-9)
                if candidates.size:
                    tableau.pivot(i, int(candidates[0]))
                else:
                    keep[i] = False
        keep_rows = np.concatenate([np.flatnonzero(keep), [m]])
        table = np.delete(table[keep_rows], np.s_[art_start:n_cols], axis=1)
        tableau.table = table
        tableau.basis = tableau.basis[keep]
        n_cols = art_start

    table = tableau.table
    cost = np.zeros(n_cols + 1)
    cost[:n_struct] = c_full
    table[-1] = cost
    for i, col in enumerate(tableau.basis):
        if cost[col] != 0.0:
            table[-1] -= cost[col] * table[i]

    status = tableau.run(np.ones(n_cols, dtype=bool))
    if status == LPStatus.UNBOUNDED:
        return LPResult(status, None, -np.inf, tableau.iterations)

    solution = np.zeros(n_cols)
    solution[tableau.basis] = np.maximum(table[:-1, -1], 0.0)
    x = solution[:n].copy()
    if free_idx.size:
        x[free_idx] -= solution[n:n_struct]
    return LPResult(LPStatus.OPTIMAL, x, float(c @ x), tableau.iterations)
