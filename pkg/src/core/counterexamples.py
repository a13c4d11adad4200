"""Truncated nonexistence example and the one-asset existence demonstration."""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from .arbitrage import admissible_polytope, check_na_tree, na_holds
from .errors import LabError
from .instances import random_one_period
from .market import MeasureSet, Node, ScenarioTree
from .maxmin_solver import (DEFAULT_TOL, MaxminSolver, OnePeriodProblem, measure_expectations, phi_eval,
                            rational_grid_value)
from .utility import TerminalContinuation, UtilitySpec

# P1: independent coin flips in both assets
P1_INCREMENTS = ((-1.0, -1.0), (1.0, -1.0), (-1.0, 2.0), (1.0, 2.0))
# optimal second-asset position under P1 for the square-root utility at x = 1
SQRT_P1_OPTIMUM = 0.5
STUDY_COLUMNS = ["N", "h1", "h2", "value", "value_at_limit_point", "gap"]


def _p2_atoms(N: int):
    """Loss -1 with mass 1/2, gains 4^n with mass 2^-(n+1); the tail mass sits on atom N."""
    gains = [float(4 ** n) for n in range(1, N + 1)]
    masses = [0.5 * 2.0 ** -n for n in range(1, N + 1)]
    masses[-1] += 0.5 * 2.0 ** -N
    return gains, masses


def _check_level(N: int, utility: UtilitySpec):
    if not isinstance(N, (int, np.integer)) or N < 1:
        raise LabError(f"truncation level must be a positive integer, got {N!r}")
    if utility.bounded_above:
        raise LabError(f"{utility.family.value} utility is bounded above; the truncated example is vacuous")


def build_truncated_example(N: int, utility: UtilitySpec) -> ScenarioTree:
    _check_level(N, utility)
    gains, masses = _p2_atoms(N)
    increments = list(P1_INCREMENTS) + [(-1.0, 0.0)] + [(g, 0.0) for g in gains]
    p1 = [0.25] * 4 + [0.0] * (1 + N)
    p2 = [0.0] * 4 + [0.5] + masses

    s0 = np.ones(2)
    children = tuple(f"a{i}" for i in range(len(increments)))
    nodes = [Node("r", 0, s0, children, MeasureSet(np.array([p1, p2])))]
    nodes += [Node(c, 1, s0 + np.array(v)) for c, v in zip(children, increments)]
    return ScenarioTree(1, 2, nodes, root="r")


def _root_problem(tree: ScenarioTree, utility: UtilitySpec, x: float) -> OnePeriodProblem:
    continuation = {c: TerminalContinuation(utility, tree.node(c).endowment or 0.0)
                    for c in tree.nonpolar_children(tree.root)}
    return OnePeriodProblem.at_node(tree, tree.root, continuation, x)


@dataclass
class TruncationRow:
    N: int
    h1: float
    h2: float
    value: float
    value_at_limit_point: float

    @property
    def gap(self) -> float:
        return self.value - self.value_at_limit_point


@dataclass
class TruncationStudy:
    levels: List[int]
    rows: List[TruncationRow] = field(default_factory=list)
    tol: float = DEFAULT_TOL

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([[r.N, r.h1, r.h2, r.value, r.value_at_limit_point, r.gap] for r in self.rows],
                            columns=STUDY_COLUMNS)

    def to_csv(self, path) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    def violations(self) -> List[str]:
        """Departures from the nonattainment signature: h1 > 0 and decreasing, values nondecreasing."""
        problems = []
        for row in self.rows:
            if not row.h1 > 0.0:
                problems.append(f"N={row.N}: first-asset position {row.h1!r} is not positive")
        for prev, row in zip(self.rows, self.rows[1:]):
            if not row.h1 < prev.h1:
                problems.append(f"N={row.N}: first-asset position did not decrease ({prev.h1!r} -> {row.h1!r})")
            if row.value < prev.value - 10 * self.tol:
                problems.append(f"N={row.N}: value decreased ({prev.value!r} -> {row.value!r})")
        return problems

    @property
    def passed(self) -> bool:
        return not self.violations()


def run_nonexistence_study(levels: Sequence[int], utility: Optional[UtilitySpec] = None, x: float = 1.0,
                           tol: float = DEFAULT_TOL) -> TruncationStudy:
    utility = utility or UtilitySpec.power(0.5)
    levels = sorted(int(n) for n in levels)
    solver = MaxminSolver(tol)
    study = TruncationStudy(levels, tol=tol)
    for N in levels:
        tree = build_truncated_example(N, utility)
        problem = _root_problem(tree, utility, x)
        solution = solver.solve(problem)
        h1, h2 = (float(v) for v in solution.h_opt)
        limit_value, _ = phi_eval(problem, np.array([0.0, h2]))
        row = TruncationRow(N, h1, h2, solution.value, limit_value)
        study.rows.append(row)
        logger.info(f"Truncation level N={N}: h=({h1:.6g}, {h2:.6g}), value {row.value:.10g}, gap {row.gap:.6g}")
    for problem in study.violations():
        logger.warning(f"Truncation study: {problem}")
    return study


def p1_section(N: int, h1_values: Sequence[float], h2: float, utility: Optional[UtilitySpec] = None,
               x: float = 1.0) -> np.ndarray:
    """h1 -> E_P1[U(x + h1 dS1 + h2 dS2)] with the second position held fixed."""
    utility = utility or UtilitySpec.power(0.5)
    problem = _root_problem(build_truncated_example(N, utility), utility, x)
    H = np.column_stack([np.asarray(h1_values, dtype=float), np.full(len(h1_values), float(h2))])
    return measure_expectations(problem, H)[:, 0]


def build_random_utility_market(N: int, utility: UtilitySpec, g2: float = SQRT_P1_OPTIMUM) -> ScenarioTree:
    """One tradable asset; the second asset's optimal P1 position becomes a terminal endowment."""
    _check_level(N, utility)
    gains, masses = _p2_atoms(N)
    increments = [v[0] for v in P1_INCREMENTS] + [-1.0] + gains
    endowments = [g2 * v[1] for v in P1_INCREMENTS] + [0.0] * (1 + N)
    p1 = [0.25] * 4 + [0.0] * (1 + N)
    p2 = [0.0] * 4 + [0.5] + masses

    children = tuple(f"a{i}" for i in range(len(increments)))
    nodes = [Node("r", 0, [1.0], children, MeasureSet(np.array([p1, p2])))]
    nodes += [Node(c, 1, [1.0 + v], endowment=e) for c, v, e in zip(children, increments, endowments)]
    return ScenarioTree(1, 1, nodes, root="r")


def random_utility_variant(levels: Sequence[int], x: float = 1.0, utility: Optional[UtilitySpec] = None,
                           tol: float = DEFAULT_TOL) -> TruncationStudy:
    utility = utility or UtilitySpec.power(0.5, endowment_enabled=True)
    if not utility.endowment_enabled:
        utility = UtilitySpec.from_params(utility.family.value, utility.params(), endowment_enabled=True)
    levels = sorted(int(n) for n in levels)
    solver = MaxminSolver(tol)
    study = TruncationStudy(levels, tol=tol)
    for N in levels:
        tree = build_random_utility_market(N, utility)
        problem = _root_problem(tree, utility, x)
        solution = solver.solve(problem)
        limit_value, _ = phi_eval(problem, np.zeros(1))
        study.rows.append(TruncationRow(N, float(solution.h_opt[0]), SQRT_P1_OPTIMUM, solution.value, limit_value))
        logger.info(f"Random-utility level N={N}: h={solution.h_opt[0]:.6g}, value {solution.value:.10g}")
    return study


def passes_na_filter(tree: ScenarioTree) -> bool:
    return na_holds(check_na_tree(tree))


@dataclass
class ExistenceReport:
    seed: int
    instances: int
    attained: int
    rejected: int
    tol: float
    rows: pd.DataFrame

    @property
    def all_attained(self) -> bool:
        return self.attained == self.instances


def _dyadic_step(width: float, points: int) -> float:
    # a power of two keeps the lattice rational
    return 2.0 ** -math.ceil(math.log2(points / max(width, 1e-12)))


def one_dim_existence_demo(seed: int, instances: int = 100, utility: Optional[UtilitySpec] = None,
                           x: float = 1.0, tol: float = 1e-7, grid_points: int = 20000) -> ExistenceReport:
    """Random one-asset instances: the solver's optimum must dominate the rational-grid supremum."""
    utility = utility or UtilitySpec.power(0.5)
    if utility.singular_at_zero and utility.family.value == "log":
        raise LabError("the existence demonstration needs U(0) > -inf")
    rng = np.random.default_rng(seed)
    solver = MaxminSolver(tol)
    records, rejected = [], 0
    while len(records) < instances:
        tree = random_one_period(rng, d=1, m=int(rng.integers(2, 5)), k=int(rng.integers(1, 4)))
        if not passes_na_filter(tree):
            rejected += 1
            continue
        problem = _root_problem(tree, utility, x)
        solution = solver.solve(problem)
        lo, hi = admissible_polytope(problem.support, x).extent_along(np.ones(1))
        grid_value = rational_grid_value(problem, _dyadic_step(hi - lo, grid_points))
        records.append({
            "instance": len(records),
            "h_opt": float(solution.h_opt[0]),
            "value": solution.value,
            "grid_value": grid_value,
            "attained": solution.value >= grid_value - tol,
        })
    rows = pd.DataFrame(records)
    attained = int(rows["attained"].sum())
    logger.info(f"Existence demo (seed {seed}): {attained}/{instances} attained, {rejected} rejected by NA filter")
    return ExistenceReport(seed, instances, attained, rejected, tol, rows)
