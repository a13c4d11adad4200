import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from .arbitrage import compute_support, nondegeneracy_margin, require_na
from .errors import InputError, SolverError, UnboundedUtilityError, ValueFunctionError
from .market import ScenarioTree, Strategy, node_wealth
from .maxmin_solver import (DEFAULT_MAX_ITERATIONS, DEFAULT_TOL, Continuation, MaxminSolution,
                            MaxminSolver, OnePeriodProblem)
from .utility import VALUE_FLOOR, TerminalContinuation, UtilitySpec
from .value_function import ConcavePLF, repair_concavity

MAX_GRID_FACTOR = 1e8
NEGATIVE_WEALTH_TOL = 1e-9


@dataclass
class WealthGridSpec:
    x0: float = 1.0
    knots: int = 257
    lower_factor: float = 1e-3
    upper_factor: Optional[float] = None
    probe_stride: int = 16

    def __post_init__(self):
        if self.x0 <= 0:
            raise InputError(f"initial capital must be positive, got {self.x0}")
        if self.knots < 5:
            raise InputError(f"wealth grid needs at least 5 knots, got {self.knots}")
        if not 0 < self.lower_factor < 1:
            raise InputError(f"lower factor must lie in (0, 1), got {self.lower_factor}")


@dataclass
class SolveStatistics:
    solves: int = 0
    iterations: int = 0
    max_gap: float = 0.0
    methods: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.Lock()

    def record(self, solutions: List[MaxminSolution]):
        with self._lock:
            for s in solutions:
                self.solves += 1
                self.iterations += s.iterations
                self.max_gap = max(self.max_gap, s.gap)
                self.methods[s.method] = self.methods.get(s.method, 0) + 1

    def to_dict(self) -> Dict:
        return {'solves': self.solves, 'iterations': self.iterations, 'max_gap': self.max_gap,
                'methods': dict(sorted(self.methods.items()))}


def _fallback_factor(tree: ScenarioTree) -> float:
    moves = []
    for nid in tree.nonpolar_decision_nodes():
        price = np.linalg.norm(tree.node(nid).price)
        steps = np.linalg.norm(tree.increments(nid), axis=1)
        moves.append(float(steps.max()) / max(price, 1e-12))
    return 2.0 ** tree.horizon * (1.0 + max(moves, default=0.0))


def wealth_bound_factor(tree: ScenarioTree) -> float:
    """prod_t (1 + max |dS| / eps_t) over non-polar decision nodes; fallback if a margin vanishes."""
    factor = 1.0
    for t in range(tree.horizon):
        worst = 0.0
        for nid in tree.nodes_at(t):
            if tree.node(nid).is_terminal or tree.is_polar(nid):
                continue
            support = compute_support(tree, nid)
            eps = nondegeneracy_margin(support)
            if support.support_vectors.shape[0] == 0 or math.isinf(eps):
                continue
            if eps <= 0.0:
                return _fallback_factor(tree)
            worst = max(worst, float(np.linalg.norm(support.support_vectors, axis=1).max()) / eps)
        factor *= 1.0 + worst
    return factor


def wealth_bound(tree: ScenarioTree, x0: float) -> float:
    return x0 * wealth_bound_factor(tree)


def build_wealth_grid(tree: ScenarioTree, spec: WealthGridSpec) -> np.ndarray:
    """Geometric grid on [x0 * lower_factor, x0 * B] with x0 itself as a knot."""
    factor = spec.upper_factor if spec.upper_factor is not None else wealth_bound_factor(tree)
    factor = min(max(factor, 2.0), MAX_GRID_FACTOR)
    lower, upper = spec.x0 * spec.lower_factor, spec.x0 * factor
    share = math.log(1.0 / spec.lower_factor) / math.log(factor / spec.lower_factor)
    below = int(round((spec.knots - 1) * share))
    below = min(max(below, 1), spec.knots - 2)
    low_part = np.geomspace(lower, spec.x0, below + 1)
    high_part = np.geomspace(spec.x0, upper, spec.knots - below)
    grid = np.concatenate([low_part, high_part[1:]])
    grid[below] = spec.x0
    return grid


def _probe_points(grid: np.ndarray, stride: int) -> np.ndarray:
    idx = sorted(set(range(0, grid.size - 1, max(stride, 1))) | {grid.size - 2})
    return 0.5 * (grid[idx] + grid[np.array(idx) + 1])


@dataclass(eq=False)
class ValueField:
    tree: ScenarioTree
    utility: UtilitySpec
    grid: np.ndarray
    functions: Dict[str, ConcavePLF]
    node_budgets: Dict[str, float]
    eps_grid: float
    tol: float
    statistics: SolveStatistics
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    x0: float = 1.0

    def continuation(self, node_id: str) -> Continuation:
        node = self.tree.node(node_id)
        if node.is_terminal:
            return TerminalContinuation(self.utility, node.endowment or 0.0)
        try:
            return self.functions[node_id]
        except KeyError:
            raise ValueFunctionError(f"no value function stored for node '{node_id}' (polar node?)")

    def continuation_map(self, node_id: str) -> Dict[str, Continuation]:
        return {c: self.continuation(c) for c in self.tree.nonpolar_children(node_id)}

    def value(self, node_id: str, wealth: float) -> float:
        return float(self.continuation(node_id).value(wealth))

    def root_value(self) -> float:
        return self.value(self.tree.root, self.x0)


def backward_induction(tree: ScenarioTree, utility: UtilitySpec, grid: Optional[WealthGridSpec] = None,
                       tol: float = DEFAULT_TOL, allow_unbounded: bool = False, threads: int = 1,
                       max_iterations: int = DEFAULT_MAX_ITERATIONS) -> ValueField:
    grid = grid or WealthGridSpec()
    require_na(tree)
    if not utility.bounded_above and not allow_unbounded:
        raise UnboundedUtilityError(
            f"{utility.family.value} utility is unbounded above; optimal strategies may fail to exist "
            f"(see the truncated nonexistence example); pass allow_unbounded to accept grid "
            f"epsilon-optimality only")

    knots = build_wealth_grid(tree, grid)
    probes = _probe_points(knots, grid.probe_stride)
    solver = MaxminSolver(tol, max_iterations)
    statistics = SolveStatistics()
    functions: Dict[str, ConcavePLF] = {}
    budgets: Dict[str, float] = {}
    eps_grid = 0.0
    logger.info(f"Backward induction: T={tree.horizon}, {knots.size} knots on "
                f"[{knots[0]:.4g}, {knots[-1]:.4g}], tol={tol:g}")

    def continuation(node_id: str) -> Continuation:
        node = tree.node(node_id)
        if node.is_terminal:
            return TerminalContinuation(utility, node.endowment or 0.0)
        return functions[node_id]

    def solve_node(node_id: str) -> Tuple[str, ConcavePLF, float]:
        support = compute_support(tree, node_id)
        children = {c: continuation(c) for c in support.nonpolar_children}
        problem = OnePeriodProblem.at_node(tree, node_id, children, knots[0], support=support)
        try:
            on_grid = solver.solve_batch(problem, knots)
            on_probes = solver.solve_batch(problem, probes)
        except SolverError as e:
            raise SolverError(f"node '{node_id}': {e.message}", best_h=e.best_h,
                              best_value=e.best_value, gap=e.gap)
        statistics.record(on_grid + on_probes)

        values = np.array([s.value for s in on_grid])
        if np.any(values <= VALUE_FLOOR):
            bad = knots[np.argmax(values <= VALUE_FLOOR)]
            raise ValueFunctionError(f"node '{node_id}': value is -inf at wealth {bad!r}; "
                                     f"the grid leaves the effective domain")
        plf, adjustment = repair_concavity(knots, values)
        probe_values = np.array([s.value for s in on_probes])
        defect = float(np.abs(probe_values - plf.value(probes)).max())
        return node_id, plf, adjustment + defect

    for t in reversed(range(tree.horizon)):
        slice_nodes = [nid for nid in tree.nodes_at(t)
                       if not tree.node(nid).is_terminal and not tree.is_polar(nid)]
        if threads > 1 and len(slice_nodes) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(solve_node, slice_nodes))
        else:
            results = [solve_node(nid) for nid in slice_nodes]

        slice_budget = 0.0
        for node_id, plf, budget in results:
            functions[node_id] = plf
            budgets[node_id] = budget
            slice_budget = max(slice_budget, budget)
        eps_grid += slice_budget
        logger.debug(f"Slice t={t}: {len(slice_nodes)} node(s), budget {slice_budget:.3e}")

    field_ = ValueField(tree, utility, knots, functions, budgets, eps_grid, tol, statistics,
                        max_iterations, grid.x0)
    logger.info(f"Backward induction finished: U0(x0)={field_.root_value():.10g}, eps_grid={eps_grid:.3e}")
    return field_


def robust_expectation(tree: ScenarioTree, level_values: Dict[str, float], depth: int) -> float:
    """min over selector products of E[f] for f given on the non-polar nodes at time `depth`.

    Per-node minimization backward is exact because the expectation is
    linear in each node's measure separately.
    """
    values = dict(level_values)
    for s in reversed(range(depth)):
        for nid in tree.nodes_at(s):
            if tree.is_polar(nid):
                continue
            node = tree.node(nid)
            totals = []
            for row in node.measures.extremes:
                terms, absorbed = [], False
                for p, child in zip(row, node.children):
                    if p > 0.0:
                        v = values[child]
                        if v <= VALUE_FLOOR:
                            absorbed = True
                            break
                        terms.append(p * v)
                totals.append(VALUE_FLOOR if absorbed else math.fsum(terms))
            values[nid] = min(totals)
    return values[tree.root]


def extract_strategy(tree: ScenarioTree, field: ValueField, x0: float,
                     tol: Optional[float] = None) -> Tuple[Strategy, float]:
    solver = MaxminSolver(tol or field.tol, field.max_iterations)
    holdings: Dict[str, np.ndarray] = {}
    wealth = {tree.root: float(x0)}

    for nid in tree.decision_nodes():
        w = wealth[nid]
        if tree.is_polar(nid):
            h = np.zeros(tree.asset_count)
        else:
            if w < -NEGATIVE_WEALTH_TOL:
                raise SolverError(f"wealth {w!r} slipped negative at node '{nid}'")
            w = max(w, 0.0)
            problem = OnePeriodProblem.at_node(tree, nid, field.continuation_map(nid), w)
            h = solver.solve(problem).h_opt
        holdings[nid] = h
        for child in tree.node(nid).children:
            wealth[child] = w + float(np.dot(h, tree.price_increment(nid, child)))

    strategy = Strategy(holdings)
    terminal_wealth = node_wealth(tree, strategy, x0)
    bound = wealth_bound(tree, x0)
    peak = max(w for nid, w in terminal_wealth.items() if not tree.is_polar(nid))
    if peak > bound * (1.0 + 1e-9):
        logger.warning(f"Extracted strategy reaches wealth {peak:.6g} above the bound {bound:.6g}")
    terminal = {nid: field.value(nid, terminal_wealth[nid])
                for nid in tree.terminal_nodes() if not tree.is_polar(nid)}
    value = robust_expectation(tree, terminal, tree.horizon)
    logger.info(f"Extracted strategy at x0={x0}: worst-case value {value:.10g}")
    return strategy, value


@dataclass
class InequalityReport:
    chain: List[float]
    tolerance: float
    nonincreasing: bool
    terminal_attains: Optional[bool] = None
    violations: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.nonincreasing and self.terminal_attains is not False


def verify_value_inequalities(tree: ScenarioTree, field: ValueField, strategy: Strategy, x0: float,
                              optimal: bool = False) -> InequalityReport:
    wealth = node_wealth(tree, strategy, x0)
    tolerance = field.eps_grid + 100.0 * field.tol + 1e-9
    chain = []
    for t in range(tree.horizon + 1):
        level = {nid: field.value(nid, wealth[nid]) for nid in tree.nodes_at(t) if not tree.is_polar(nid)}
        chain.append(robust_expectation(tree, level, t))

    violations = []
    nonincreasing = True
    for t in range(tree.horizon):
        if chain[t + 1] > chain[t] + tolerance:
            nonincreasing = False
            violations.append(f"chain increases from t={t} to t={t + 1} by {chain[t + 1] - chain[t]:.3e}")
    terminal_attains = None
    if optimal:
        terminal_attains = chain[-1] >= chain[0] - tolerance
        if not terminal_attains:
            violations.append(f"terminal value {chain[-1]:.10g} below U0(x0) - eps = {chain[0] - tolerance:.10g}")
    return InequalityReport(chain, tolerance, nonincreasing, terminal_attains, violations)
