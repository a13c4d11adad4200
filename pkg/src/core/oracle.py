"""Brute-force ground truth for small trees.

Enumerates products of extreme measures and searches strategies on a lattice.
Expectations here are computed with their own code so the oracle can be used
to cross-check the dynamic program.
"""
import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .arbitrage import check_na_node, compute_support, nondegeneracy_margin
from .errors import CapExceededError, InputError, MarketError
from .market import ScenarioTree, Strategy
from .utility import VALUE_FLOOR, UtilitySpec

DEFAULT_SELECTOR_CAP = 1_000_000
DEFAULT_EVALUATION_CAP = 20_000_000
ADMISSIBILITY_TOL = 1e-12
FALLBACK_RADIUS = 4.0


@dataclass
class SelectorProduct:
    choice: Dict[str, int]
    terminal_probabilities: Dict[str, float]

    def total_mass(self) -> float:
        return math.fsum(self.terminal_probabilities.values())


def selector_count(tree: ScenarioTree) -> int:
    return math.prod(tree.node(nid).measures.count for nid in tree.decision_nodes())


def _path_probabilities(tree: ScenarioTree, choice: Dict[str, int]) -> Dict[str, float]:
    mass = {tree.root: 1.0}
    terminal = {}
    for nid in tree.breadth_first():
        node = tree.node(nid)
        if node.is_terminal:
            terminal[nid] = mass[nid]
            continue
        row = node.measures.extremes[choice[nid]]
        for child, p in zip(node.children, row):
            mass[child] = mass[nid] * float(p)
    return terminal


def iter_selectors(tree: ScenarioTree, cap: int = DEFAULT_SELECTOR_CAP) -> Iterator[SelectorProduct]:
    decision = tree.decision_nodes()
    count = selector_count(tree)
    if count > cap:
        raise CapExceededError(f"{count} selector products exceed the cap of {cap}")
    ranges = [range(tree.node(nid).measures.count) for nid in decision]
    for indices in itertools.product(*ranges):
        choice = dict(zip(decision, indices))
        yield SelectorProduct(choice, _path_probabilities(tree, choice))


def enumerate_selectors(tree: ScenarioTree, cap: int = DEFAULT_SELECTOR_CAP) -> List[SelectorProduct]:
    return list(iter_selectors(tree, cap))


@dataclass
class WorstCaseResult:
    value: float
    selector_index: Optional[int]
    selector: Optional[SelectorProduct]
    violating_path: Optional[List[str]] = None

    @property
    def admissible(self) -> bool:
        return self.violating_path is None


def _terminal_wealth(tree: ScenarioTree, strategy: Strategy, x0: float) -> Dict[str, float]:
    wealth = {tree.root: float(x0)}
    for nid in tree.breadth_first():
        node = tree.node(nid)
        for child in node.children:
            gain = sum(float(a) * float(b) for a, b in zip(strategy.at(nid), tree.price_increment(nid, child)))
            wealth[child] = wealth[nid] + gain
    return wealth


def _first_violation(tree: ScenarioTree, wealth: Dict[str, float]) -> Optional[List[str]]:
    for nid in tree.breadth_first():
        if not tree.is_polar(nid) and wealth[nid] < -ADMISSIBILITY_TOL:
            return tree.path_to(nid)
    return None


def _terminal_utilities(tree: ScenarioTree, utility: UtilitySpec, wealth: Dict[str, float],
                        terminals: Sequence[str]) -> np.ndarray:
    values = []
    for nid in terminals:
        w = max(wealth[nid], 0.0)
        e = tree.node(nid).endowment if utility.endowment_enabled else None
        values.append(float(utility.value(w + (e or 0.0))))
    return np.array(values)


def _expectations(extremes: np.ndarray, values: np.ndarray) -> np.ndarray:
    """(n, k) expectations of n outcome rows under k probability rows."""
    floored = values <= VALUE_FLOOR
    total = np.where(floored, 0.0, values) @ extremes.T
    # a floored outcome with positive mass makes the whole expectation the floor
    hit = floored.astype(float) @ (extremes > 0.0).T.astype(float) > 0.0
    return np.where(hit, VALUE_FLOOR, total)


def worst_case_expected_utility(tree: ScenarioTree, strategy: Strategy, utility: UtilitySpec, x0: float,
                                cap: int = DEFAULT_SELECTOR_CAP) -> WorstCaseResult:
    wealth = _terminal_wealth(tree, strategy, x0)
    violation = _first_violation(tree, wealth)
    if violation is not None:
        logger.debug(f"Strategy inadmissible along {'/'.join(violation)}")
        return WorstCaseResult(VALUE_FLOOR, None, None, violation)

    terminals = tree.terminal_nodes()
    values = _terminal_utilities(tree, utility, wealth, terminals)
    best_value, best_index, best_selector = math.inf, None, None
    for index, selector in enumerate(iter_selectors(tree, cap)):
        probs = np.array([selector.terminal_probabilities[t] for t in terminals])
        expectation = float(_expectations(probs[None, :], values[None, :])[0, 0])
        if expectation < best_value:
            best_value, best_index, best_selector = expectation, index, selector
    return WorstCaseResult(best_value, best_index, best_selector)


def greedy_worst_case(tree: ScenarioTree, strategy: Strategy, utility: UtilitySpec, x0: float) -> float:
    """Per-node backward minimization for a fixed strategy."""
    wealth = _terminal_wealth(tree, strategy, x0)
    if _first_violation(tree, wealth) is not None:
        return VALUE_FLOOR
    terminals = tree.terminal_nodes()
    level = dict(zip(terminals, _terminal_utilities(tree, utility, wealth, terminals)))
    for nid in reversed(tree.decision_nodes()):
        node = tree.node(nid)
        child_values = np.array([level[c] for c in node.children])
        level[nid] = float(np.min(_expectations(node.measures.extremes, child_values[None, :])))
    return level[tree.root]


@dataclass
class GridSpec:
    step: float
    radius: Optional[float] = None

    def __post_init__(self):
        if not self.step > 0.0:
            raise InputError(f"grid step must be positive, got {self.step}")


@dataclass
class OracleResult:
    value: float
    strategy: Strategy
    evaluations: int
    bounded: bool
    resolution_bound: float
    warnings: List[str] = field(default_factory=list)


@dataclass
class _NodeGeometry:
    vectors: np.ndarray        # increments at non-polar children
    children: Tuple[str, ...]
    extremes: np.ndarray       # restricted to non-polar children
    margin: Optional[float]


class _GridSearch:
    def __init__(self, tree: ScenarioTree, utility: UtilitySpec, spec: GridSpec, cap: int):
        self.tree = tree
        self.utility = utility
        self.spec = spec
        self.cap = cap
        self.evaluations = 0
        self.bounded = True
        self.warnings: List[str] = []
        self.geometry: Dict[str, _NodeGeometry] = {}
        for nid in tree.nonpolar_decision_nodes():
            support = compute_support(tree, nid)
            margin = None
            if check_na_node(support).holds:
                margin = nondegeneracy_margin(support)
            else:
                self.bounded = False
                self.warnings.append(f"no-arbitrage fails at node '{nid}'; grid value grows with the radius")
            self.geometry[nid] = _NodeGeometry(support.support_vectors, support.nonpolar_children,
                                               support.probabilities, margin)

    def _radius(self, nid: str, w: float) -> float:
        if self.spec.radius is not None:
            return self.spec.radius
        margin = self.geometry[nid].margin
        if margin is None or margin == 0.0:
            return FALLBACK_RADIUS * max(w, 1.0)
        if math.isinf(margin):
            return 0.0
        return w / margin

    def _lattice(self, nid: str, w: float) -> Tuple[np.ndarray, np.ndarray]:
        d = self.tree.asset_count
        step = self.spec.step
        reach = int(math.floor(self._radius(nid, w) / step + 1e-9))
        axis = np.arange(-reach, reach + 1, dtype=np.int64)
        ticks = np.stack(np.meshgrid(*([axis] * d), indexing='ij'), axis=-1).reshape(-1, d)
        H = ticks * step
        keep = np.all(w + H @ self.geometry[nid].vectors.T >= -ADMISSIBILITY_TOL, axis=1)
        if not keep.any():
            return np.zeros((1, d), dtype=np.int64), np.zeros((1, d))
        return ticks[keep], H[keep]

    def _terminal_value(self, nid: str, w: np.ndarray) -> np.ndarray:
        e = self.tree.node(nid).endowment if self.utility.endowment_enabled else None
        w = np.asarray(w, dtype=float)
        out = self.utility.value(np.maximum(w, 0.0) + (e or 0.0))
        return np.where(w < -ADMISSIBILITY_TOL, VALUE_FLOOR, out)

    def _scan(self, nid: str, w: float):
        geo = self.geometry[nid]
        ticks, H = self._lattice(nid, w)
        self.evaluations += H.shape[0] * len(geo.children)
        if self.evaluations > self.cap:
            raise CapExceededError(f"oracle evaluations exceed the cap of {self.cap}")

        child_wealth = w + H @ geo.vectors.T
        values = np.empty_like(child_wealth)
        for j, child in enumerate(geo.children):
            if self.tree.node(child).is_terminal:
                values[:, j] = self._terminal_value(child, child_wealth[:, j])
            else:
                values[:, j] = [self.value(child, float(cw)) for cw in child_wealth[:, j]]
        worst = np.min(_expectations(geo.extremes, values), axis=1)
        return ticks, H, child_wealth, worst

    def value(self, nid: str, w: float) -> float:
        if self.tree.node(nid).is_terminal:
            return float(self._terminal_value(nid, w))
        return float(np.max(self._scan(nid, w)[3]))

    def search(self, nid: str, w: float) -> Tuple[float, Dict[str, np.ndarray], float]:
        """Best worst-case value from node nid at wealth w, its holdings and a resolution estimate."""
        if self.tree.node(nid).is_terminal:
            return float(self._terminal_value(nid, w)), {}, 0.0
        ticks, H, child_wealth, worst = self._scan(nid, w)
        best = int(np.argmax(worst))

        holdings = {nid: H[best].copy()}
        child_bound = 0.0
        for j, child in enumerate(self.geometry[nid].children):
            if not self.tree.node(child).is_terminal:
                _, sub, bound = self.search(child, float(child_wealth[best, j]))
                holdings.update(sub)
                child_bound = max(child_bound, bound)
        return float(worst[best]), holdings, self._local_bound(ticks, worst, best) + child_bound

    def _local_bound(self, ticks: np.ndarray, worst: np.ndarray, best: int) -> float:
        # concave objective: the loss to the true maximum is at most the steepest neighbour slope times the spacing
        index = {tuple(t): i for i, t in enumerate(ticks)}
        step = self.spec.step
        slopes = []
        for k in range(ticks.shape[1]):
            slope = 0.0
            for sign in (-1, 1):
                neighbour = ticks[best].copy()
                neighbour[k] += sign
                i = index.get(tuple(neighbour))
                if i is not None and worst[i] > VALUE_FLOOR:
                    slope = max(slope, abs(worst[best] - worst[i]) / step)
            slopes.append(slope)
        return float(np.linalg.norm(slopes)) * step * math.sqrt(len(slopes))


def brute_force_value(tree: ScenarioTree, utility: UtilitySpec, x0: float, h_grid: GridSpec,
                      evaluation_cap: int = DEFAULT_EVALUATION_CAP) -> OracleResult:
    if x0 < 0:
        raise MarketError(f"initial capital must be nonnegative, got {x0}")
    search = _GridSearch(tree, utility, h_grid, evaluation_cap)
    value, holdings, bound = search.search(tree.root, float(x0))

    strategy = Strategy.zeros(tree)
    for nid, h in holdings.items():
        strategy = strategy.with_position(nid, h)

    for warning in search.warnings:
        logger.warning(f"Oracle: {warning}")
    logger.info(f"Oracle value {value:.10g} after {search.evaluations} evaluations (step {h_grid.step})")
    return OracleResult(value, strategy, search.evaluations, search.bounded, bound, search.warnings)


def find_tree_arbitrage(tree: ScenarioTree, step: float = 0.5, radius: float = 1.0,
                        cap: int = DEFAULT_SELECTOR_CAP) -> Optional[Strategy]:
    """Grid search for a zero-capital strategy with nonnegative gains and a strictly positive one."""
    nodes = tree.nonpolar_decision_nodes()
    d = tree.asset_count
    terminals = [t for t in tree.terminal_nodes() if not tree.is_polar(t)]
    if not nodes or not terminals:
        return None

    # gains at each non-polar terminal are linear in the stacked holdings
    column = {nid: i for i, nid in enumerate(nodes)}
    gain_map = np.zeros((len(terminals), len(nodes) * d))
    for row, t in enumerate(terminals):
        path = tree.path_to(t)
        for parent, child in zip(path, path[1:]):
            i = column[parent]
            gain_map[row, i * d:(i + 1) * d] += tree.price_increment(parent, child)

    reach = int(math.floor(radius / step + 1e-9))
    axis = np.arange(-reach, reach + 1) * step
    total = len(axis) ** (len(nodes) * d)
    if total > cap:
        raise CapExceededError(f"{total} grid strategies exceed the cap of {cap}")

    combos = itertools.product(axis, repeat=len(nodes) * d)
    while True:
        chunk = np.array(list(itertools.islice(combos, 65536)))
        if chunk.size == 0:
            return None
        gains = chunk @ gain_map.T
        hits = np.flatnonzero(np.all(gains >= -1e-12, axis=1) & np.any(gains > 1e-9, axis=1))
        if hits.size:
            flat = chunk[hits[0]]
            holdings = {nid: np.zeros(d) for nid in tree.decision_nodes()}
            for nid, i in column.items():
                holdings[nid] = flat[i * d:(i + 1) * d].copy()
            logger.info(f"Tree arbitrage found on the grid: {Strategy(holdings).to_dict()}")
            return Strategy(holdings)
