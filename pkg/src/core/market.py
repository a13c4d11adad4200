import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .errors import MarketError

PROBABILITY_SUM_TOL = 1e-12


@dataclass(eq=False)
class MeasureSet:
    # rows are extreme probability vectors over the node's children
    extremes: np.ndarray

    def __post_init__(self):
        self.extremes = np.atleast_2d(np.asarray(self.extremes, dtype=float))

    @property
    def count(self) -> int:
        return self.extremes.shape[0]

    def nonpolar_mask(self) -> np.ndarray:
        # exact comparison; polarity is combinatorial
        return (self.extremes > 0.0).any(axis=0)


@dataclass(eq=False)
class Node:
    id: str
    time: int
    price: np.ndarray
    children: Tuple[str, ...] = ()
    measures: Optional[MeasureSet] = None
    endowment: Optional[float] = None

    def __post_init__(self):
        self.price = np.asarray(self.price, dtype=float).reshape(-1)
        self.children = tuple(self.children)
        if self.measures is not None and not isinstance(self.measures, MeasureSet):
            self.measures = MeasureSet(self.measures)

    @property
    def is_terminal(self) -> bool:
        return not self.children


class ScenarioTree:
    def __init__(self, horizon: int, asset_count: int, nodes: Iterable[Node], root: Optional[str] = None):
        self.horizon = int(horizon)
        self.asset_count = int(asset_count)
        self.nodes: Dict[str, Node] = {}
        for node in nodes:
            if node.id in self.nodes:
                raise MarketError(f"duplicate node id '{node.id}'")
            self.nodes[node.id] = node

        self.parents: Dict[str, str] = {}
        self.extra_parents: List[Tuple[str, str]] = []
        for node in self.nodes.values():
            for child in node.children:
                if child in self.parents:
                    self.extra_parents.append((child, node.id))
                else:
                    self.parents[child] = node.id

        if root is None:
            orphans = [nid for nid in self.nodes if nid not in self.parents]
            if not orphans:
                raise MarketError("tree has no root (every node has a parent)")
            root = orphans[0]
        if root not in self.nodes:
            raise MarketError(f"root '{root}' is not a node")
        self.root = root
        self._polar: Optional[Dict[str, bool]] = None

    def __repr__(self):
        return f"ScenarioTree(T={self.horizon}, d={self.asset_count}, nodes={len(self.nodes)})"

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise MarketError(f"unknown node '{node_id}'")

    def parent(self, node_id: str) -> Optional[str]:
        return self.parents.get(node_id)

    def children(self, node_id: str) -> List[Node]:
        return [self.nodes[c] for c in self.node(node_id).children if c in self.nodes]

    def price_increment(self, parent_id: str, child_id: str) -> np.ndarray:
        return self.node(child_id).price - self.node(parent_id).price

    def increments(self, node_id: str) -> np.ndarray:
        node = self.node(node_id)
        if not node.children:
            return np.zeros((0, self.asset_count))
        return np.vstack([self.price_increment(node_id, c) for c in node.children])

    def breadth_first(self) -> List[str]:
        order, queue, seen = [], deque([self.root]), {self.root}
        while queue:
            nid = queue.popleft()
            order.append(nid)
            for child in self.nodes[nid].children:
                if child in self.nodes and child not in seen:
                    seen.add(child)
                    queue.append(child)
        return order

    def decision_nodes(self) -> List[str]:
        return [nid for nid in self.breadth_first() if not self.nodes[nid].is_terminal]

    def terminal_nodes(self) -> List[str]:
        return [nid for nid in self.breadth_first() if self.nodes[nid].is_terminal]

    def nodes_at(self, t: int) -> List[str]:
        return [nid for nid in self.breadth_first() if self.nodes[nid].time == t]

    def path_to(self, node_id: str) -> List[str]:
        path = [node_id]
        while path[-1] != self.root:
            parent = self.parents.get(path[-1])
            if parent is None:
                raise MarketError(f"node '{node_id}' is not connected to the root")
            path.append(parent)
        return path[::-1]

    def _compute_polar(self) -> Dict[str, bool]:
        polar = {self.root: False}
        for nid in self.breadth_first():
            node = self.nodes[nid]
            if node.is_terminal:
                continue
            mask = None
            if node.measures is not None and node.measures.extremes.shape[1] == len(node.children):
                mask = node.measures.nonpolar_mask()
            for i, child in enumerate(node.children):
                if child not in self.nodes:
                    continue
                reachable = mask is not None and bool(mask[i])
                polar[child] = polar[nid] or not reachable
        return polar

    def is_polar(self, node_id: str) -> bool:
        if self._polar is None:
            self._polar = self._compute_polar()
        return self._polar.get(node_id, True)

    def nonpolar_decision_nodes(self) -> List[str]:
        return [nid for nid in self.decision_nodes() if not self.is_polar(nid)]

    def nonpolar_children(self, node_id: str) -> List[str]:
        node = self.node(node_id)
        mask = node.measures.nonpolar_mask()
        return [c for c, keep in zip(node.children, mask) if keep]


@dataclass
class Strategy:
    holdings: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, tree: ScenarioTree) -> 'Strategy':
        return cls({nid: np.zeros(tree.asset_count) for nid in tree.decision_nodes()})

    def at(self, node_id: str) -> np.ndarray:
        try:
            return self.holdings[node_id]
        except KeyError:
            raise MarketError(f"strategy has no position at node '{node_id}'")

    def with_position(self, node_id: str, h) -> 'Strategy':
        holdings = dict(self.holdings)
        holdings[node_id] = np.asarray(h, dtype=float)
        return Strategy(holdings)

    def to_dict(self) -> Dict[str, List[float]]:
        return {nid: [float(v) for v in h] for nid, h in self.holdings.items()}


@dataclass
class ValidationReport:
    violations: List[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


def validate_tree(tree: ScenarioTree) -> ValidationReport:
    violations = []
    root = tree.nodes[tree.root]
    if root.time != 0:
        violations.append(f"node '{root.id}': root must have time 0, got {root.time}")

    for child, parent in tree.extra_parents:
        violations.append(f"node '{child}': multiple parents ('{tree.parents[child]}', '{parent}')")

    reachable = set(tree.breadth_first())
    for nid, node in tree.nodes.items():
        if nid not in reachable:
            violations.append(f"node '{nid}': unreachable from root")
        if node.price.shape != (tree.asset_count,):
            violations.append(f"node '{nid}': price has {node.price.size} entries, expected {tree.asset_count}")
        elif not np.all(np.isfinite(node.price)):
            violations.append(f"node '{nid}': price is not finite")

        for child in node.children:
            if child not in tree.nodes:
                violations.append(f"node '{nid}': unknown child '{child}'")
            elif tree.nodes[child].time != node.time + 1:
                violations.append(f"node '{child}': time {tree.nodes[child].time} does not follow parent time {node.time}")

        if node.is_terminal:
            if node.time != tree.horizon:
                violations.append(f"node '{nid}': non-uniform depth (terminal at t={node.time}, horizon {tree.horizon})")
            if node.measures is not None:
                violations.append(f"node '{nid}': terminal node carries a measure set")
        else:
            if node.time >= tree.horizon:
                violations.append(f"node '{nid}': non-uniform depth (children beyond horizon {tree.horizon})")
            if node.endowment is not None:
                violations.append(f"node '{nid}': endowment only allowed at terminal nodes")
            violations.extend(_measure_violations(node))

    for nid in tree.nodes:
        node = tree.nodes[nid]
        if nid in reachable and node.price.shape == (tree.asset_count,) and not tree.is_polar(nid):
            if np.any(node.price < 0.0):
                violations.append(f"node '{nid}': negative price on a non-polar node")

    if violations:
        logger.debug(f"Tree validation found {len(violations)} violation(s)")
    return ValidationReport(violations)


def _measure_violations(node: Node) -> List[str]:
    if node.measures is None:
        return [f"node '{node.id}': measure set missing"]
    extremes = node.measures.extremes
    problems = []
    if extremes.shape[0] < 1:
        problems.append(f"node '{node.id}': measure set has no extreme vectors")
    if extremes.shape[1] != len(node.children):
        problems.append(f"node '{node.id}': measure length {extremes.shape[1]} != {len(node.children)} children")
        return problems
    for j, row in enumerate(extremes):
        if np.any(row < 0.0):
            problems.append(f"node '{node.id}': measure {j} has a negative probability")
        total = math.fsum(row)
        if abs(total - 1.0) > PROBABILITY_SUM_TOL:
            problems.append(f"node '{node.id}': measure not normalized (measure {j} sums to {total!r})")
    return problems


def _check_path(tree: ScenarioTree, path: Sequence[str]):
    if not path or path[0] != tree.root:
        raise MarketError("non-path input: path must start at the root")
    for parent, child in zip(path, path[1:]):
        if child not in tree.node(parent).children:
            raise MarketError(f"non-path input: '{child}' is not a child of '{parent}'")


def wealth_along_path(tree: ScenarioTree, strategy: Strategy, x0: float, path: Sequence[str]) -> List[float]:
    _check_path(tree, path)
    gains, wealth = [], [float(x0)]
    for parent, child in zip(path, path[1:]):
        gains.append(float(np.dot(strategy.at(parent), tree.price_increment(parent, child))))
        wealth.append(x0 + math.fsum(gains))
    return wealth


def node_wealth(tree: ScenarioTree, strategy: Strategy, x0: float) -> Dict[str, float]:
    """Wealth x0 + H.S_t at every node reachable from the root."""
    gains: Dict[str, List[float]] = {tree.root: []}
    wealth = {tree.root: float(x0)}
    for nid in tree.breadth_first():
        node = tree.nodes[nid]
        if node.is_terminal:
            continue
        h = strategy.at(nid)
        for child in node.children:
            if child not in tree.nodes:
                continue
            gains[child] = gains[nid] + [float(np.dot(h, tree.price_increment(nid, child)))]
            wealth[child] = x0 + math.fsum(gains[child])
    return wealth
