"""Seeded market generators for demos, the lab and the regression corpus."""
import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from .arbitrage import compute_support
from .market import MeasureSet, Node, ScenarioTree, Strategy


def binomial_tree(horizon: int, up: float = 2.0, down: float = 0.5,
                  extremes: Sequence[Sequence[float]] = ((0.5, 0.5),), s0: float = 1.0) -> ScenarioTree:
    """Multiplicative binomial tree; children ordered (down, up)."""
    nodes: List[Node] = []
    frontier = [("r", s0)]
    for t in range(horizon + 1):
        next_frontier = []
        for node_id, price in frontier:
            if t == horizon:
                nodes.append(Node(node_id, t, [price]))
                continue
            children = (node_id + "d", node_id + "u")
            nodes.append(Node(node_id, t, [price], children, MeasureSet(np.array(extremes, dtype=float))))
            next_frontier += [(children[0], price * down), (children[1], price * up)]
        frontier = next_frontier
    return ScenarioTree(horizon, 1, nodes, root="r")


def one_period_tree(increments, extremes, s0=None, endowments: Optional[Sequence[float]] = None) -> ScenarioTree:
    increments = np.atleast_2d(np.asarray(increments, dtype=float))
    m, d = increments.shape
    s0 = np.ones(d) if s0 is None else np.broadcast_to(np.asarray(s0, dtype=float), (d,))
    children = tuple(f"c{i}" for i in range(m))
    nodes = [Node("r", 0, s0, children, MeasureSet(np.asarray(extremes, dtype=float)))]
    for i, child in enumerate(children):
        e = None if endowments is None else float(endowments[i])
        nodes.append(Node(child, 1, s0 + increments[i], endowment=e))
    return ScenarioTree(1, d, nodes, root="r")


def random_extremes(rng: np.random.Generator, children: int, count: int) -> np.ndarray:
    rows = rng.dirichlet(np.ones(children), size=count)
    # exact normalization keeps the validator's 1e-12 check happy
    rows[:, -1] = 1.0 - rows[:, :-1].sum(axis=1)
    return np.clip(rows, 0.0, None)


def surrounding_atoms(rng: np.random.Generator, d: int, m: int, scale: float = 1.0) -> np.ndarray:
    """m >= d + 1 vectors whose convex hull holds the origin in its interior."""
    if m < d + 1:
        raise ValueError(f"need at least {d + 1} atoms to surround the origin in R^{d}")
    while True:
        basis = rng.normal(size=(d, d))
        if abs(np.linalg.det(basis)) > 0.1:
            break
    weights = rng.uniform(0.5, 1.5, size=d)
    closing = -(weights @ basis) / rng.uniform(0.5, 1.5)
    extra = rng.normal(size=(m - d - 1, d))
    atoms = np.vstack([basis, closing, extra])
    return scale * atoms / np.abs(atoms).max()


def half_space_atoms(rng: np.random.Generator, d: int, m: int, margin: float = 0.2,
                     scale: float = 1.0) -> np.ndarray:
    """Atoms with n.v >= margin * scale for a random unit n; an arbitrage instance."""
    n = rng.normal(size=d)
    n /= np.linalg.norm(n)
    atoms = rng.normal(size=(m, d))
    atoms -= np.outer(atoms @ n, n)
    atoms = 0.5 * atoms / max(1.0, np.abs(atoms).max())
    atoms += np.outer(rng.uniform(margin, 1.0, size=m), n)
    return scale * atoms


def random_one_period(rng: np.random.Generator, d: int = 1, m: int = 3, k: int = 2,
                      arbitrage: Optional[bool] = None, low: float = -1.0, high: float = 3.0) -> ScenarioTree:
    """One-period instance; arbitrage None draws atoms uniformly in [low, high]^d."""
    if arbitrage is None:
        atoms = rng.uniform(low, high, size=(m, d))
    elif arbitrage:
        atoms = half_space_atoms(rng, d, m)
    else:
        atoms = surrounding_atoms(rng, d, max(m, d + 1))
    s0 = max(1.0, -float(atoms.min()))
    return one_period_tree(atoms, random_extremes(rng, atoms.shape[0], k), s0=np.full(d, s0))


def _random_returns(rng: np.random.Generator, d: int, arbitrage: bool) -> np.ndarray:
    if d == 1:
        if arbitrage:
            return rng.uniform(0.1, 0.5, size=(2, 1))
        count = int(rng.integers(2, 4))
        returns = rng.uniform(-0.5, 0.8, size=count)
        returns[0] = rng.uniform(-0.5, -0.1)
        returns[1] = rng.uniform(0.1, 0.8)
        return returns[:, None]
    if arbitrage:
        angles = rng.uniform(-math.pi / 3, math.pi / 3, size=3)
    else:
        angles = rng.uniform(0, 2 * math.pi) + np.arange(3) * 2 * math.pi / 3 + rng.uniform(-0.4, 0.4, size=3)
    radii = rng.uniform(0.1, 0.5, size=3)
    return np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])


def random_tree(rng: np.random.Generator, horizon: int = 2, d: int = 1, max_extremes: int = 3,
                arbitrage_nodes: Sequence[str] = ()) -> ScenarioTree:
    """Random tree with multiplicative returns in (-0.5, 0.8); ids like n0.1.0."""
    nodes: List[Node] = []
    frontier = [("n0", np.ones(d))]
    for t in range(horizon + 1):
        next_frontier = []
        for node_id, price in frontier:
            if t == horizon:
                nodes.append(Node(node_id, t, price))
                continue
            returns = _random_returns(rng, d, node_id in arbitrage_nodes)
            children = tuple(f"{node_id}.{i}" for i in range(len(returns)))
            k = int(rng.integers(1, max_extremes + 1))
            nodes.append(Node(node_id, t, price, children, MeasureSet(random_extremes(rng, len(children), k))))
            next_frontier += [(c, price * (1.0 + r)) for c, r in zip(children, returns)]
        frontier = next_frontier
    return ScenarioTree(horizon, d, nodes, root="n0")


def random_admissible_strategy(tree: ScenarioTree, x0: float, rng: np.random.Generator,
                               fraction: float = 0.8) -> Strategy:
    """Random h in K_w at every non-polar node, never risking more than `fraction` of wealth."""
    holdings: Dict[str, np.ndarray] = {}
    wealth = {tree.root: float(x0)}
    for nid in tree.decision_nodes():
        w = wealth[nid]
        h = np.zeros(tree.asset_count)
        if not tree.is_polar(nid):
            support = compute_support(tree, nid)
            if support.dimension:
                u = rng.normal(size=support.dimension)
                u /= np.linalg.norm(u)
                rates = support.reduced_vectors @ u
                losing = rates < 0
                t_max = float(np.min(w / -rates[losing])) if losing.any() else w
                h = support.basis_L @ (u * t_max * rng.uniform(0.0, fraction))
        holdings[nid] = h
        for child in tree.node(nid).children:
            wealth[child] = w + float(h @ tree.price_increment(nid, child))
    return Strategy(holdings)
