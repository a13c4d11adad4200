import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from loguru import logger

from .errors import ArbitrageError, LinearProgramError, MarginUndefinedError
from .market import ScenarioTree
from .simplex import LPStatus, solve_lp

RANK_CUTOFF = 1e-10
NA_TOL = 1e-9
MARGIN_TOL = 1e-8


class NAStatus(str, Enum):
    HOLDS = "holds"
    VIOLATED = "violated"


@dataclass(eq=False)
class SupportData:
    node: str
    nonpolar_children: Tuple[str, ...]
    positions: np.ndarray          # indices of non-polar children in the node's child list
    support_vectors: np.ndarray    # (m, d) price increments at non-polar children
    basis_L: np.ndarray            # (d, r) orthonormal columns
    projector_L: np.ndarray        # (d, d)
    probabilities: np.ndarray      # (k, m) extremes restricted to non-polar children
    _na: Optional['NAResult'] = field(default=None, init=False, repr=False)

    def na_result(self) -> 'NAResult':
        if self._na is None:
            self._na = check_na_node(self)
        return self._na

    @property
    def dimension(self) -> int:
        return self.basis_L.shape[1]

    @property
    def reduced_vectors(self) -> np.ndarray:
        # support vectors in L coordinates
        return self.support_vectors @ self.basis_L


@dataclass
class NAResult:
    status: NAStatus
    witness: Optional[np.ndarray] = None

    @property
    def holds(self) -> bool:
        return self.status == NAStatus.HOLDS


def compute_support(tree: ScenarioTree, node_id: str) -> SupportData:
    node = tree.node(node_id)
    if node.is_terminal:
        raise ArbitrageError(f"node '{node_id}' is terminal; support is undefined", node=node_id)
    mask = node.measures.nonpolar_mask()
    positions = np.flatnonzero(mask)
    increments = tree.increments(node_id)[positions]
    d = tree.asset_count

    if increments.shape[0]:
        _, singular, vt = np.linalg.svd(increments, full_matrices=False)
        rank = int(np.sum(singular > RANK_CUTOFF * max(1.0, singular[0])))
        basis = vt[:rank].T.copy()
    else:
        basis = np.zeros((d, 0))

    return SupportData(
        node=node_id,
        nonpolar_children=tuple(node.children[i] for i in positions),
        positions=positions,
        support_vectors=increments,
        basis_L=basis,
        projector_L=basis @ basis.T,
        probabilities=node.measures.extremes[:, positions],
    )


def project_to_L(support: SupportData, h) -> np.ndarray:
    return support.projector_L @ np.asarray(h, dtype=float)


def check_na_node(support: SupportData) -> NAResult:
    """Maximize sum(s) over h in L with 0 <= s_i <= min(1, h.v_i); NA iff the optimum is 0."""
    r = support.dimension
    w = support.reduced_vectors
    m = w.shape[0]
    if r == 0 or m == 0:
        return NAResult(NAStatus.HOLDS)

    # variables: z (free, r) then s (m)
    c = np.concatenate([np.zeros(r), -np.ones(m)])
    upper_gain = np.hstack([-w, np.eye(m)])
    upper_one = np.hstack([np.zeros((m, r)), np.eye(m)])
    A_ub = np.vstack([upper_gain, upper_one])
    b_ub = np.concatenate([np.zeros(m), np.ones(m)])
    free = np.concatenate([np.ones(r, dtype=bool), np.zeros(m, dtype=bool)])

    result = solve_lp(c, A_ub, b_ub, free=free)
    if not result.optimal:
        raise LinearProgramError(f"no-arbitrage program at node '{support.node}' returned {result.status.value}")

    if -result.objective <= NA_TOL:
        return NAResult(NAStatus.HOLDS)

    h = support.basis_L @ result.x[:r]
    h = project_to_L(support, h)
    h = h / np.linalg.norm(h)
    logger.debug(f"Arbitrage at node '{support.node}': witness {h}")
    return NAResult(NAStatus.VIOLATED, witness=h)


def check_na_tree(tree: ScenarioTree) -> Dict[str, NAResult]:
    results = {}
    for node_id in tree.nonpolar_decision_nodes():
        try:
            results[node_id] = check_na_node(compute_support(tree, node_id))
        except LinearProgramError as e:
            raise LinearProgramError(f"node '{node_id}': {e.message}")
    return results


def na_holds(results: Dict[str, NAResult]) -> bool:
    return all(r.holds for r in results.values())


def require_na(tree: ScenarioTree) -> Dict[str, NAResult]:
    results = check_na_tree(tree)
    for node_id, result in results.items():
        if not result.holds:
            raise ArbitrageError(f"no-arbitrage fails at node '{node_id}' (witness {result.witness.tolist()})",
                                 node=node_id, witness=result.witness)
    return results


@dataclass(eq=False)
class AdmissiblePolytope:
    """K_x = {h in L : x + h.v_i >= 0 for every non-polar i}."""
    node: str
    capital: float
    normals: np.ndarray     # support vectors v_i
    offsets: np.ndarray     # x for every row
    basis_L: np.ndarray
    bounded: bool

    def contains(self, h, tol: float = 1e-9) -> bool:
        h = np.asarray(h, dtype=float)
        in_L = np.linalg.norm(h - self.basis_L @ (self.basis_L.T @ h)) <= tol * max(1.0, np.linalg.norm(h))
        return bool(in_L and np.all(self.offsets + self.normals @ h >= -tol))

    def extent_along(self, direction) -> Tuple[float, float]:
        """Min and max of direction.h over the polytope (+-inf if unbounded)."""
        r = self.basis_L.shape[1]
        if r == 0:
            return 0.0, 0.0
        g = self.basis_L.T @ np.asarray(direction, dtype=float)
        A_ub = -(self.normals @ self.basis_L)
        free = np.ones(r, dtype=bool)
        low = solve_lp(g, A_ub, self.offsets, free=free)
        high = solve_lp(-g, A_ub, self.offsets, free=free)
        lo = low.objective if low.optimal else -math.inf
        hi = -high.objective if high.optimal else math.inf
        return lo, hi


def admissible_polytope(support: SupportData, x: float) -> AdmissiblePolytope:
    if x < 0:
        raise ArbitrageError(f"capital must be nonnegative, got {x}", node=support.node)
    m = support.support_vectors.shape[0]
    # the recession cone {h in L : h.v_i >= 0} is trivial exactly when NA holds
    bounded = support.na_result().holds
    return AdmissiblePolytope(
        node=support.node,
        capital=float(x),
        normals=support.support_vectors.copy(),
        offsets=np.full(m, float(x)),
        basis_L=support.basis_L,
        bounded=bounded,
    )


def _supporting_offsets(points: np.ndarray) -> np.ndarray:
    """Offsets b of every facet a.w <= b (|a| = 1) of conv(points) in R^r."""
    m, r = points.shape
    offsets = []
    for combo in itertools.combinations(range(m), r):
        base = points[combo[0]]
        diffs = points[list(combo[1:])] - base
        if r == 1:
            normals = [np.array([1.0])]
        else:
            _, s, vt = np.linalg.svd(diffs)
            if np.sum(s > RANK_CUTOFF) < r - 1:
                continue
            normals = [vt[-1]]
        for a in normals:
            for sign in (1.0, -1.0):
                n = sign * a / np.linalg.norm(a)
                b = float(n @ base)
                if np.all(points @ n <= b + MARGIN_TOL):
                    offsets.append(b)
    return np.array(offsets)


def nondegeneracy_margin(support: SupportData) -> float:
    """Inradius of conv{v_i} around the origin within L.

    With the ball centred at the origin the Chebyshev program reduces to the
    smallest facet offset, so the facets are enumerated directly.
    """
    if not support.na_result().holds:
        raise MarginUndefinedError(f"margin undefined: no-arbitrage fails at node '{support.node}'",
                                   node=support.node)
    if support.dimension == 0:
        return math.inf
    offsets = _supporting_offsets(support.reduced_vectors)
    if offsets.size == 0:
        return 0.0
    return max(0.0, float(offsets.min()))


def tree_margins(tree: ScenarioTree) -> Dict[str, float]:
    return {nid: nondegeneracy_margin(compute_support(tree, nid)) for nid in tree.nonpolar_decision_nodes()}


def chebyshev_center(A: np.ndarray, b: np.ndarray) -> Tuple[Optional[np.ndarray], float]:
    """Center and radius of the largest ball in {z : A z <= b}; (None, nan) if empty.

    Radius is capped at 1 so unbounded directions do not make the program unbounded.
    """
    n_facets, n_vars = A.shape
    norms = np.linalg.norm(A, axis=1)
    flat = norms < 1e-14
    if np.any(b[flat] < -NA_TOL):
        return None, math.nan
    A_lp = np.hstack([A[~flat], norms[~flat, None]])
    b_lp = b[~flat]
    cap = np.zeros((1, n_vars + 1))
    cap[0, -1] = 1.0
    A_lp = np.vstack([A_lp, cap])
    b_lp = np.concatenate([b_lp, [1.0]])
    c = np.zeros(n_vars + 1)
    c[-1] = -1.0
    result = solve_lp(c, A_lp, b_lp, free=np.ones(n_vars + 1, dtype=bool))
    if result.status == LPStatus.INFEASIBLE:
        return None, math.nan
    if not result.optimal:
        raise LinearProgramError(f"Chebyshev center program returned {result.status.value}")
    radius = float(result.x[-1])
    if radius < -NA_TOL:
        return None, math.nan
    return result.x[:-1], max(radius, 0.0)
