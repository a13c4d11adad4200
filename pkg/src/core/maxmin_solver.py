"""One-period robust problem: sup over h in K_x of min over extreme measures of E[V(x + h.dS)].

Search runs in L coordinates h = B z. dim(L) = 1 uses golden-section search
with a chord-based upper bound; higher dimensions use Kelley's cutting-plane
method with the master program solved by the dense simplex. Both return a
certified gap between an upper bound and the best value found.
"""
import math
from dataclasses import dataclass
from typing import Callable, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np
from loguru import logger

from .arbitrage import SupportData, admissible_polytope, chebyshev_center, compute_support
from .errors import ArbitrageError, CapExceededError, InputError, SolverError
from .market import ScenarioTree
from .simplex import LPStatus, solve_lp
from .utility import VALUE_FLOOR

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERATIONS = 10000
GRID_POINT_CAP = 50_000_000
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
IN_OUT_WEIGHT = 0.5


class Continuation(Protocol):
    lower_bound: float
    needs_margin: bool

    def value(self, w) -> np.ndarray: ...

    def slope(self, w) -> np.ndarray: ...

    def curvature(self, w) -> np.ndarray: ...


@dataclass(eq=False)
class OnePeriodProblem:
    support: SupportData
    capital: float
    continuation: Tuple[Continuation, ...]   # aligned with support.nonpolar_children
    measures: np.ndarray                     # (k, m) restricted to non-polar children

    @classmethod
    def at_node(cls, tree: ScenarioTree, node_id: str, continuation: Mapping[str, Continuation],
                capital: float, support: Optional[SupportData] = None) -> 'OnePeriodProblem':
        support = support or compute_support(tree, node_id)
        return cls(support=support, capital=float(capital),
                   continuation=tuple(continuation[c] for c in support.nonpolar_children),
                   measures=support.probabilities)

    def with_capital(self, capital: float) -> 'OnePeriodProblem':
        return OnePeriodProblem(self.support, float(capital), self.continuation, self.measures)


@dataclass
class MaxminSolution:
    h_opt: np.ndarray
    value: float
    gap: float
    active_measure: int
    iterations: int = 0
    method: str = "trivial"


class _Objective:
    """Vectorized phi over many (capital, position) pairs."""

    def __init__(self, problem: OnePeriodProblem):
        self.v = problem.support.support_vectors
        self.w = problem.support.reduced_vectors
        self.P = problem.measures
        self.charged = self.P > 0.0
        self.continuation = problem.continuation
        self.lower = np.array([c.lower_bound for c in self.continuation])
        self.margin_scale = np.array([1e-12 if c.needs_margin else 1e-14 for c in self.continuation])

    def child_values(self, wealth: np.ndarray) -> np.ndarray:
        out = np.empty_like(wealth)
        for i, cont in enumerate(self.continuation):
            out[..., i] = cont.value(wealth[..., i])
        return out

    def expectations(self, capitals: np.ndarray, gains: np.ndarray) -> np.ndarray:
        wealth = capitals[:, None] + gains
        values = self.child_values(wealth)
        floored = (wealth < 0.0) | (values <= VALUE_FLOOR)
        expectations = np.where(floored, 0.0, values) @ self.P.T
        absorbed = (floored.astype(float) @ self.charged.T.astype(float)) > 0.0
        return np.where(absorbed, VALUE_FLOOR, expectations)

    def evaluate(self, capitals: np.ndarray, gains: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        expectations = self.expectations(capitals, gains)
        active = np.argmin(expectations, axis=1)
        return expectations[np.arange(len(capitals)), active], active

    def at_z(self, capital: float, z: np.ndarray) -> Tuple[float, int]:
        value, active = self.evaluate(np.array([capital]), (self.w @ z)[None, :])
        return float(value[0]), int(active[0])

    def measure_values(self, capital: float, z: np.ndarray) -> np.ndarray:
        return self.expectations(np.array([capital]), (self.w @ z)[None, :])[0]

    def gradient(self, capital: float, z: np.ndarray, measure: int) -> np.ndarray:
        wealth = capital + self.w @ z
        slopes = np.array([c.slope(wi) for c, wi in zip(self.continuation, wealth)], dtype=float)
        return (self.P[measure] * slopes) @ self.w

    def hessian(self, capital: float, z: np.ndarray, measure: int) -> np.ndarray:
        wealth = capital + self.w @ z
        curv = np.array([c.curvature(wi) for c, wi in zip(self.continuation, wealth)], dtype=float)
        return (self.w.T * (self.P[measure] * curv)) @ self.w

    def lower_limits(self, capitals: np.ndarray) -> np.ndarray:
        # w_i . z >= beta_i keeps every charged child strictly inside its domain
        return self.lower[None, :] + self.margin_scale[None, :] * capitals[:, None] - capitals[:, None]


def phi_eval(prob: OnePeriodProblem, h) -> Tuple[float, int]:
    objective = _Objective(prob)
    gains = objective.v @ np.asarray(h, dtype=float)
    value, active = objective.evaluate(np.array([prob.capital]), gains[None, :])
    return float(value[0]), int(active[0])


def phi_batch(prob: OnePeriodProblem, H: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    objective = _Objective(prob)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    gains = H @ objective.v.T
    return objective.evaluate(np.full(H.shape[0], prob.capital), gains)


def measure_expectations(prob: OnePeriodProblem, H: np.ndarray) -> np.ndarray:
    """(n, k) expectations of the continuation under every extreme measure."""
    objective = _Objective(prob)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    return objective.expectations(np.full(H.shape[0], prob.capital), H @ objective.v.T)


def _chord_upper_bound(p, f):
    """Upper bound of a concave function on [p0, p3] from four ordered samples."""
    p0, p1, p2, p3 = p
    f0, f1, f2, f3 = f
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        s01 = (f1 - f0) / (p1 - p0)
        s12 = (f2 - f1) / (p2 - p1)
        s23 = (f3 - f2) / (p3 - p2)
        s01 = np.where(np.isfinite(s01), s01, np.inf)
        s23 = np.where(np.isfinite(s23), s23, -np.inf)
        s12 = np.where(np.isfinite(s12), s12, 0.0)

        left = np.maximum(f1 + s12 * (p0 - p1), f1)
        right = np.maximum(f2 + s12 * (p3 - p2), f2)

        a_at_1, c_at_1 = f1, f2 + s23 * (p1 - p2)
        a_at_2, c_at_2 = f1 + s01 * (p2 - p1), f2
        middle = np.maximum(np.minimum(a_at_1, c_at_1), np.minimum(a_at_2, c_at_2))
        cross = (f2 - f1 + s01 * p1 - s23 * p2) / (s01 - s23)
        inside = np.isfinite(cross) & (cross > p1) & (cross < p2)
        at_cross = f1 + s01 * (cross - p1)
        middle = np.where(inside, np.maximum(middle, at_cross), middle)
        bound = np.maximum(np.maximum(left, right), middle)
    return np.where(np.isnan(bound), np.inf, bound)


class MaxminSolver:
    def __init__(self, tol: float = DEFAULT_TOL, max_iterations: int = DEFAULT_MAX_ITERATIONS,
                 xtol: float = 1e-9):
        if tol <= 0:
            raise InputError(f"tolerance must be positive, got {tol}")
        self.tol = tol
        self.max_iterations = max_iterations
        self.xtol = xtol

    def solve(self, problem: OnePeriodProblem) -> MaxminSolution:
        return self.solve_batch(problem, [problem.capital])[0]

    def solve_batch(self, problem: OnePeriodProblem, capitals: Sequence[float]) -> List[MaxminSolution]:
        support = problem.support
        capitals = np.asarray(capitals, dtype=float)
        if np.any(capitals < 0):
            raise SolverError(f"negative capital at node '{support.node}'")
        na = support.na_result()
        if not na.holds:
            raise ArbitrageError(f"no-arbitrage fails at node '{support.node}'; K_x is unbounded",
                                 node=support.node, witness=na.witness)

        objective = _Objective(problem)
        r = support.dimension
        if r == 0:
            return [self._trivial(objective, x) for x in capitals]
        if r == 1:
            return self._golden_batch(objective, support, capitals)
        solutions: List[MaxminSolution] = []
        previous_x = 0.0
        for x in capitals:
            warm = None
            if solutions and solutions[-1].method == "cutting_plane" and previous_x > 0.0:
                # optimal positions scale roughly with capital
                warm = support.basis_L.T @ solutions[-1].h_opt * (x / previous_x)
            solutions.append(self._kelley(objective, support, x, warm))
            previous_x = x
        return solutions

    def _trivial(self, objective: _Objective, x: float) -> MaxminSolution:
        d = objective.v.shape[1]
        value, active = objective.at_z(x, np.zeros(0))
        return MaxminSolution(np.zeros(d), value, 0.0, active, 0, "trivial")

    def _infeasible(self, support: SupportData) -> MaxminSolution:
        return MaxminSolution(np.zeros(support.support_vectors.shape[1]), VALUE_FLOOR, 0.0, 0, 0, "infeasible")

    def _golden_batch(self, objective: _Objective, support: SupportData,
                      capitals: np.ndarray) -> List[MaxminSolution]:
        w = objective.w[:, 0]
        beta = objective.lower_limits(capitals)
        n = capitals.size
        flat = np.abs(w) < 1e-14
        with np.errstate(divide='ignore'):
            bounds = beta[:, ~flat] / w[~flat]
        up, down = w[~flat] > 0, w[~flat] < 0
        lo = bounds[:, up].max(axis=1) if up.any() else np.full(n, -np.inf)
        hi = bounds[:, down].min(axis=1) if down.any() else np.full(n, np.inf)
        infeasible = (lo > hi + 1e-15 * np.maximum(1.0, np.abs(lo))) | np.any(beta[:, flat] > 0.0, axis=1)
        hi = np.where(lo > hi, lo, hi)

        def f(z):
            vals, _ = objective.evaluate(capitals, z[:, None] * w[None, :])
            return vals

        a, b = lo.copy(), hi.copy()
        width0 = np.maximum(b - a, 0.0)
        c = b - INV_PHI * (b - a)
        d = a + INV_PHI * (b - a)
        fa, fb, fc, fd = f(a), f(b), f(c), f(d)
        done = infeasible | (width0 <= 1e-15 * np.maximum(1.0, np.abs(a)))
        gap = np.where(done, 0.0, np.inf)
        iterations = np.zeros(n, dtype=int)

        for _ in range(self.max_iterations):
            bound = _chord_upper_bound((a, c, d, b), (fa, fc, fd, fb))
            best = np.maximum(np.maximum(fa, fb), np.maximum(fc, fd))
            current = np.maximum(bound - best, 0.0)
            gap = np.where(done, gap, current)
            narrow = (b - a) <= self.xtol * np.maximum(width0, 1e-300)
            exhausted = (b - a) <= 4e-16 * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
            done = done | ((current <= self.tol) & narrow) | exhausted
            if done.all():
                break
            left = fc >= fd
            na_, nb_ = np.where(left, a, c), np.where(left, d, b)
            nfa, nfb = np.where(left, fa, fc), np.where(left, fd, fb)
            probe = np.where(left, nb_ - INV_PHI * (nb_ - na_), na_ + INV_PHI * (nb_ - na_))
            fp = f(probe)
            nc, nfc = np.where(left, probe, d), np.where(left, fp, fd)
            nd, nfd = np.where(left, c, probe), np.where(left, fc, fp)

            keep = done
            a, b = np.where(keep, a, na_), np.where(keep, b, nb_)
            fa, fb = np.where(keep, fa, nfa), np.where(keep, fb, nfb)
            c, d = np.where(keep, c, nc), np.where(keep, d, nd)
            fc, fd = np.where(keep, fc, nfc), np.where(keep, fd, nfd)
            iterations += ~keep

        solutions = []
        for k in range(n):
            if infeasible[k]:
                solutions.append(self._infeasible(support))
                continue
            candidates = [(a[k], fa[k]), (c[k], fc[k]), (d[k], fd[k]), (b[k], fb[k])]
            z_best, f_best = max(candidates, key=lambda t: t[1])
            if lo[k] <= 0.0 <= hi[k]:
                f_zero, _ = objective.at_z(capitals[k], np.zeros(1))
                if f_zero >= f_best:
                    z_best, f_best = 0.0, f_zero
            if gap[k] > self.tol:
                raise SolverError(
                    f"golden-section search at node '{support.node}', capital {capitals[k]!r} "
                    f"stopped with gap {gap[k]:.3e}",
                    best_h=support.basis_L[:, 0] * z_best, best_value=float(f_best), gap=float(gap[k]))
            h = support.basis_L[:, 0] * z_best
            value, active = objective.at_z(capitals[k], np.array([z_best]))
            solutions.append(MaxminSolution(h, value, float(gap[k]), active, int(iterations[k]), "golden_section"))
        return solutions

    def _kelley(self, objective: _Objective, support: SupportData, x: float,
                warm: Optional[np.ndarray] = None) -> MaxminSolution:
        W = objective.w
        r = W.shape[1]
        beta = objective.lower_limits(np.array([x]))[0]
        flat = np.linalg.norm(W, axis=1) < 1e-14
        if np.any(beta[flat] > 0.0):
            return self._infeasible(support)
        A = -W[~flat]
        b = -beta[~flat]

        if np.all(b >= 0.0):
            z0 = np.zeros(r)
        else:
            z0, _ = chebyshev_center(A, b)
            if z0 is None:
                return self._infeasible(support)
        slack0 = np.maximum(b - A @ z0, 0.0)

        def feasible(z):
            return bool(np.all(A @ (z - z0) <= slack0 + 1e-12 * np.maximum(1.0, np.abs(b))))

        f0, _ = objective.at_z(x, z0)
        if f0 <= VALUE_FLOOR:
            raise SolverError(f"starting point has no finite value at node '{support.node}', capital {x!r}")
        best_z, best_f = z0.copy(), f0
        cut_g: List[np.ndarray] = []
        cut_c: List[float] = []

        def add_cuts(z):
            # every extreme measure's expectation is concave and dominates the min
            for j, e in enumerate(objective.measure_values(x, z)):
                if e > VALUE_FLOOR:
                    g = objective.gradient(x, z, j)
                    if np.all(np.isfinite(g)):
                        cut_g.append(g)
                        cut_c.append(e + g @ (z0 - z))

        add_cuts(z0)
        if warm is not None and feasible(warm):
            f_warm, _ = objective.at_z(x, warm)
            if f_warm > best_f:
                best_z, best_f = warm.copy(), f_warm
                add_cuts(warm)

        upper = math.inf
        iterations = 0
        previous = None
        while True:
            iterations += 1
            if iterations > self.max_iterations:
                raise SolverError(
                    f"cutting-plane search at node '{support.node}', capital {x!r} hit "
                    f"{self.max_iterations} iterations with gap {upper - best_f:.3e}",
                    best_h=support.basis_L @ best_z, best_value=best_f, gap=upper - best_f)

            master = self._master(A, slack0, np.array(cut_g), np.array(cut_c), support, best_z)
            y, tau = master.x[:r], master.x[-1]
            upper = min(upper, float(np.min(cut_c)) + tau)
            z_master = z0 + y

            f_master, _ = objective.at_z(x, z_master)
            if f_master > best_f:
                best_z, best_f = z_master.copy(), f_master
            if upper - best_f <= self.tol:
                break
            if previous is not None and np.allclose(z_master, previous[0], rtol=0.0, atol=1e-13) \
                    and best_f <= previous[1]:
                raise SolverError(
                    f"cutting-plane search at node '{support.node}', capital {x!r} stalled "
                    f"with gap {upper - best_f:.3e}",
                    best_h=support.basis_L @ best_z, best_value=best_f, gap=upper - best_f)
            previous = (z_master, best_f)

            # query between the incumbent and the master point, away from the domain boundary
            weight = IN_OUT_WEIGHT
            query = best_z + weight * (z_master - best_z)
            f_query, _ = objective.at_z(x, query)
            while f_query <= VALUE_FLOOR and weight > 1e-12:
                weight *= 0.5
                query = best_z + weight * (z_master - best_z)
                f_query, _ = objective.at_z(x, query)
            if f_query <= VALUE_FLOOR:
                raise SolverError(f"cutting-plane query left the domain at node '{support.node}'",
                                  best_h=support.basis_L @ best_z, best_value=best_f)
            if f_query > best_f:
                best_z, best_f = query.copy(), f_query
            add_cuts(query)

        best_z, best_f = self._polish(objective, x, best_z, best_f, feasible)
        value, active = objective.at_z(x, best_z)
        gap = max(0.0, upper - value)
        logger.debug(f"Kelley at node '{support.node}' x={x:.6g}: {iterations} iterations, gap {gap:.2e}")
        return MaxminSolution(support.basis_L @ best_z, value, gap, active, iterations, "cutting_plane")

    def _master(self, A: np.ndarray, slack0: np.ndarray, G: np.ndarray, C: np.ndarray,
                support: SupportData, best_z: np.ndarray):
        r = A.shape[1]
        theta_base = C.min()
        scale = np.maximum(1.0, np.abs(G).max(axis=1))
        cut_rows = np.hstack([-G, np.ones((len(C), 1))]) / scale[:, None]
        cut_rhs = (C - theta_base) / scale
        poly_rows = np.hstack([A, np.zeros((A.shape[0], 1))])
        c_lp = np.zeros(r + 1)
        c_lp[-1] = -1.0
        master = solve_lp(c_lp, np.vstack([poly_rows, cut_rows]), np.concatenate([slack0, cut_rhs]),
                          free=np.ones(r + 1, dtype=bool), max_iterations=self.max_iterations)
        if master.status == LPStatus.UNBOUNDED:
            raise ArbitrageError(f"cutting-plane master unbounded at node '{support.node}'", node=support.node)
        if not master.optimal:
            raise SolverError(f"cutting-plane master {master.status.value} at node '{support.node}'",
                              best_h=support.basis_L @ best_z)
        return master

    def _polish(self, objective: _Objective, x: float, z: np.ndarray, f: float,
                feasible: Callable[[np.ndarray], bool]) -> Tuple[np.ndarray, float]:
        """Damped Newton steps on the active expectation; kept only if the min improves."""
        for _ in range(50):
            _, active = objective.at_z(x, z)
            g = objective.gradient(x, z, active)
            H = objective.hessian(x, z, active)
            if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
                break
            if np.linalg.eigvalsh(H).max() >= -1e-14:
                break
            step = -np.linalg.solve(H, g)
            t, moved = 1.0, False
            while t > 1e-8:
                candidate = z + t * step
                if feasible(candidate):
                    fc, _ = objective.at_z(x, candidate)
                    if fc > f:
                        z, f, moved = candidate, fc, True
                        break
                t *= 0.5
            if not moved or np.linalg.norm(t * step) <= 1e-14 * max(1.0, np.linalg.norm(z)):
                break
        return z, f


def solve_one_period(prob: OnePeriodProblem, tol: float = DEFAULT_TOL,
                     max_iterations: int = DEFAULT_MAX_ITERATIONS) -> MaxminSolution:
    return MaxminSolver(tol, max_iterations).solve(prob)


def rational_grid_value(prob: OnePeriodProblem, grid_step: float) -> float:
    """Max of phi over the lattice grid_step * Z^d inside the bounding box of K_x."""
    if grid_step <= 0:
        raise InputError(f"grid step must be positive, got {grid_step}")
    polytope = admissible_polytope(prob.support, prob.capital)
    if not polytope.bounded:
        raise ArbitrageError(f"no-arbitrage fails at node '{prob.support.node}'", node=prob.support.node)
    d = prob.support.support_vectors.shape[1]
    axes = []
    for k in range(d):
        direction = np.zeros(d)
        direction[k] = 1.0
        lo, hi = polytope.extent_along(direction)
        start = math.ceil(lo / grid_step - 1e-9)
        stop = math.floor(hi / grid_step + 1e-9)
        axes.append(np.arange(start, stop + 1) * grid_step)

    total = int(np.prod([len(a) for a in axes]))
    if total > GRID_POINT_CAP:
        raise CapExceededError(f"rational grid has {total} points (cap {GRID_POINT_CAP})")

    best = VALUE_FLOOR
    mesh = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, d)
    for start in range(0, mesh.shape[0], 200_000):
        values, _ = phi_batch(prob, mesh[start:start + 200_000])
        best = max(best, float(values.max()))
    return best


def zero_capital_profile(prob: OnePeriodProblem, n_values: Sequence[int] = (1, 2, 4, 8, 16, 32, 64, 128),
                         tol: float = DEFAULT_TOL) -> Tuple[List[float], float]:
    """Values u(1/n) for the given n and u(0) = phi(0) on K_0 = {0}."""
    solver = MaxminSolver(tol)
    capitals = [1.0 / n for n in n_values]
    values = [s.value for s in solver.solve_batch(prob, capitals)]
    at_zero, _ = phi_eval(prob.with_capital(0.0), np.zeros(prob.support.support_vectors.shape[1]))
    return values, at_zero
