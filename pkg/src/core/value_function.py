from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from loguru import logger

from .errors import ValueFunctionError
from .utility import VALUE_FLOOR

SLOPE_TOL = 1e-12


@dataclass(eq=False)
class ConcavePLF:
    """Piecewise-linear interpolant of a value function on a wealth grid.

    Below the first knot the first segment is extended down to zero wealth;
    beyond the last knot the final slope (clamped at zero) continues.
    """
    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.knots.ndim != 1 or self.knots.size < 2 or self.knots.shape != self.values.shape:
            raise ValueFunctionError("value function needs matching knot and value arrays with two or more knots")
        if self.knots[0] <= 0.0 or np.any(np.diff(self.knots) <= 0.0):
            raise ValueFunctionError("knots must be positive and strictly increasing")
        self.slopes = np.diff(self.values) / np.diff(self.knots)
        self.right_slope = max(float(self.slopes[-1]), 0.0)

    # continuation interface
    lower_bound = 0.0
    needs_margin = False

    @property
    def at_zero(self) -> float:
        return float(self.values[0] - self.slopes[0] * self.knots[0])

    def value(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        inside = np.interp(w, self.knots, self.values)
        left = self.values[0] + self.slopes[0] * (w - self.knots[0])
        right = self.values[-1] + self.right_slope * (w - self.knots[-1])
        out = np.where(w < self.knots[0], left, np.where(w > self.knots[-1], right, inside))
        return np.where(w < 0.0, VALUE_FLOOR, np.maximum(out, VALUE_FLOOR))

    def slope(self, w) -> np.ndarray:
        """Left derivative; the first slope applies on [0, x_1]."""
        w = np.asarray(w, dtype=float)
        extended = np.append(self.slopes, self.right_slope)
        seg = np.clip(np.searchsorted(self.knots, w, side='left') - 1, 0, extended.size - 1)
        return extended[seg]

    def curvature(self, w) -> np.ndarray:
        return np.zeros_like(np.asarray(w, dtype=float))

    def is_concave(self, tol: float = SLOPE_TOL) -> bool:
        return bool(np.all(np.diff(self.slopes) <= tol * max(1.0, float(np.abs(self.slopes).max()))))

    def is_nondecreasing(self) -> bool:
        return bool(np.all(self.slopes >= 0.0))


def plf_eval(f: ConcavePLF, x: float) -> float:
    if x == 0.0:
        return f.at_zero
    return float(f.value(x))


def _pool_adjacent_violators(slopes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # weighted nonincreasing isotonic fit
    blocks: List[Tuple[float, float, int]] = []
    for s, w in zip(slopes, weights):
        value, weight, count = float(s), float(w), 1
        while blocks and blocks[-1][0] < value:
            prev_value, prev_weight, prev_count = blocks.pop()
            value = (prev_value * prev_weight + value * weight) / (prev_weight + weight)
            weight += prev_weight
            count += prev_count
        blocks.append((value, weight, count))
    return np.concatenate([np.full(c, v) for v, _, c in blocks])


def repair_concavity(knots: np.ndarray, values: np.ndarray) -> Tuple[ConcavePLF, float]:
    """Closest concave nondecreasing interpolant; returns it with the max value adjustment."""
    knots = np.asarray(knots, dtype=float)
    values = np.asarray(values, dtype=float)
    widths = np.diff(knots)
    slopes = np.diff(values) / widths

    repaired = np.maximum(_pool_adjacent_violators(slopes, widths), 0.0)
    fitted = values[0] + np.concatenate([[0.0], np.cumsum(repaired * widths)])
    residual = values - fitted
    fitted += 0.5 * (residual.max() + residual.min())
    adjustment = float(np.abs(values - fitted).max())
    if adjustment > 0.0:
        logger.debug(f"Concavity repair moved values by up to {adjustment:.3e}")
    return ConcavePLF(knots, fitted), adjustment
