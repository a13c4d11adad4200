import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .errors import UtilityError

# Stand-in for minus infinity; absorbing under min and expectation.
VALUE_FLOOR = -1e18


class UtilityFamily(str, Enum):
    LOG = "log"
    POWER = "power"
    EXPONENTIAL = "exponential"
    PIECEWISE_LINEAR = "piecewise_linear"


@dataclass(frozen=True)
class UtilitySpec:
    """Concave nondecreasing utility on [0, inf), minus infinity below zero.

    With ``endowment_enabled`` the terminal utility at node w is
    U(x + e(w)) where e is the node's endowment.
    """
    family: UtilityFamily
    gamma: Optional[float] = None
    alpha: Optional[float] = None
    knots: Tuple[Tuple[float, float], ...] = ()
    endowment_enabled: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, 'family', UtilityFamily(self.family))
        except ValueError:
            raise UtilityError(f"unknown utility family '{self.family}'")

        if self.family == UtilityFamily.POWER:
            if self.gamma is None or not 0.0 < self.gamma < 1.0:
                raise UtilityError(f"power utility requires gamma in (0, 1), got {self.gamma}")
        elif self.family == UtilityFamily.EXPONENTIAL:
            if self.alpha is None or not self.alpha > 0.0:
                raise UtilityError(f"exponential utility requires alpha > 0, got {self.alpha}")
        elif self.family == UtilityFamily.PIECEWISE_LINEAR:
            self._validate_knots()

    def _validate_knots(self):
        if len(self.knots) < 2:
            raise UtilityError("piecewise-linear utility needs at least two knots")
        xs = np.array([k[0] for k in self.knots], dtype=float)
        ys = np.array([k[1] for k in self.knots], dtype=float)
        if xs[0] != 0.0:
            raise UtilityError(f"first utility knot must sit at wealth 0, got {xs[0]}")
        if np.any(np.diff(xs) <= 0):
            raise UtilityError("utility knots must be strictly increasing in wealth")
        slopes = np.diff(ys) / np.diff(xs)
        if np.any(slopes < -1e-12):
            raise UtilityError("piecewise-linear utility must be nondecreasing")
        if np.any(np.diff(slopes) > 1e-12):
            raise UtilityError("piecewise-linear utility must be concave (slopes nonincreasing)")

    @classmethod
    def log(cls, endowment_enabled: bool = False) -> 'UtilitySpec':
        return cls(UtilityFamily.LOG, endowment_enabled=endowment_enabled)

    @classmethod
    def power(cls, gamma: float, endowment_enabled: bool = False) -> 'UtilitySpec':
        return cls(UtilityFamily.POWER, gamma=gamma, endowment_enabled=endowment_enabled)

    @classmethod
    def exponential(cls, alpha: float, endowment_enabled: bool = False) -> 'UtilitySpec':
        return cls(UtilityFamily.EXPONENTIAL, alpha=alpha, endowment_enabled=endowment_enabled)

    @classmethod
    def piecewise_linear(cls, knots, endowment_enabled: bool = False) -> 'UtilitySpec':
        return cls(UtilityFamily.PIECEWISE_LINEAR,
                   knots=tuple((float(x), float(y)) for x, y in knots),
                   endowment_enabled=endowment_enabled)

    @classmethod
    def from_params(cls, family: str, params: Dict[str, Any], endowment_enabled: bool = False) -> 'UtilitySpec':
        params = params or {}
        allowed = {
            'log': set(),
            'power': {'gamma'},
            'exponential': {'alpha'},
            'piecewise_linear': {'knots'},
        }
        if family not in allowed:
            raise UtilityError(f"unknown utility family '{family}'")
        unknown = set(params) - allowed[family]
        if unknown:
            raise UtilityError(f"unexpected parameters for {family} utility: {sorted(unknown)}")
        if family == 'piecewise_linear':
            return cls.piecewise_linear(params.get('knots', ()), endowment_enabled)
        return cls(UtilityFamily(family), gamma=params.get('gamma'), alpha=params.get('alpha'),
                   endowment_enabled=endowment_enabled)

    def params(self) -> Dict[str, Any]:
        if self.family == UtilityFamily.POWER:
            return {'gamma': self.gamma}
        if self.family == UtilityFamily.EXPONENTIAL:
            return {'alpha': self.alpha}
        if self.family == UtilityFamily.PIECEWISE_LINEAR:
            return {'knots': [list(k) for k in self.knots]}
        return {}

    @property
    def bounded_above(self) -> bool:
        return math.isfinite(self.supremum)

    @property
    def supremum(self) -> float:
        if self.family == UtilityFamily.EXPONENTIAL:
            return 1.0
        if self.family == UtilityFamily.PIECEWISE_LINEAR:
            xs, ys, slopes = self._pwl_arrays()
            return float(ys[-1]) if slopes[-1] <= 0.0 else math.inf
        return math.inf

    @property
    def singular_at_zero(self) -> bool:
        # value or derivative blows up at zero wealth
        return self.family in (UtilityFamily.LOG, UtilityFamily.POWER)

    def _pwl_arrays(self):
        xs = np.array([k[0] for k in self.knots], dtype=float)
        ys = np.array([k[1] for k in self.knots], dtype=float)
        slopes = np.diff(ys) / np.diff(xs)
        return xs, ys, slopes

    def _raw(self, w: np.ndarray) -> np.ndarray:
        if self.family == UtilityFamily.LOG:
            return np.log(w)
        if self.family == UtilityFamily.POWER:
            return np.power(w, self.gamma)
        if self.family == UtilityFamily.EXPONENTIAL:
            return 1.0 - np.exp(-self.alpha * w)
        xs, ys, slopes = self._pwl_arrays()
        inside = np.interp(w, xs, ys)
        return np.where(w > xs[-1], ys[-1] + slopes[-1] * (w - xs[-1]), inside)

    def value(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        ok = w > 0.0 if self.family == UtilityFamily.LOG else w >= 0.0
        with np.errstate(divide='ignore', invalid='ignore'):
            raw = self._raw(np.maximum(w, 0.0))
        return np.where(ok, np.maximum(raw, VALUE_FLOOR), VALUE_FLOOR)

    def derivative(self, w) -> np.ndarray:
        """Left derivative; +inf at zero for log and power."""
        w = np.asarray(w, dtype=float)
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            if self.family == UtilityFamily.LOG:
                d = 1.0 / w
            elif self.family == UtilityFamily.POWER:
                d = self.gamma * np.power(w, self.gamma - 1.0)
            elif self.family == UtilityFamily.EXPONENTIAL:
                d = self.alpha * np.exp(-self.alpha * w)
            else:
                xs, _, slopes = self._pwl_arrays()
                seg = np.clip(np.searchsorted(xs, w, side='left') - 1, 0, len(slopes) - 1)
                d = slopes[seg]
        return np.where(w > 0.0, d, np.inf) if self.family in (UtilityFamily.LOG, UtilityFamily.POWER) else d

    def curvature(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            if self.family == UtilityFamily.LOG:
                return -1.0 / (w * w)
            if self.family == UtilityFamily.POWER:
                return self.gamma * (self.gamma - 1.0) * np.power(w, self.gamma - 2.0)
            if self.family == UtilityFamily.EXPONENTIAL:
                return -self.alpha ** 2 * np.exp(-self.alpha * w)
        return np.zeros_like(w)


def evaluate_utility(u: UtilitySpec, x: float, endowment: float = 0.0) -> float:
    return float(u.value(x + endowment))


class TerminalContinuation:
    """Terminal value w -> U(w + e); wealth itself must stay nonnegative."""

    def __init__(self, utility: UtilitySpec, endowment: float = 0.0):
        self.utility = utility
        self.endowment = float(endowment) if utility.endowment_enabled else 0.0
        self.lower_bound = max(0.0, -self.endowment)
        self.needs_margin = utility.singular_at_zero and self.endowment <= 0.0

    def value(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return np.where(w >= 0.0, self.utility.value(w + self.endowment), VALUE_FLOOR)

    def slope(self, w) -> np.ndarray:
        return self.utility.derivative(np.asarray(w, dtype=float) + self.endowment)

    def curvature(self, w) -> np.ndarray:
        return self.utility.curvature(np.asarray(w, dtype=float) + self.endowment)
