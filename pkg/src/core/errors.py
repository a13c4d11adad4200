from typing import Optional

import numpy as np


class RobustUtilityError(Exception):
    code = "error"
    exit_code = 3

    def __init__(self, message: str, code: Optional[str] = None):
        super().__init__(message)
        self.message = message
        if code is not None:
            self.code = code

    def structured_line(self) -> str:
        return f"ERROR {self.code} {self.message}"


class InputError(RobustUtilityError):
    code = "input"
    exit_code = 2


class MarketError(InputError):
    code = "market"


class MarketFileError(InputError):
    code = "schema"


class UtilityError(InputError):
    code = "utility"


class UnboundedUtilityError(InputError):
    code = "unbounded_utility"


class CapExceededError(InputError):
    code = "cap"


class LabError(InputError):
    code = "lab"


class ConfigError(InputError):
    code = "config"


class ArbitrageError(RobustUtilityError):
    code = "arbitrage"
    exit_code = 1

    def __init__(self, message: str, node: Optional[str] = None, witness: Optional[np.ndarray] = None):
        super().__init__(message)
        self.node = node
        self.witness = witness


class MarginUndefinedError(ArbitrageError):
    code = "margin_undefined"


class NumericalError(RobustUtilityError):
    code = "numerical"
    exit_code = 3


class LinearProgramError(NumericalError):
    code = "lp"


class SolverError(NumericalError):
    code = "solver"

    def __init__(self, message: str, best_h: Optional[np.ndarray] = None,
                 best_value: Optional[float] = None, gap: Optional[float] = None):
        super().__init__(message)
        self.best_h = best_h
        self.best_value = best_value
        self.gap = gap


class ValueFunctionError(NumericalError):
    code = "value_function"
