import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from core.instances import binomial_tree, one_period_tree
from core.utility import UtilitySpec

# 0.5 * log(1.125) per period for the log investor on the (0.5x, 2x) binomial
LOG_GROWTH_PER_PERIOD = 0.5 * np.log(1.125)


@pytest.fixture
def log_utility():
    return UtilitySpec.log()


@pytest.fixture
def sqrt_utility():
    return UtilitySpec.power(0.5)


@pytest.fixture
def coin():
    """One period, dS in {-1, +1}, extremes (1/2, 1/2) and (0.6, 0.4)."""
    return one_period_tree([[-1.0], [1.0]], [[0.5, 0.5], [0.6, 0.4]], s0=[1.0])


@pytest.fixture
def fair_coin():
    return one_period_tree([[-1.0], [1.0]], [[0.5, 0.5]], s0=[1.0])


@pytest.fixture
def binomial_two_period():
    return binomial_tree(2, up=2.0, down=0.5, extremes=((0.5, 0.5),))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
