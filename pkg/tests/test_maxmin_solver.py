import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.arbitrage import admissible_polytope
from core.counterexamples import P1_INCREMENTS, SQRT_P1_OPTIMUM
from core.errors import ArbitrageError, InputError, SolverError
from core.instances import one_period_tree, random_one_period
from core.maxmin_solver import (MaxminSolver, OnePeriodProblem, measure_expectations, phi_batch, phi_eval,
                                rational_grid_value, solve_one_period, zero_capital_profile)
from core.utility import VALUE_FLOOR, TerminalContinuation, UtilitySpec

# 0.4 log 0.8 + 0.6 log 1.2
KELLY_VALUE = 0.4 * math.log(0.8) + 0.6 * math.log(1.2)


def _problem(tree, utility, x=1.0):
    continuation = {c: TerminalContinuation(utility, tree.node(c).endowment or 0.0)
                    for c in tree.nonpolar_children(tree.root)}
    return OnePeriodProblem.at_node(tree, tree.root, continuation, x)


def test_phi_takes_the_worst_measure(coin, log_utility):
    value, active = phi_eval(_problem(coin, log_utility), [0.5])
    assert value == pytest.approx(0.6 * math.log(0.5) + 0.4 * math.log(1.5))
    assert value == pytest.approx(-0.253702, abs=1e-6)
    assert active == 1


def test_measure_expectations_per_measure(coin, log_utility):
    table = measure_expectations(_problem(coin, log_utility), [[0.5]])
    assert table.shape == (1, 2)
    assert table[0, 0] == pytest.approx(0.5 * math.log(0.5) + 0.5 * math.log(1.5))


def test_phi_is_floor_outside_domain(coin, log_utility):
    value, _ = phi_eval(_problem(coin, log_utility), [1.0])
    assert value == VALUE_FLOOR
    values, _ = phi_batch(_problem(coin, log_utility), [[-2.0], [0.0], [0.5]])
    assert values[0] == VALUE_FLOOR
    assert values[1] == pytest.approx(0.0)


def test_ambiguous_coin_stays_out_of_the_market(coin, log_utility):
    solution = solve_one_period(_problem(coin, log_utility))
    assert solution.value == pytest.approx(0.0, abs=1e-9)
    assert solution.h_opt[0] == pytest.approx(0.0, abs=1e-6)
    assert solution.gap <= 1e-8
    assert solution.method == "golden_section"


def test_single_measure_recovers_kelly_fraction(log_utility):
    tree = one_period_tree([[-1.0], [1.0]], [[0.4, 0.6]], s0=[1.0])
    solution = solve_one_period(_problem(tree, log_utility))
    assert solution.h_opt[0] == pytest.approx(0.2, abs=1e-5)
    assert solution.value == pytest.approx(KELLY_VALUE, abs=1e-9)


def test_log_at_zero_capital_is_floor(coin, log_utility):
    solution = solve_one_period(_problem(coin, log_utility, x=0.0))
    assert solution.value <= VALUE_FLOOR


def test_sqrt_at_zero_capital(coin, sqrt_utility):
    solution = solve_one_period(_problem(coin, sqrt_utility, x=0.0))
    assert solution.value == pytest.approx(0.0)
    np.testing.assert_allclose(solution.h_opt, [0.0])


def test_two_asset_independent_coins(sqrt_utility):
    tree = one_period_tree(P1_INCREMENTS, [[0.25] * 4], s0=[1.0, 1.0])
    solution = solve_one_period(_problem(tree, sqrt_utility))
    assert solution.method == "cutting_plane"
    np.testing.assert_allclose(solution.h_opt, [0.0, SQRT_P1_OPTIMUM], atol=1e-3)
    assert solution.value == pytest.approx(0.5 * math.sqrt(0.5) + 0.5 * math.sqrt(2.0), abs=1e-7)


def test_redundant_second_asset_is_projected(log_utility):
    tree = one_period_tree([[-1.0, -1.0], [1.0, 1.0]], [[0.4, 0.6]], s0=[1.0, 1.0])
    solution = solve_one_period(_problem(tree, log_utility))
    np.testing.assert_allclose(solution.h_opt, [0.1, 0.1], atol=1e-5)
    assert solution.value == pytest.approx(KELLY_VALUE, abs=1e-9)


def test_batch_matches_single_solves(coin, sqrt_utility):
    problem = _problem(coin, sqrt_utility)
    solver = MaxminSolver()
    batch = solver.solve_batch(problem, [0.5, 1.0, 2.0])
    for x, solution in zip([0.5, 1.0, 2.0], batch):
        assert solution.value == pytest.approx(solver.solve(problem.with_capital(x)).value, abs=1e-9)


def test_arbitrage_is_refused(log_utility):
    tree = one_period_tree([[0.5], [1.0]], [[0.5, 0.5]])
    with pytest.raises(ArbitrageError):
        solve_one_period(_problem(tree, log_utility))


def test_negative_capital_is_refused(coin, log_utility):
    with pytest.raises(SolverError, match="negative capital"):
        MaxminSolver().solve_batch(_problem(coin, log_utility), [-1.0])


def test_tolerance_must_be_positive():
    with pytest.raises(InputError):
        MaxminSolver(tol=0.0)


def test_rational_grid_on_coin(coin, log_utility):
    assert rational_grid_value(_problem(coin, log_utility), 0.5) == pytest.approx(0.0)
    with pytest.raises(InputError):
        rational_grid_value(_problem(coin, log_utility), 0.0)


def test_rational_grid_hits_kelly_point(log_utility):
    tree = one_period_tree([[-1.0], [1.0]], [[0.4, 0.6]], s0=[1.0])
    assert rational_grid_value(_problem(tree, log_utility), 0.1) == pytest.approx(KELLY_VALUE, abs=1e-12)


def test_zero_capital_profile_scales_like_square_root(coin, sqrt_utility):
    values, at_zero = zero_capital_profile(_problem(coin, sqrt_utility), n_values=(1, 4, 16))
    np.testing.assert_allclose(values, [1.0, 0.5, 0.25], atol=1e-8)
    assert at_zero == pytest.approx(0.0)


@given(seed=st.integers(0, 2 ** 32 - 1), d=st.integers(1, 2))
@settings(max_examples=25, deadline=None)
def test_solver_dominates_rational_grid(seed, d):
    rng = np.random.default_rng(seed)
    tree = random_one_period(rng, d=d, m=d + 2, k=2, arbitrage=False)
    problem = _problem(tree, UtilitySpec.power(0.5))
    solution = MaxminSolver().solve(problem)
    polytope = admissible_polytope(problem.support, 1.0)
    widths = [hi - lo for lo, hi in (polytope.extent_along(axis) for axis in np.eye(d))]
    step = max(max(widths), 1e-6) / (2000 if d == 1 else 150)
    assert solution.value >= rational_grid_value(problem, step) - 1e-7
    value, _ = phi_eval(problem, solution.h_opt)
    assert value == pytest.approx(solution.value, abs=1e-8)


TWO_ASSET_INCREMENTS = [[1.0, 0.2], [-0.6, 0.8], [-0.4, -0.9], [0.3, -0.5]]
TWO_ASSET_EXTREMES = [[0.3, 0.2, 0.3, 0.2], [0.2, 0.3, 0.2, 0.3]]


def test_log_utility_with_two_assets(log_utility):
    tree = one_period_tree(TWO_ASSET_INCREMENTS, TWO_ASSET_EXTREMES, s0=[1.0, 1.0])
    problem = _problem(tree, log_utility)
    capitals = [0.01, 0.5, 1.0, 2.0]
    batch = MaxminSolver(max_iterations=500).solve_batch(problem, capitals)
    at_one = batch[2]
    assert at_one.method == "cutting_plane"
    assert at_one.gap <= 1e-8
    assert at_one.value >= rational_grid_value(problem, 0.01) - 1e-9
    for x, solution in zip(capitals, batch):
        # log utility is homothetic: u(x) = log x + u(1) and h(x) = x h(1)
        assert solution.value == pytest.approx(math.log(x) + at_one.value, abs=1e-7)
        np.testing.assert_allclose(solution.h_opt, x * at_one.h_opt, atol=1e-3 * max(x, 0.1))


@given(seed=st.integers(0, 2 ** 32 - 1))
@settings(max_examples=20, deadline=None)
def test_log_utility_two_assets_random(seed):
    rng = np.random.default_rng(seed)
    tree = random_one_period(rng, d=2, m=4, k=2, arbitrage=False)
    problem = _problem(tree, UtilitySpec.log())
    solver = MaxminSolver(max_iterations=1000)
    half, one = solver.solve_batch(problem, [0.5, 1.0])
    assert one.gap <= 1e-8
    assert half.value == pytest.approx(math.log(0.5) + one.value, abs=1e-7)


@given(seed=st.integers(0, 2 ** 32 - 1), lam=st.floats(0.0, 1.0))
@settings(max_examples=50, deadline=None)
def test_phi_is_concave_on_admissible_set(seed, lam):
    rng = np.random.default_rng(seed)
    tree = random_one_period(rng, d=2, m=4, k=3, arbitrage=False)
    problem = _problem(tree, UtilitySpec.power(0.5))
    polytope = admissible_polytope(problem.support, 1.0)
    axes = [np.linspace(*polytope.extent_along(axis), 9) for axis in np.eye(2)]
    mesh = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, 2)
    mesh = np.vstack([mesh, np.zeros(2)])
    values, _ = phi_batch(problem, mesh)
    inside = mesh[values > VALUE_FLOOR]
    first, second = inside[rng.integers(len(inside), size=2)]
    f1, _ = phi_eval(problem, first)
    f2, _ = phi_eval(problem, second)
    f_mid, _ = phi_eval(problem, lam * first + (1.0 - lam) * second)
    assert f_mid >= lam * f1 + (1.0 - lam) * f2 - 1e-12


@pytest.mark.parametrize("utility", [UtilitySpec.power(0.5), UtilitySpec.exponential(1.0), UtilitySpec.log()])
def test_value_is_nondecreasing_and_midpoint_concave(utility):
    tree = one_period_tree(TWO_ASSET_INCREMENTS, TWO_ASSET_EXTREMES, s0=[1.0, 1.0])
    capitals = np.linspace(0.2, 2.0, 10)
    values = np.array([s.value for s in MaxminSolver().solve_batch(_problem(tree, utility), capitals)])
    assert np.all(np.diff(values) >= -1e-8)
    # the capitals are evenly spaced, so each interior one is a midpoint of its neighbours
    assert np.all(values[1:-1] >= 0.5 * (values[:-2] + values[2:]) - 1e-8)
