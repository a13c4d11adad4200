import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from core.arbitrage import (NAStatus, admissible_polytope, chebyshev_center, check_na_node, check_na_tree,
                            compute_support, na_holds, nondegeneracy_margin, project_to_L, require_na,
                            tree_margins)
from core.dynamic_programming import WealthGridSpec, backward_induction
from core.errors import ArbitrageError, MarginUndefinedError
from core.instances import one_period_tree, random_one_period, random_tree
from core.market import MeasureSet, Node, ScenarioTree, node_wealth, validate_tree
from core.oracle import find_tree_arbitrage
from core.utility import UtilitySpec


def _support(increments, extremes=None):
    increments = np.atleast_2d(increments)
    m = increments.shape[0]
    extremes = extremes if extremes is not None else [np.full(m, 1.0 / m)]
    return compute_support(one_period_tree(increments, extremes, s0=10.0), "r")


def test_coin_satisfies_na(coin):
    results = check_na_tree(coin)
    assert results["r"].status == NAStatus.HOLDS
    assert na_holds(results)


def test_one_sided_increments_are_arbitrage():
    result = check_na_node(_support([[0.5], [1.0]]))
    assert result.status == NAStatus.VIOLATED
    np.testing.assert_allclose(result.witness, [1.0])


def test_downward_arbitrage_witness_points_short():
    result = check_na_node(_support([[-0.5], [-1.0], [0.0]]))
    assert not result.holds
    np.testing.assert_allclose(result.witness, [-1.0])


def test_polar_atom_does_not_rescue_na():
    support = _support([[1.0], [-1.0], [2.0]], [[0.5, 0.0, 0.5]])
    assert support.nonpolar_children == ("c0", "c2")
    assert not check_na_node(support).holds


def test_require_na_raises_with_node():
    tree = one_period_tree([[0.5], [1.0]], [[0.5, 0.5]])
    with pytest.raises(ArbitrageError) as info:
        require_na(tree)
    assert info.value.node == "r"
    assert info.value.exit_code == 1


def test_zero_increments_give_trivial_support():
    support = _support([[0.0, 0.0], [0.0, 0.0]])
    assert support.dimension == 0
    assert check_na_node(support).holds
    assert nondegeneracy_margin(support) == math.inf


def test_redundant_asset_reduces_dimension():
    support = _support([[1.0, 1.0], [-1.0, -1.0]])
    assert support.dimension == 1
    np.testing.assert_allclose(support.projector_L, [[0.5, 0.5], [0.5, 0.5]], atol=1e-12)
    np.testing.assert_allclose(project_to_L(support, [1.0, 0.0]), [0.5, 0.5], atol=1e-12)
    assert check_na_node(support).holds
    assert nondegeneracy_margin(support) == pytest.approx(math.sqrt(2.0))


def test_margins(coin, binomial_two_period):
    assert tree_margins(coin)["r"] == pytest.approx(1.0)
    margins = tree_margins(binomial_two_period)
    assert margins["r"] == pytest.approx(0.5)
    assert margins["ru"] == pytest.approx(1.0)
    assert margins["rd"] == pytest.approx(0.25)


def test_two_dimensional_margin():
    support = _support([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    assert nondegeneracy_margin(support) == pytest.approx(1.0 / math.sqrt(2.0))


def test_margin_undefined_under_arbitrage():
    with pytest.raises(MarginUndefinedError, match="margin undefined"):
        nondegeneracy_margin(_support([[0.5], [1.0]]))


def test_admissible_polytope_extent(binomial_two_period):
    polytope = admissible_polytope(compute_support(binomial_two_period, "r"), 0.5)
    assert polytope.bounded
    lo, hi = polytope.extent_along([1.0])
    assert lo == pytest.approx(-0.5)
    assert hi == pytest.approx(1.0)
    assert polytope.contains([0.9])
    assert not polytope.contains([1.1])


def test_admissible_polytope_unbounded_under_arbitrage():
    polytope = admissible_polytope(_support([[0.5], [1.0]]), 1.0)
    assert not polytope.bounded
    lo, hi = polytope.extent_along([1.0])
    assert hi == math.inf
    assert lo == pytest.approx(-1.0)


def test_admissible_polytope_rejects_negative_capital(coin):
    with pytest.raises(ArbitrageError):
        admissible_polytope(compute_support(coin, "r"), -1.0)


def test_zero_capital_polytope_is_origin(coin):
    polytope = admissible_polytope(compute_support(coin, "r"), 0.0)
    assert polytope.extent_along([1.0]) == pytest.approx((0.0, 0.0), abs=1e-12)


def test_chebyshev_center_of_box():
    A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    center, radius = chebyshev_center(A, np.full(4, 0.5))
    assert radius == pytest.approx(0.5)
    np.testing.assert_allclose(center, [0.0, 0.0], atol=1e-9)


def test_chebyshev_center_of_empty_set():
    center, radius = chebyshev_center(np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
    assert center is None
    assert math.isnan(radius)


@given(vectors=arrays(float, (4, 3), elements=st.floats(-2, 2)),
       h=arrays(float, 3, elements=st.floats(-5, 5)))
@settings(max_examples=100, deadline=None)
def test_projection_residual_is_orthogonal_to_support(vectors, h):
    support = _support(vectors)
    residual = h - project_to_L(support, h)
    assert np.all(np.abs(support.support_vectors @ residual) <= 1e-8 * (1.0 + np.abs(h).sum()))


@given(seed=st.integers(0, 2 ** 32 - 1), d=st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_surrounded_origin_has_positive_margin(seed, d):
    tree = random_one_period(np.random.default_rng(seed), d=d, m=d + 2, arbitrage=False)
    support = compute_support(tree, "r")
    assert check_na_node(support).holds
    assert nondegeneracy_margin(support) > 0.0


@given(seed=st.integers(0, 2 ** 32 - 1), d=st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_half_space_atoms_are_detected(seed, d):
    tree = random_one_period(np.random.default_rng(seed), d=d, m=d + 2, arbitrage=True)
    result = check_na_node(compute_support(tree, "r"))
    assert not result.holds
    gains = tree.increments("r") @ result.witness
    assert np.all(gains >= -1e-9)
    assert np.any(gains > 1e-9)


def _unit_directions(d):
    """Directions covering the unit sphere, with the largest distance to the nearest one."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), 0.0
    if d == 2:
        angles = np.linspace(0.0, 2 * math.pi, 2000, endpoint=False)
        return np.column_stack([np.cos(angles), np.sin(angles)]), 2 * math.pi / 2000
    i = np.arange(20000) + 0.5
    z = 1.0 - 2.0 * i / 20000
    r = np.sqrt(1.0 - z ** 2)
    phi = math.pi * (1.0 + math.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z]), 0.05


def test_na_agrees_with_direction_search():
    rng = np.random.default_rng(20240612)
    decided = 0
    for _ in range(100):
        d = int(rng.integers(1, 4))
        m = int(rng.integers(d, d + 4))
        atoms = rng.uniform(-1.0, 3.0 if rng.random() < 0.5 else 1.0, size=(m, d))
        directions, spacing = _unit_directions(d)
        unit = atoms / np.linalg.norm(atoms, axis=1, keepdims=True)
        # best worst-case cosine; positive means some direction gains on every atom
        score = float(np.max(np.min(directions @ unit.T, axis=1)))
        result = check_na_node(_support(atoms))
        if score > 1e-9:
            assert not result.holds
            decided += 1
        elif score < -spacing:
            assert result.holds
            decided += 1
    assert decided >= 80


@pytest.mark.parametrize("seed", range(20))
def test_tree_na_agrees_with_grid_arbitrage_search(seed):
    rng = np.random.default_rng(300 + seed)
    d, horizon = (1, 2) if seed < 17 else (2, 2)
    planted = [(), ("n0",), ("n0.1",)][seed % 3]
    tree = random_tree(rng, horizon=horizon, d=d, max_extremes=2, arbitrage_nodes=planted)

    results = check_na_tree(tree)
    strategy = find_tree_arbitrage(tree)
    assert na_holds(results) == (strategy is None)
    assert na_holds(results) == (not planted)
    for nid in planted:
        assert not results[nid].holds

    if strategy is not None:
        gains = np.array([w for nid, w in node_wealth(tree, strategy, 0.0).items()
                          if tree.node(nid).is_terminal and not tree.is_polar(nid)])
        assert np.all(gains >= -1e-12)
        assert np.any(gains > 1e-9)


@pytest.fixture
def polar_arbitrage_tree():
    """Node 'a' admits an arbitrage but the root never moves there."""
    nodes = [
        Node("r", 0, [1.0], ("u", "d", "a"), MeasureSet([[0.5, 0.5, 0.0], [0.4, 0.6, 0.0]])),
        Node("u", 1, [2.0], ("uu", "ud"), MeasureSet([[0.5, 0.5]])),
        Node("d", 1, [0.5], ("du", "dd"), MeasureSet([[0.5, 0.5]])),
        Node("a", 1, [1.5], ("a0", "a1"), MeasureSet([[0.5, 0.5]])),
        Node("uu", 2, [4.0]),
        Node("ud", 2, [1.0]),
        Node("du", 2, [1.0]),
        Node("dd", 2, [0.25]),
        Node("a0", 2, [1.8]),
        Node("a1", 2, [2.0]),
    ]
    return ScenarioTree(2, 1, nodes, root="r")


def test_arbitrage_behind_polar_edge_keeps_global_na(polar_arbitrage_tree):
    tree = polar_arbitrage_tree
    assert validate_tree(tree).valid
    assert tree.is_polar("a")
    assert not check_na_node(compute_support(tree, "a")).holds

    results = check_na_tree(tree)
    assert set(results) == {"r", "u", "d"}
    assert na_holds(results)
    require_na(tree)
    assert find_tree_arbitrage(tree) is None

    field_ = backward_induction(tree, UtilitySpec.exponential(1.0), WealthGridSpec(x0=1.0, knots=33))
    assert math.isfinite(field_.root_value())
