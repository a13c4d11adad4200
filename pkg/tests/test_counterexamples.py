import math

import numpy as np
import pandas as pd
import pytest

from core.arbitrage import check_na_tree, na_holds
from core.counterexamples import (STUDY_COLUMNS, build_random_utility_market, build_truncated_example,
                                  one_dim_existence_demo, p1_section, passes_na_filter, random_utility_variant,
                                  run_nonexistence_study)
from core.errors import LabError
from core.utility import UtilitySpec

# sup over h2 of E_P1[sqrt(1 + h2 dS2)], reached at h2 = 1/2
P1_SUPREMUM = 0.5 * math.sqrt(0.5) + 0.5 * math.sqrt(2.0)


@pytest.fixture(scope="module")
def study():
    return run_nonexistence_study([1, 2, 4, 8])


def test_truncated_example_shape(sqrt_utility):
    tree = build_truncated_example(1, sqrt_utility)
    assert len(tree.node("r").children) == 6
    assert tree.asset_count == 2
    assert na_holds(check_na_tree(tree))
    np.testing.assert_allclose(tree.node("r").measures.extremes.sum(axis=1), [1.0, 1.0])


def test_second_measure_has_growing_upside(sqrt_utility):
    # E_P2[sqrt of the first asset's positive jump] grows like (N + 1) / 2
    for N in (1, 3, 6):
        tree = build_truncated_example(N, sqrt_utility)
        p2 = tree.node("r").measures.extremes[1]
        jumps = np.maximum(tree.increments("r")[:, 0], 0.0)
        assert float(p2 @ np.sqrt(jumps)) == pytest.approx((N + 1) / 2)


@pytest.mark.parametrize("N", [0, -2, 1.5])
def test_truncation_level_must_be_positive_integer(N, sqrt_utility):
    with pytest.raises(LabError):
        build_truncated_example(N, sqrt_utility)


def test_bounded_utility_is_rejected():
    with pytest.raises(LabError, match="bounded above"):
        build_truncated_example(2, UtilitySpec.exponential(1.0))


def test_study_shows_nonattainment_signature(study):
    assert study.passed, study.violations()
    h1 = [row.h1 for row in study.rows]
    assert all(a > b > 0.0 for a, b in zip(h1, h1[1:]))
    for row in study.rows:
        assert 1.0 < row.value < P1_SUPREMUM
        assert row.value_at_limit_point == pytest.approx(1.0, abs=1e-9)


def test_values_approach_but_do_not_reach_the_supremum(study):
    values = [row.value for row in study.rows]
    assert values == sorted(values)
    assert study.rows[-1].gap >= 0.05


def test_study_frame_and_csv(study, tmp_path):
    frame = study.to_frame()
    assert list(frame.columns) == STUDY_COLUMNS
    assert frame["N"].tolist() == [1, 2, 4, 8]
    back = pd.read_csv(study.to_csv(tmp_path / "study.csv"), float_precision="round_trip")
    np.testing.assert_array_equal(back["value"].to_numpy(), frame["value"].to_numpy())


def test_p1_section_decreases_away_from_zero():
    values = p1_section(4, np.linspace(0.0, 0.4, 9), 0.5)
    assert values[0] == pytest.approx(P1_SUPREMUM)
    assert np.all(np.diff(values) <= 1e-12)


def test_random_utility_market_carries_endowments():
    utility = UtilitySpec.power(0.5, endowment_enabled=True)
    tree = build_random_utility_market(2, utility)
    assert tree.asset_count == 1
    endowments = [tree.node(c).endowment for c in tree.node("r").children]
    assert endowments[:4] == [-0.5, -0.5, 1.0, 1.0]
    assert all(e == 0.0 for e in endowments[4:])
    assert passes_na_filter(tree)


def test_random_utility_variant_tracks_two_asset_study(study):
    variant = random_utility_variant([1, 2, 4, 8])
    assert variant.passed, variant.violations()
    for fixed, free in zip(variant.rows, study.rows):
        assert fixed.value_at_limit_point == pytest.approx(1.0, abs=1e-9)
        assert fixed.value <= free.value + 1e-7
        assert fixed.value == pytest.approx(free.value, abs=1e-3)


def test_random_utility_variant_enables_endowment():
    variant = random_utility_variant([1], utility=UtilitySpec.power(0.5))
    assert variant.rows[0].value > 1.0


def test_existence_demo_attains_every_instance():
    report = one_dim_existence_demo(seed=3, instances=5, grid_points=2000)
    assert report.all_attained
    assert len(report.rows) == 5
    assert (report.rows["value"] >= report.rows["grid_value"] - report.tol).all()


@pytest.mark.slow
def test_existence_demo_full_run():
    report = one_dim_existence_demo(seed=0)
    assert report.instances == 100
    assert report.attained == 100
    assert len(report.rows) == 100


def test_existence_demo_rejects_log_utility():
    with pytest.raises(LabError):
        one_dim_existence_demo(seed=0, instances=1, utility=UtilitySpec.log())
