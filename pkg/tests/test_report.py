import json
import math

import pytest

from core.arbitrage import check_na_tree, tree_margins
from core.dynamic_programming import WealthGridSpec, backward_induction, extract_strategy, verify_value_inequalities
from core.errors import MarketFileError
from core.report import SolveReport, build_solve_report
from core.utility import UtilitySpec


@pytest.fixture
def solved(coin):
    utility = UtilitySpec.exponential(1.0)
    field_ = backward_induction(coin, utility, WealthGridSpec(x0=1.0, knots=33))
    strategy, strategy_value = extract_strategy(coin, field_, 1.0)
    inequalities = verify_value_inequalities(coin, field_, strategy, 1.0, optimal=True)
    return field_, strategy, strategy_value, inequalities, utility


@pytest.fixture
def report(coin, solved):
    field_, strategy, strategy_value, inequalities, utility = solved
    return build_solve_report(field_, strategy, strategy_value, 1.0, check_na_tree(coin), tree_margins(coin),
                              inequalities, utility)


def test_report_contents(report):
    assert report.version == 1
    assert report.x0 == 1.0
    assert report.value == pytest.approx(report.strategy_value, abs=1e-6)
    assert report.no_arbitrage == {"r": {"status": "holds"}}
    assert report.margins == {"r": pytest.approx(1.0)}
    assert report.grid["knots"] == 33
    assert report.verification["terminal_attains"] is True
    assert report.utility == {"family": "exponential", "params": {"alpha": 1.0}, "endowment_enabled": False}


def test_metadata_is_omitted_unless_given(report):
    assert "metadata" not in report.to_dict()
    report.metadata = {"source": "coin.json"}
    assert report.to_dict()["metadata"] == {"source": "coin.json"}


def test_json_round_trip(report, tmp_path):
    path = report.write(tmp_path / "report.json")
    text = path.read_text(encoding="utf-8")
    assert text.endswith("\n")
    assert SolveReport.from_json(text).to_dict() == report.to_dict()


def test_malformed_report():
    with pytest.raises(MarketFileError, match="malformed solve report"):
        SolveReport.from_dict({"x0": 1.0})
    with pytest.raises(MarketFileError) as info:
        SolveReport.from_json("{")
    assert info.value.code == "syntax"


def test_report_is_plain_json(report):
    data = json.loads(report.to_json())
    assert set(data["strategy"]) == {"r"}
    assert isinstance(data["statistics"]["solves"], int)


def test_keys_are_sorted(report):
    text = report.to_json()
    data = json.loads(text)
    assert list(data) == sorted(data)
    assert list(data["verification"]) == sorted(data["verification"])


def test_infinite_margin_is_null(coin, solved):
    field_, strategy, strategy_value, inequalities, utility = solved
    report = build_solve_report(field_, strategy, strategy_value, 1.0, check_na_tree(coin), {"r": math.inf},
                                inequalities, utility)
    assert report.margins == {"r": None}
    assert "Infinity" not in report.to_json()
    assert json.loads(report.to_json())["margins"] == {"r": None}
