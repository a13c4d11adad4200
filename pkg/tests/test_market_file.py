import json

import numpy as np
import pytest

from core.errors import MarketFileError, UtilityError
from core.instances import binomial_tree
from core.market_file import load_market, parse_market_file, read_market, serialize_market
from core.utility import UtilityFamily, UtilitySpec


def _market(**overrides):
    data = {
        "version": 1, "d": 1, "T": 1,
        "utility": {"family": "log", "params": {}},
        "nodes": [
            {"id": "r", "t": 0, "S": [1.0], "children": ["u", "d"], "measures": [[0.5, 0.5], [0.4, 0.6]]},
            {"id": "u", "t": 1, "S": [2.0]},
            {"id": "d", "t": 1, "S": [0.5]},
        ],
    }
    data.update(overrides)
    return data


def _text(data):
    return json.dumps(data)


def test_minimal_market():
    document = load_market(_text(_market()))
    tree = document.tree
    assert tree.root == "r"
    assert tree.horizon == 1
    np.testing.assert_allclose(tree.increments("r"), [[1.0], [-0.5]])
    assert tree.node("r").measures.count == 2
    assert document.utility.family is UtilityFamily.LOG
    assert not document.utility.endowment_enabled


def test_parse_market_file_returns_tree():
    assert parse_market_file(_text(_market()).encode("utf-8")).asset_count == 1


def test_negative_probability_names_the_node():
    data = _market()
    data["nodes"][0]["measures"] = [[-0.1, 1.1]]
    with pytest.raises(MarketFileError) as info:
        load_market(_text(data))
    assert info.value.code == "schema"
    assert "node 'r'" in info.value.message
    assert info.value.exit_code == 2


def test_unnormalized_measure_is_a_validation_error():
    data = _market()
    data["nodes"][0]["measures"] = [[0.5, 0.6]]
    with pytest.raises(MarketFileError, match="measure not normalized") as info:
        load_market(_text(data))
    assert info.value.code == "validation"


def test_unknown_utility_family():
    with pytest.raises(UtilityError, match="unknown utility family 'cubic'"):
        load_market(_text(_market(utility={"family": "cubic", "params": {}})))


def test_unknown_key_is_rejected():
    with pytest.raises(MarketFileError) as info:
        load_market(_text(_market(colour="blue")))
    assert info.value.code == "schema"


def test_unsupported_version():
    with pytest.raises(MarketFileError):
        load_market(_text(_market(version=2)))


def test_broken_json_reports_position():
    with pytest.raises(MarketFileError, match="line 1 column") as info:
        load_market('{"version": 1,')
    assert info.value.code == "syntax"


def test_non_utf8_bytes():
    with pytest.raises(MarketFileError, match="not UTF-8") as info:
        load_market(b"\xff\xfe{}")
    assert info.value.code == "syntax"


def test_endowments_switch_on_the_endowment():
    data = _market(utility={"family": "power", "params": {"gamma": 0.5}, "endowments": {"u": 1.0, "d": -0.25}})
    document = load_market(_text(data))
    assert document.utility.endowment_enabled
    assert document.tree.node("d").endowment == -0.25


def test_endowment_for_unknown_node():
    data = _market(utility={"family": "log", "params": {}, "endowments": {"x": 1.0}})
    with pytest.raises(MarketFileError, match="unknown node 'x'") as info:
        load_market(_text(data))
    assert info.value.code == "validation"


def test_wrong_child_time_is_reported():
    data = _market()
    data["nodes"][1]["t"] = 2
    with pytest.raises(MarketFileError, match="does not follow parent time"):
        load_market(_text(data))


def test_missing_file(tmp_path):
    with pytest.raises(MarketFileError, match="cannot read"):
        read_market(tmp_path / "absent.json")


def test_serialize_round_trip(tmp_path):
    tree = binomial_tree(2, extremes=((0.5, 0.5), (0.3, 0.7)))
    utility = UtilitySpec.power(0.3)
    path = tmp_path / "binomial.json"
    path.write_text(serialize_market(tree, utility), encoding="utf-8")
    document = read_market(path)
    assert document.utility == utility
    assert serialize_market(document.tree, document.utility) == serialize_market(tree, utility)


def test_serialized_floats_are_exact():
    tree = binomial_tree(1, up=1.1, down=0.9, extremes=((1 / 3, 2 / 3),))
    text = serialize_market(tree, UtilitySpec.log())
    document = load_market(text)
    assert document.tree.node("ru").price[0] == 1.1
    assert document.tree.node("r").measures.extremes[0, 0] == 1 / 3
