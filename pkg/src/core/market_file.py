"""JSON market files.

A market file carries the format version, the asset count ``d``, the horizon
``T``, the utility and the node list::

    {"version": 1, "d": 1, "T": 1,
     "utility": {"family": "log", "params": {}},
     "nodes": [{"id": "r", "t": 0, "S": [1.0], "children": ["u", "d"], "measures": [[0.5, 0.5]]},
               {"id": "u", "t": 1, "S": [2.0]},
               {"id": "d", "t": 1, "S": [0.5]}]}

Terminal endowments go under ``utility.endowments`` keyed by node id; their
presence switches the endowment on.
"""
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import MarketError, MarketFileError
from .market import MeasureSet, Node, ScenarioTree, validate_tree
from .utility import UtilitySpec

FORMAT_VERSION = 1


class UtilityModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    family: str
    params: Dict[str, Any] = Field(default_factory=dict)
    endowments: Optional[Dict[str, float]] = None


class NodeModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str = Field(min_length=1)
    t: int = Field(ge=0)
    S: List[float] = Field(min_length=1)
    children: List[str] = Field(default_factory=list)
    measures: Optional[List[List[float]]] = None

    @field_validator("S")
    @classmethod
    def _finite_prices(cls, prices: List[float]) -> List[float]:
        if not all(math.isfinite(p) for p in prices):
            raise ValueError("prices must be finite")
        return prices

    @field_validator("measures")
    @classmethod
    def _probabilities(cls, measures: Optional[List[List[float]]]) -> Optional[List[List[float]]]:
        if measures is None:
            return measures
        if not measures:
            raise ValueError("measure set must contain at least one extreme vector")
        if len({len(row) for row in measures}) != 1:
            raise ValueError("extreme vectors must all have one entry per child")
        for row in measures:
            for p in row:
                if not math.isfinite(p) or p < 0.0:
                    raise ValueError(f"probability {p!r} is negative or not finite")
        return measures


class MarketModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: Literal[1]
    d: int = Field(ge=1)
    T: int = Field(ge=1)
    utility: UtilityModel
    nodes: List[NodeModel] = Field(min_length=1)


@dataclass
class MarketDocument:
    tree: ScenarioTree
    utility: UtilitySpec


def _describe(error: Dict[str, Any], raw: Any) -> str:
    loc = list(error.get("loc", ()))
    where = ".".join(str(part) for part in loc)
    # name the offending node when the location points into the node list
    if len(loc) >= 2 and loc[0] == "nodes" and isinstance(loc[1], int):
        try:
            node_id = raw["nodes"][loc[1]]["id"]
            where = f"node '{node_id}' field {'.'.join(str(p) for p in loc[2:]) or '(node)'}"
        except (KeyError, IndexError, TypeError):
            pass
    return f"{where}: {error.get('msg', 'invalid value')}"


def _decode(data: Union[bytes, str]) -> Any:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise MarketFileError(f"market file is not UTF-8 text (byte {e.start})", code="syntax")
    try:
        return json.loads(data)
    except json.JSONDecodeError as e:
        raise MarketFileError(f"line {e.lineno} column {e.colno}: {e.msg}", code="syntax")


def load_market(data: Union[bytes, str]) -> MarketDocument:
    raw = _decode(data)
    try:
        model = MarketModel.model_validate(raw)
    except ValidationError as e:
        raise MarketFileError(_describe(e.errors()[0], raw), code="schema")

    endowments = model.utility.endowments
    utility = UtilitySpec.from_params(model.utility.family, model.utility.params,
                                      endowment_enabled=endowments is not None)
    endowments = endowments or {}
    known = {n.id for n in model.nodes}
    for node_id in endowments:
        if node_id not in known:
            raise MarketFileError(f"endowment for unknown node '{node_id}'", code="validation")

    nodes = [
        Node(id=n.id, time=n.t, price=n.S, children=tuple(n.children),
             measures=MeasureSet(n.measures) if n.measures is not None else None,
             endowment=endowments.get(n.id))
        for n in model.nodes
    ]
    try:
        tree = ScenarioTree(model.T, model.d, nodes)
    except MarketError as e:
        raise MarketFileError(e.message, code="validation")
    report = validate_tree(tree)
    if not report.valid:
        raise MarketFileError(report.violations[0], code="validation")
    logger.debug(f"Parsed market: {len(nodes)} nodes, d={model.d}, T={model.T}, {utility.family.value} utility")
    return MarketDocument(tree, utility)


def parse_market_file(data: Union[bytes, str]) -> ScenarioTree:
    return load_market(data).tree


def read_market(path) -> MarketDocument:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise MarketFileError(f"cannot read '{path}': {e.strerror}", code="syntax")
    return load_market(data)


def market_to_dict(tree: ScenarioTree, utility: UtilitySpec) -> Dict[str, Any]:
    nodes = []
    for nid in tree.breadth_first():
        node = tree.node(nid)
        entry: Dict[str, Any] = {"id": nid, "t": node.time, "S": [float(p) for p in node.price]}
        if node.children:
            entry["children"] = list(node.children)
            entry["measures"] = [[float(p) for p in row] for row in node.measures.extremes]
        nodes.append(entry)

    utility_entry: Dict[str, Any] = {"family": utility.family.value, "params": utility.params()}
    if utility.endowment_enabled:
        utility_entry["endowments"] = {nid: float(tree.node(nid).endowment)
                                       for nid in tree.terminal_nodes()
                                       if tree.node(nid).endowment is not None}
    return {"version": FORMAT_VERSION, "d": tree.asset_count, "T": tree.horizon,
            "utility": utility_entry, "nodes": nodes}


def serialize_market(tree: ScenarioTree, utility: UtilitySpec) -> str:
    # json writes floats with repr, the shortest exact round-trip form
    return json.dumps(market_to_dict(tree, utility), indent=2) + "\n"
