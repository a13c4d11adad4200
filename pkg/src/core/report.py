import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from loguru import logger

from .arbitrage import NAResult
from .dynamic_programming import InequalityReport, ValueField
from .errors import MarketFileError
from .market import Strategy
from .utility import UtilitySpec

REPORT_VERSION = 1


@dataclass
class SolveReport:
    """Result of a robust solve; plain data so it serializes deterministically."""
    x0: float
    value: float
    strategy_value: float
    eps_grid: float
    utility: Dict[str, Any]
    strategy: Dict[str, List[float]]
    no_arbitrage: Dict[str, Dict[str, Any]]
    margins: Dict[str, Optional[float]]   # null where L is trivial and the margin is infinite
    verification: Dict[str, Any]
    statistics: Dict[str, Any]
    grid: Dict[str, Any]
    version: int = REPORT_VERSION
    metadata: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        if self.metadata is None:
            del data["metadata"]
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SolveReport':
        try:
            return cls(**data)
        except TypeError as e:
            raise MarketFileError(f"malformed solve report: {e}", code="schema")

    @classmethod
    def from_json(cls, text: str) -> 'SolveReport':
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise MarketFileError(f"line {e.lineno} column {e.colno}: {e.msg}", code="syntax")
        return cls.from_dict(data)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        logger.info(f"Solve report written to {path}")
        return path


def na_summary(results: Dict[str, NAResult]) -> Dict[str, Dict[str, Any]]:
    summary = {}
    for node_id, result in results.items():
        entry: Dict[str, Any] = {"status": result.status.value}
        if result.witness is not None:
            entry["witness"] = [float(v) for v in result.witness]
        summary[node_id] = entry
    return summary


def build_solve_report(field_: ValueField, strategy: Strategy, strategy_value: float, x0: float,
                       na_results: Dict[str, NAResult], margins: Dict[str, float],
                       inequalities: InequalityReport, utility: UtilitySpec,
                       metadata: Optional[Dict[str, Any]] = None) -> SolveReport:
    verification = {
        "chain": [float(v) for v in inequalities.chain],
        "tolerance": float(inequalities.tolerance),
        "nonincreasing": inequalities.nonincreasing,
        "terminal_attains": inequalities.terminal_attains,
        "violations": list(inequalities.violations),
    }
    grid = {
        "knots": int(field_.grid.size),
        "lower": float(field_.grid[0]),
        "upper": float(field_.grid[-1]),
        "tol": float(field_.tol),
    }
    return SolveReport(
        x0=float(x0),
        value=float(field_.value(field_.tree.root, x0)),
        strategy_value=float(strategy_value),
        eps_grid=float(field_.eps_grid),
        utility={"family": utility.family.value, "params": utility.params(),
                 "endowment_enabled": utility.endowment_enabled},
        strategy=strategy.to_dict(),
        no_arbitrage=na_summary(na_results),
        margins={k: float(v) if math.isfinite(v) else None for k, v in margins.items()},
        verification=verification,
        statistics=field_.statistics.to_dict(),
        grid=grid,
        metadata=metadata,
    )
