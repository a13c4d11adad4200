import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from core.arbitrage import check_na_tree, na_holds, tree_margins
from core.counterexamples import one_dim_existence_demo, random_utility_variant, run_nonexistence_study
from core.dynamic_programming import (WealthGridSpec, backward_induction, extract_strategy,
                                      verify_value_inequalities)
from core.errors import ConfigError, InputError, RobustUtilityError
from core.market_file import read_market
from core.oracle import GridSpec, brute_force_value, selector_count, worst_case_expected_utility
from core.report import build_solve_report
from core.utility import UtilitySpec
from utils.config import ensure_log_directory, load_config, validate_config
from utils.logging_helper import (SolveLogger, log_file_operation, log_lab_level, log_na_check,
                                  log_solve_start, log_solve_success, setup_logging)


class _Parser(argparse.ArgumentParser):
    """Usage errors become structured input errors instead of exiting."""

    def error(self, message):
        raise InputError(f"{self.prog}: {message}", code="usage")


def _levels(text: str) -> List[int]:
    try:
        levels = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated integers, got {text!r}")
    if not levels:
        raise argparse.ArgumentTypeError("at least one level is required")
    return levels


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robust-utility",
                     description="Robust utility maximization on finite scenario trees")
    parser.add_argument("--log-level", help="console log level (overrides LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    check = sub.add_parser("check-na", help="no-arbitrage check per node")
    check.add_argument("file", type=Path)

    def solver_options(p):
        p.add_argument("--x", type=float, required=True, help="initial capital")
        p.add_argument("--grid", type=int, help="wealth-grid knots")
        p.add_argument("--tol", type=float, help="solver tolerance")
        p.add_argument("--threads", type=int, help="worker threads per time slice")
        p.add_argument("--allow-unbounded", action="store_true",
                       help="accept utilities unbounded above (epsilon-optimality only)")

    solve = sub.add_parser("solve", help="dynamic programming solve")
    solve.add_argument("file", type=Path)
    solver_options(solve)
    solve.add_argument("--out", type=Path, required=True, help="report path")
    solve.add_argument("--metadata", action="store_true", help="add a timestamped metadata block")

    oracle = sub.add_parser("oracle", help="brute-force comparison")
    oracle.add_argument("file", type=Path)
    solver_options(oracle)
    oracle.add_argument("--step", type=float, required=True, help="strategy grid step")
    oracle.add_argument("--radius", type=float, help="fixed strategy box radius")
    oracle.add_argument("--csv", type=Path, help="write the comparison table")

    value_function = sub.add_parser("value-function", help="export a node's value function")
    value_function.add_argument("file", type=Path)
    value_function.add_argument("--node", required=True)
    value_function.add_argument("--csv", type=Path, required=True)
    value_function.add_argument("--x", type=float, default=1.0, help="capital the grid is built around")
    value_function.add_argument("--grid", type=int)
    value_function.add_argument("--tol", type=float)
    value_function.add_argument("--threads", type=int)
    value_function.add_argument("--allow-unbounded", action="store_true")

    lab = sub.add_parser("lab", help="counterexample laboratory")
    lab_sub = lab.add_subparsers(dest="study", required=True, parser_class=_Parser)
    truncation = lab_sub.add_parser("truncation", help="truncated nonexistence example")
    truncation.add_argument("--levels", type=_levels, default=[1, 2, 4, 8])
    truncation.add_argument("--x", type=float, default=1.0)
    truncation.add_argument("--variant", choices=["two-asset", "random-utility"], default="two-asset")
    truncation.add_argument("--csv", type=Path)
    existence = lab_sub.add_parser("existence", help="one-asset existence demonstration")
    existence.add_argument("--seeds", type=int, default=100, help="number of seeded instances")
    existence.add_argument("--seed", type=int, default=0, help="base seed")
    existence.add_argument("--csv", type=Path)

    margin = sub.add_parser("margin", help="nondegeneracy margins per node")
    margin.add_argument("file", type=Path)
    return parser


def _grid_spec(args, config: Dict[str, Any]) -> WealthGridSpec:
    return WealthGridSpec(x0=args.x, knots=args.grid or config['grid']['knots'],
                          lower_factor=config['grid']['lower_factor'])


def _solve(args, config: Dict[str, Any]):
    document = read_market(args.file)
    tol = args.tol or config['solver']['tol']
    field_ = backward_induction(document.tree, document.utility, _grid_spec(args, config), tol=tol,
                                allow_unbounded=args.allow_unbounded,
                                threads=args.threads or config['solver']['threads'],
                                max_iterations=config['solver']['max_iterations'])
    return document, field_


def _write_csv(frame: pd.DataFrame, path: Path):
    frame.to_csv(path, index=False, float_format="%.17g")
    log_file_operation("write_csv", str(path), True)


def run_check_na(args, config: Dict[str, Any]) -> int:
    tree = read_market(args.file).tree
    results = check_na_tree(tree)
    for node_id, result in results.items():
        line = f"{node_id}\t{result.status.value}"
        if result.witness is not None:
            line += "\twitness " + " ".join(repr(float(v)) for v in result.witness)
        print(line)
    violating = [nid for nid, r in results.items() if not r.holds]
    log_na_check(len(results), violating, str(args.file))
    return 0 if na_holds(results) else 1


def run_solve(args, config: Dict[str, Any]) -> int:
    knots = args.grid or config['grid']['knots']
    log_solve_start(str(args.file), args.x, knots, args.tol or config['solver']['tol'])
    document, field_ = _solve(args, config)
    tree = document.tree
    strategy, strategy_value = extract_strategy(tree, field_, args.x)
    inequalities = verify_value_inequalities(tree, field_, strategy, args.x, optimal=True)
    metadata = None
    if args.metadata:
        metadata = {"created": pd.Timestamp.now(tz="UTC").isoformat(), "source": str(args.file)}
    report = build_solve_report(field_, strategy, strategy_value, args.x, check_na_tree(tree),
                                tree_margins(tree), inequalities, document.utility, metadata)
    report.write(args.out)
    log_file_operation("write_report", str(args.out), True)
    log_solve_success(str(args.file), args.x, report.value, report.eps_grid)
    print(f"value {report.value!r}\neps_grid {report.eps_grid!r}\nreport {args.out}")
    for problem in inequalities.violations:
        logger.warning(f"Verification: {problem}")
    return 0


def run_oracle(args, config: Dict[str, Any]) -> int:
    document = read_market(args.file)
    tree, utility = document.tree, document.utility
    result = brute_force_value(tree, utility, args.x, GridSpec(args.step, args.radius),
                               evaluation_cap=config['oracle']['evaluation_cap'])
    rows = [{"method": "oracle", "value": result.value, "budget": result.resolution_bound,
             "evaluations": result.evaluations}]
    check = worst_case_expected_utility(tree, result.strategy, utility, args.x,
                                        cap=config['oracle']['selector_cap'])
    rows.append({"method": "oracle_selector_check", "value": check.value, "budget": 0.0,
                 "evaluations": selector_count(tree)})
    if result.bounded:
        _, field_ = _solve(args, config)
        dp_value = field_.value(tree.root, args.x)
        rows.append({"method": "dynamic_programming", "value": dp_value, "budget": field_.eps_grid,
                     "evaluations": field_.statistics.solves})
        rows.append({"method": "difference", "value": dp_value - result.value,
                     "budget": field_.eps_grid + result.resolution_bound, "evaluations": np.nan})
    table = pd.DataFrame(rows, columns=["method", "value", "budget", "evaluations"])
    print(table.to_string(index=False, float_format=lambda v: f"{v:.12g}"))
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if args.csv:
        _write_csv(table, args.csv)
    return 0


def run_value_function(args, config: Dict[str, Any]) -> int:
    document, field_ = _solve(args, config)
    continuation = field_.continuation(args.node)
    knots = field_.grid
    frame = pd.DataFrame({"wealth": knots, "value": continuation.value(knots),
                          "slope": continuation.slope(knots)})
    _write_csv(frame, args.csv)
    print(f"{args.node}: {len(frame)} knots written to {args.csv}")
    return 0


def run_lab(args, config: Dict[str, Any]) -> int:
    if args.study == "truncation":
        if args.variant == "random-utility":
            study = random_utility_variant(args.levels, args.x, tol=config['solver']['tol'])
        else:
            study = run_nonexistence_study(args.levels, UtilitySpec.power(0.5), args.x,
                                           tol=config['solver']['tol'])
        for row in study.rows:
            log_lab_level(args.variant, row.N, row.h1, row.value, row.gap)
        frame = study.to_frame()
        print(frame.to_string(index=False, float_format=lambda v: f"{v:.12g}"))
        if args.csv:
            _write_csv(frame, args.csv)
        return 0

    report = one_dim_existence_demo(args.seed, instances=args.seeds)
    print(f"attained {report.attained}/{report.instances} (rejected by NA filter: {report.rejected})")
    if args.csv:
        _write_csv(report.rows, args.csv)
    return 0 if report.all_attained else 3


def run_margin(args, config: Dict[str, Any]) -> int:
    tree = read_market(args.file).tree
    for node_id, margin in tree_margins(tree).items():
        print(f"{node_id}\t{margin!r}")
    return 0


COMMANDS = {
    "check-na": run_check_na,
    "solve": run_solve,
    "oracle": run_oracle,
    "value-function": run_value_function,
    "lab": run_lab,
    "margin": run_margin,
}


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    config = load_config()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except RobustUtilityError as e:
        print(e.structured_line(), file=sys.stderr)
        return e.exit_code

    if args.log_level:
        config['logging']['level'] = args.log_level.upper()
    ok, errors = validate_config(config)
    if not ok:
        error = ConfigError("; ".join(errors))
        print(error.structured_line(), file=sys.stderr)
        return error.exit_code
    setup_logging(config['logging']['level'], ensure_log_directory(config))

    source = str(getattr(args, "file", None) or getattr(args, "study", ""))
    run = SolveLogger(args.command, source)
    try:
        code = COMMANDS[args.command](args, config)
    except RobustUtilityError as e:
        run.log_failure(e.code, e.message)
        print(e.structured_line(), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected failure in {args.command}")
        print(f"ERROR internal {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    run.log_success()
    return code


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))
