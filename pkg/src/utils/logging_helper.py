import sys
from datetime import datetime
from pathlib import Path
from typing import Optional

from loguru import logger


def setup_logging(log_level: str = "WARNING", log_dir: Optional[Path] = None):
    # Remove default logger
    logger.remove()

    # Console logging; stdout carries command output
    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
        level=log_level,
        colorize=True
    )

    # File logging
    if log_dir is not None:
        log_file = Path(log_dir) / "robust_utility_{time:YYYY-MM-DD}.log"
        logger.add(
            log_file,
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
            level="DEBUG",
            rotation="1 day",
            retention="30 days",
            compression="zip"
        )


def log_na_check(node_count: int, violating: list, source: str):
    if not violating:
        logger.info(f"No-arbitrage holds at all {node_count} non-polar nodes of {source}", extra={
            'node_count': node_count,
            'source': source,
            'event_type': 'na_check_holds'
        })
    else:
        logger.warning(f"No-arbitrage fails at {len(violating)} node(s) of {source}: {violating}", extra={
            'node_count': node_count,
            'violating_nodes': violating,
            'source': source,
            'event_type': 'na_check_violated'
        })


def log_solve_start(source: str, x0: float, knots: int, tol: float):
    logger.info(f"Robust solve started for {source}", extra={
        'source': source,
        'x0': x0,
        'knots': knots,
        'tol': tol,
        'event_type': 'solve_start'
    })


def log_solve_success(source: str, x0: float, value: float, eps_grid: float):
    logger.info(f"Robust solve completed: U0({x0}) = {value:.10g} (eps_grid {eps_grid:.3e})", extra={
        'source': source,
        'x0': x0,
        'value': value,
        'eps_grid': eps_grid,
        'event_type': 'solve_success'
    })


def log_solve_failure(source: str, error_code: str, error_message: str):
    logger.error(f"Robust solve failed [{error_code}]: {error_message}", extra={
        'source': source,
        'error_code': error_code,
        'error_message': error_message,
        'event_type': 'solve_failure'
    })


def log_lab_level(study: str, level: int, h1: float, value: float, gap: float):
    logger.info(f"{study} level N={level}: h1={h1:.6g}, value={value:.10g}, gap={gap:.6g}", extra={
        'study': study,
        'level': level,
        'h1': h1,
        'value': value,
        'gap': gap,
        'event_type': 'lab_level'
    })


def log_file_operation(operation: str, file_path: str, success: bool,
                       error_message: Optional[str] = None):
    if success:
        logger.info(f"File operation '{operation}' completed: {file_path}", extra={
            'operation': operation,
            'file_path': file_path,
            'event_type': 'file_operation_success'
        })
    else:
        logger.error(f"File operation '{operation}' failed for {file_path}: {error_message}", extra={
            'operation': operation,
            'file_path': file_path,
            'error_message': error_message,
            'event_type': 'file_operation_failure'
        })


def log_performance_metric(metric_name: str, metric_value: float, unit: str,
                           context: Optional[str] = None):
    logger.info(f"Performance metric: {metric_name} = {metric_value} {unit}", extra={
        'metric_name': metric_name,
        'metric_value': metric_value,
        'unit': unit,
        'context': context,
        'event_type': 'performance_metric'
    })


class SolveLogger:
    """Wall-clock timing of one command run."""

    def __init__(self, command: str, source: str):
        self.command = command
        self.source = source
        self.start_time = datetime.now()

    def log_success(self):
        duration = datetime.now() - self.start_time
        log_performance_metric(f"{self.command}_duration", duration.total_seconds(), "seconds",
                               f"{self.command} on {self.source}")

    def log_failure(self, error_code: str, error_message: str):
        duration = datetime.now() - self.start_time
        log_performance_metric(f"{self.command}_duration", duration.total_seconds(), "seconds",
                               f"Failed {self.command} on {self.source}")
        log_solve_failure(self.source, error_code, error_message)
