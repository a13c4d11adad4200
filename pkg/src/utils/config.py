import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import load_dotenv
from loguru import logger


def _env_number(name: str, default: str, kind: type) -> Union[int, float, str]:
    # unparsable values are kept as text so validate_config can report them
    raw = os.getenv(name, default).strip()
    try:
        return kind(raw)
    except ValueError:
        return raw


def load_config(env_path: Optional[Path] = None) -> Dict[str, Any]:
    # Load environment variables from .env file
    env_path = env_path or Path.cwd() / '.env'
    if env_path.exists():
        load_dotenv(env_path)

    config = {
        # Solver configuration
        'solver': {
            'threads': _env_number('RUM_THREADS', '1', int),
            'tol': _env_number('RUM_TOL', '1e-8', float),
            'max_iterations': _env_number('RUM_MAX_ITERATIONS', '10000', int),
        },

        # Wealth grid
        'grid': {
            'knots': _env_number('RUM_GRID_KNOTS', '257', int),
            'lower_factor': _env_number('RUM_GRID_LOWER_FACTOR', '1e-3', float),
        },

        # Brute-force oracle caps
        'oracle': {
            'selector_cap': _env_number('RUM_SELECTOR_CAP', '1000000', int),
            'evaluation_cap': _env_number('RUM_ORACLE_EVALUATION_CAP', '20000000', int),
        },

        # Logging configuration
        'logging': {
            'level': os.getenv('LOG_LEVEL', 'WARNING').upper(),
            'log_dir': os.getenv('RUM_LOG_DIR', ''),
        },
    }

    return config


def validate_config(config: Dict[str, Any]) -> tuple[bool, list[str]]:
    errors = []

    solver = config.get('solver', {})
    for key in ('threads', 'max_iterations'):
        value = solver.get(key)
        if not isinstance(value, int) or value < 1:
            errors.append(f"solver.{key} must be a positive integer, got {value!r}")
    tol = solver.get('tol')
    if not isinstance(tol, float) or not tol > 0.0:
        errors.append(f"solver.tol must be a positive number, got {tol!r}")

    grid = config.get('grid', {})
    knots = grid.get('knots')
    if not isinstance(knots, int) or knots < 5:
        errors.append(f"grid.knots must be an integer of at least 5, got {knots!r}")
    lower = grid.get('lower_factor')
    if not isinstance(lower, float) or not 0.0 < lower < 1.0:
        errors.append(f"grid.lower_factor must lie in (0, 1), got {lower!r}")

    oracle = config.get('oracle', {})
    for key in ('selector_cap', 'evaluation_cap'):
        value = oracle.get(key)
        if not isinstance(value, int) or value < 1:
            errors.append(f"oracle.{key} must be a positive integer, got {value!r}")

    level = config.get('logging', {}).get('level')
    if level not in ('TRACE', 'DEBUG', 'INFO', 'SUCCESS', 'WARNING', 'ERROR', 'CRITICAL'):
        errors.append(f"logging.level is not a log level: {level!r}")

    if errors:
        logger.debug(f"Configuration has {len(errors)} problem(s)")
    return len(errors) == 0, errors


def ensure_log_directory(config: Dict[str, Any]) -> Optional[Path]:
    log_dir = config.get('logging', {}).get('log_dir')
    if not log_dir:
        return None
    path = Path(log_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        logger.error(f"Failed to create log directory {path}: {e}")
        return None
    return path
