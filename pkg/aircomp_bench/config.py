# config.py
import difflib
import io
import logging
import math
import os
from contextvars import ContextVar
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError
from pythonjsonlogger import jsonlogger

from .error_handler import ConfigError
from .schemas import ExperimentConfig

# Load environment variables first
load_dotenv()
logger = logging.getLogger(__name__)

# --- Correlation ID for Logging ---
run_id_var: ContextVar[str] = ContextVar('run_id', default='unassigned')


class RunIDFilter(logging.Filter):
    """Injects a run_id from a contextvar into log records."""
    def filter(self, record):
        record.run_id = run_id_var.get()
        return True


def setup_logging(level: Optional[str] = None):
    """Configures JSON logging on stderr with the run-id filter."""
    # Remove any existing handlers to avoid duplicate logs
    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)

    formatter = jsonlogger.JsonFormatter(
        '%(asctime)s %(name)s %(levelname)s %(run_id)s %(message)s'
    )
    handler = logging.StreamHandler()
    handler.setFormatter(formatter)
    handler.addFilter(RunIDFilter())
    level_name = (level or os.getenv('AIRCOMP_LOG_LEVEL', 'INFO')).upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO), handlers=[handler])


# --- Unit conversions (applied once, at parse time) ---

def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def _parse_float(text: str) -> float:
    return float(text)


def _parse_int(text: str) -> int:
    return int(text)


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"expected a boolean, got '{text}'")


def _parse_int_list(text: str) -> List[int]:
    return [int(item) for item in text.split(',') if item.strip()]


def _parse_str_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(',') if item.strip()]


def _parse_triple(text: str) -> Tuple[float, float, float]:
    parts = [float(item) for item in text.split(',')]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated coordinates, got {len(parts)}")
    return parts[0], parts[1], parts[2]


def _parse_rician(text: str) -> float:
    if text.strip().lower() in ('inf', 'infinity', 'los'):
        return math.inf
    return float(text)


# config key -> (model path, parser, conversion to linear units)
CONFIG_KEYS: Dict[str, Tuple[Tuple[str, ...], Callable[[str], Any], Optional[Callable[[Any], Any]]]] = {
    'num_antennas': (('system', 'num_antennas'), _parse_int, None),
    'num_devices': (('system', 'num_devices'), _parse_int, None),
    'power_dbm': (('system', 'power_limit'), _parse_float, dbm_to_watts),
    'noise_power_dbm': (('system', 'noise_power'), _parse_float, dbm_to_watts),
    'realizations': (('system', 'realizations'), _parse_int, None),
    'path_loss_ref_db': (('system', 'fading', 't0'), _parse_float, db_to_linear),
    'reference_distance_m': (('system', 'fading', 'd0'), _parse_float, None),
    'path_loss_exponent': (('system', 'fading', 'alpha'), _parse_float, None),
    'rician_factor': (('system', 'fading', 'rician_beta'), _parse_rician, None),
    'ap_position_m': (('system', 'geometry', 'ap_position'), _parse_triple, None),
    'region_center_m': (('system', 'geometry', 'region_center'), _parse_triple, None),
    'region_radius_m': (('system', 'geometry', 'region_radius'), _parse_float, None),
    'antenna_spacing_wavelengths': (('system', 'geometry', 'antenna_spacing'), _parse_float, None),
    'sca_tolerance': (('system', 'solver', 'sca_tolerance'), _parse_float, None),
    'sca_max_iterations': (('system', 'solver', 'sca_max_iterations'), _parse_int, None),
    'sdp_tolerance': (('system', 'solver', 'sdp_tolerance'), _parse_float, None),
    'sdp_max_iterations': (('system', 'solver', 'sdp_max_iterations'), _parse_int, None),
    'nnqp_tolerance': (('system', 'solver', 'nnqp_tolerance'), _parse_float, None),
    'nnqp_max_iterations': (('system', 'solver', 'nnqp_max_iterations'), _parse_int, None),
    'randomization_candidates': (('system', 'solver', 'randomization_candidates'), _parse_int, None),
    'antenna_sweep': (('antenna_sweep',), _parse_int_list, None),
    'device_sweep': (('device_sweep',), _parse_int_list, None),
    'algorithms': (('algorithms',), _parse_str_list, None),
    'master_seed': (('master_seed',), _parse_int, None),
    'output_path': (('output_path',), str, None),
    'jobs': (('jobs',), _parse_int, None),
    'warm_up': (('warm_up',), _parse_bool, None),
    'validation_samples': (('validation_samples',), _parse_int, None),
    'validation_algorithm': (('validation_algorithm',), str, None),
    'debug': (('debug',), _parse_bool, None),
}

# Common misspellings and bare symbols users reach for first.
KEY_ALIASES: Dict[str, str] = {
    'sigma': 'noise_power_dbm',
    'sigma2': 'noise_power_dbm',
    'noise': 'noise_power_dbm',
    'noise_power': 'noise_power_dbm',
    'p': 'power_dbm',
    'power': 'power_dbm',
    'power_limit': 'power_dbm',
    'n': 'num_antennas',
    'antennas': 'num_antennas',
    'k': 'num_devices',
    'devices': 'num_devices',
    'alpha': 'path_loss_exponent',
    'beta': 'rician_factor',
    't0': 'path_loss_ref_db',
    'epsilon': 'sca_tolerance',
    'seed': 'master_seed',
}

DEFAULT_SWEEPS: Dict[str, List[int]] = {
    'antennas': [8, 16, 32, 64],
    'devices': [2, 4, 6, 8, 10, 12],
}

# --- Error Messages ---
ERROR_MESSAGES: Dict[str, str] = {
    'unknown_key': "Unknown configuration key",
    'bad_value': "Cannot parse value",
    'invalid_value': "Invalid configuration value",
    'missing_file': "Configuration file not found",
}


def suggest_key(key: str) -> Optional[str]:
    """Closest known configuration key for a misspelled one."""
    lowered = key.lower()
    if lowered in KEY_ALIASES:
        return KEY_ALIASES[lowered]
    matches = difflib.get_close_matches(lowered, CONFIG_KEYS.keys(), n=1, cutoff=0.6)
    return matches[0] if matches else None


def _key_lines(text: str) -> Dict[str, int]:
    """Line number of each key's (last) assignment in the config text."""
    lines: Dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith('#') or '=' not in line:
            continue
        key = line.split('=', 1)[0].strip()
        if key.startswith('export '):
            key = key[len('export '):].strip()
        lines[key] = number
    return lines


def _set_path(data: Dict[str, Any], path: Tuple[str, ...], value: Any):
    node = data
    for part in path[:-1]:
        node = node.setdefault(part, {})
    node[path[-1]] = value


def _key_for_location(location: Tuple[Any, ...]) -> Optional[str]:
    """Maps a pydantic error location back to the config key that set it."""
    location = tuple(str(part) for part in location)
    if location and location[0] == 'sweep_values':
        return None
    for key, (path, _, _) in CONFIG_KEYS.items():
        if location[:len(path)] == path:
            return key
    return None


def parse_config(
    path: Union[str, Path, None] = None,
    *,
    text: Optional[str] = None,
    sweep_axis: str = "antennas",
) -> ExperimentConfig:
    """
    Parses a flat key=value configuration into a validated ExperimentConfig.

    Exactly one of ``path`` and ``text`` is used; with neither, the built-in
    defaults are returned. dB quantities are converted to linear units here
    and nowhere else.
    Raises ConfigError naming the offending key and line.
    """
    if sweep_axis not in DEFAULT_SWEEPS:
        raise ConfigError(f"Unknown sweep axis '{sweep_axis}'", key='sweep_axis')

    if text is None and path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"{ERROR_MESSAGES['missing_file']}: {config_path}")
        text = config_path.read_text(encoding='utf-8')
    text = text or ""

    raw = dotenv_values(stream=io.StringIO(text))
    lines = _key_lines(text)

    data: Dict[str, Any] = {}
    sweeps = dict(DEFAULT_SWEEPS)
    for key, value in raw.items():
        if key not in CONFIG_KEYS:
            suggestion = suggest_key(key)
            hint = f"; did you mean '{suggestion}'?" if suggestion else ""
            raise ConfigError(f"{ERROR_MESSAGES['unknown_key']}{hint}", key=key, line=lines.get(key))
        model_path, parser, convert = CONFIG_KEYS[key]
        try:
            parsed = parser(value if value is not None else "")
            if convert is not None:
                parsed = convert(parsed)
        except ValueError as e:
            raise ConfigError(f"{ERROR_MESSAGES['bad_value']} '{value}': {e}", key=key, line=lines.get(key)) from e

        if key in ('antenna_sweep', 'device_sweep'):
            sweeps['antennas' if key == 'antenna_sweep' else 'devices'] = parsed
        else:
            _set_path(data, model_path, parsed)

    data['sweep_axis'] = sweep_axis
    data['sweep_values'] = sweeps[sweep_axis]

    try:
        config = ExperimentConfig(**data)
    except ValidationError as e:
        first = e.errors()[0]
        location = tuple(first.get('loc', ()))
        key = _key_for_location(location)
        if key is None and location and location[0] == 'sweep_values':
            key = 'antenna_sweep' if sweep_axis == 'antennas' else 'device_sweep'
        raise ConfigError(
            f"{ERROR_MESSAGES['invalid_value']}: {first.get('msg', e)}", key=key, line=lines.get(key) if key else None
        ) from e

    logger.info("Configuration loaded and validated successfully.")
    return config
