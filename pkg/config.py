"""
Configuration settings for FiLM World
Environment-level settings (data root, run root, workers, log level) come from
the process environment or a .env file next to this module. Experiment-level
settings come from a run-config JSON document merged over DEFAULT_RUN_CONFIG.

Usage:
    from config import Config, load_run_config

    Config.validate()
    data_dir = Config.resolve_data_path('existential')
    run_config = load_run_config('experiments/relational.json')
"""

import os
import json
import copy
import logging
from pathlib import Path
from dotenv import load_dotenv

from errors import ConfigError

# --- Explicitly load .env from the project root directory ---
env_path = Path(__file__).resolve().parent / '.env'
loaded = load_dotenv(dotenv_path=env_path)

logger = logging.getLogger(__name__)

if not loaded:
    logger.debug(f"Could not load .env from: {env_path}")
    env_path_alt = Path(__file__).resolve().parent / '_env'
    loaded = load_dotenv(dotenv_path=env_path_alt)
    if loaded:
        logger.info(f"Loaded environment from fallback: {env_path_alt}")


class Config:
    """Process-wide settings"""

    # ── Locations ──
    # FILMWORLD_DATA is the default root for dataset names passed to --data.
    DATA_ROOT = os.getenv('FILMWORLD_DATA', 'data')
    RUNS_ROOT = os.getenv('FILMWORLD_RUNS', 'runs')

    # ── Generation ──
    GENERATE_WORKERS = os.getenv('FILMWORLD_WORKERS', '1')

    # ── Logging ──
    LOG_LEVEL = os.getenv('FILMWORLD_LOG_LEVEL', 'INFO').upper()

    @classmethod
    def workers(cls):
        return int(cls.GENERATE_WORKERS)

    @classmethod
    def resolve_data_path(cls, name_or_path):
        """
        Resolve a --data argument. An existing path wins; otherwise the name is
        looked up under DATA_ROOT.
        """
        candidate = Path(name_or_path)
        if candidate.exists() or candidate.is_absolute():
            return candidate
        return Path(cls.DATA_ROOT) / candidate

    @classmethod
    def validate(cls):
        """Validate env-derived values. Raises ConfigError on the first bad one."""
        problems = []
        try:
            if cls.workers() < 1:
                problems.append(f"FILMWORLD_WORKERS must be >= 1, got {cls.GENERATE_WORKERS}")
        except ValueError:
            problems.append(f"FILMWORLD_WORKERS is not an integer: {cls.GENERATE_WORKERS!r}")
        if cls.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR'):
            problems.append(f"FILMWORLD_LOG_LEVEL must be DEBUG/INFO/WARNING/ERROR, got {cls.LOG_LEVEL}")

        if problems:
            logger.error("=" * 60)
            logger.error("Invalid environment configuration!")
            for problem in problems:
                logger.error(f"   {problem}")
            logger.error(f"   Expected .env location: {env_path}")
            logger.error("=" * 60)
            raise ConfigError('; '.join(problems))

        logger.debug(f"Config validated. DATA_ROOT={cls.DATA_ROOT} RUNS_ROOT={cls.RUNS_ROOT} "
                     f"workers={cls.workers()}")
        return True


# ═══════════════════════════════════════════════════════════════
# Run configuration
# ═══════════════════════════════════════════════════════════════

# Every key a run-config JSON may contain, with its default. Leaves typed
# None accept any JSON value (used for the optional mix section).
DEFAULT_RUN_CONFIG = {
    'scene': {
        'count_sets': [1, 2, 3, 4, 6, 7, 8, 9, 11, 12, 13, 14],
        'min_size': 0.1,
        'max_size': 0.25,
        'placement_attempts': 1000,
    },
    'split': {
        'train': 20000,
        'val': 2000,
        'test': 2000,
        'withheld_counts': [5, 10, 15],
        'withheld_combos': [['square', 'red'], ['triangle', 'green'], ['circle', 'blue'],
                            ['rectangle', 'yellow'], ['cross', 'magenta'], ['ellipse', 'cyan']],
        'test_withheld_rate': 0.5,
        'max_overlap': 0.25,
        'seed': 0,
        'image_size': 64,
        'supersample': 2,
        'caption_attempts': 100,
        'scene_attempts': 100,
    },
    'mix': None,
    'film': {
        'cnn_channels': 128,
        'cnn_layers': 6,
        'resblocks': 4,
        'resblock_channels': 128,
        'embed_dim': 64,
        'gru_hidden': 256,
        'proj_dim': 512,
        'classifier_hidden': 1024,
        'use_coordinate_maps': True,
        'image_size': 64,
    },
    'baseline': {
        'cnn_channels': 64,
        'embed_dim': 64,
        'lstm_hidden': 256,
        'mlp_hidden': 512,
        'glimpses': 2,
        'attention_dim': 256,
        'image_size': 64,
    },
    'schedule': {
        'iterations': 100000,
        'batch_size': 64,
        'eval_sample_size': None,
        'eval_batch_size': 256,
        'deterministic': True,
        'checkpoint_at_eval': False,
        'seed': 0,
    },
    'optimizer': {
        'lr': 3e-4,
        'beta1': 0.9,
        'beta2': 0.999,
        'eps': 1e-8,
        'weight_decay': 1e-5,
    },
}


def _check_leaf(path, value, default):
    if default is None:
        return
    if value is None and path.endswith('eval_sample_size'):
        return
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected boolean, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected list, got {value!r}")


def _merge(defaults, overrides, path):
    if not isinstance(overrides, dict):
        raise ConfigError(f"{path or 'run config'}: expected an object, got {overrides!r}")
    unknown = sorted(set(overrides) - set(defaults))
    if unknown:
        raise ConfigError(f"{path or 'run config'}: unknown key(s) {', '.join(unknown)}; "
                          f"allowed: {', '.join(sorted(defaults))}")
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        here = f"{path}.{key}" if path else key
        default = defaults[key]
        if isinstance(default, dict):
            merged[key] = _merge(default, value, here)
        else:
            _check_leaf(here, value, default)
            merged[key] = copy.deepcopy(value)
    return merged


def merge_run_config(overrides):
    """Merge a run-config document over the defaults, rejecting unknown keys."""
    return _merge(DEFAULT_RUN_CONFIG, overrides or {}, '')


def load_run_config(path=None):
    """Load and validate a run-config JSON file. No path gives the defaults."""
    if path is None:
        return copy.deepcopy(DEFAULT_RUN_CONFIG)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})")
    config = merge_run_config(document)
    logger.info(f"Config: loaded run config from {path}")
    return config
