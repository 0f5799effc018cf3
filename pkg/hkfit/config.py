"""
Settings for hkfit
Loads hkfit_config.yaml (solver defaults, design policy, experiment presets)
and environment overrides from .env / the process environment.
"""

import copy
import logging
import os
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

from hkfit.errors import InvalidParameterError
from hkfit.solvers import SolverConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "hkfit_config.yaml")
THREADS_ENV_VAR = "HKFIT_THREADS"

DEFAULT_SETTINGS: Dict[str, Any] = {
    "solver": {
        "max_iter": 50000,
        "rel_tol": 1e-10,
        "kkt_tol": 1e-6,
        "lipschitz_power_iters": 50,
        "restart": True,
    },
    "design": {
        "max_candidates": 10000,
        "max_grid_cells": 4000000,
    },
    "monotonicity_tol": 1e-9,
    "threads": 1,
    "presets": {},
}


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_settings(path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load settings from YAML, layered over the built-in defaults

    Args:
        path: YAML file; defaults to the packaged hkfit_config.yaml

    Returns:
        Settings dict with 'solver', 'design', 'monotonicity_tol', 'threads', 'presets'
    """
    path = path or DEFAULT_CONFIG_PATH
    try:
        with open(path, "r") as f:
            loaded = yaml.safe_load(f) or {}
    except FileNotFoundError:
        logger.error(f"Configuration file not found: {path}")
        loaded = {}
    if not isinstance(loaded, dict):
        raise InvalidParameterError(f"configuration file {path} must contain a mapping")
    return _merge(DEFAULT_SETTINGS, loaded)


def solver_config(settings: Optional[Dict[str, Any]] = None, **overrides) -> SolverConfig:
    """Build a SolverConfig from settings['solver'] plus non-None overrides"""
    settings = settings if settings is not None else load_settings()
    values = dict(settings.get("solver", {}))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SolverConfig(
        max_iter=int(values["max_iter"]),
        rel_tol=float(values["rel_tol"]),
        kkt_tol=float(values["kkt_tol"]),
        lipschitz_power_iters=int(values["lipschitz_power_iters"]),
        restart=bool(values["restart"]),
    )


def get_preset(name: str, settings: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Return a copy of a named experiment preset"""
    settings = settings if settings is not None else load_settings()
    presets = settings.get("presets", {})
    if name not in presets:
        known = ", ".join(sorted(presets)) or "none"
        raise InvalidParameterError(f"unknown preset '{name}' (known: {known})")
    return copy.deepcopy(presets[name])


def trial_threads(settings: Optional[Dict[str, Any]] = None) -> int:
    """Worker count for simulation trials; HKFIT_THREADS wins over the settings file"""
    load_dotenv()
    settings = settings if settings is not None else load_settings()
    default = max(1, int(settings.get("threads", 1)))
    raw = os.getenv(THREADS_ENV_VAR)
    if raw is None or raw.strip() == "":
        return default
    try:
        threads = int(raw)
    except ValueError:
        logger.warning(f"Ignoring {THREADS_ENV_VAR}={raw!r}: not an integer")
        return default
    if threads < 1:
        logger.warning(f"Ignoring {THREADS_ENV_VAR}={raw!r}: must be at least 1")
        return default
    return threads
