"""
Tool settings for cvar-filter.

Supports loading configuration from multiple locations, merged with precedence:
1. /etc/cvar-filter/config.yaml or config.json (lowest priority)
2. ~/.config/cvar-filter/config.yaml or config.json
3. ./cvar-filter.yaml or ./cvar-filter.json (highest priority)

All found config files are merged, with later files overriding earlier ones.
YAML is checked before JSON at each location. Environment variables
(CVAR_FILTER_*) have the highest priority.

These are solver and filter tolerances, verification limits and output
locations.  What is simulated (system, barrier, confidence level, seeds) lives
in scenario documents, see :mod:`cvar_filter.scenario_config`.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import os
from pathlib import Path
from typing import Any

import yaml

from .barrier import DEFAULT_NODE_BUDGET, DEFAULT_VERIFY_TOLERANCE
from .qp import SolverSettings
from .safety_filter import DccpOptions, FilterSettings

# Config filenames for current working directory (project-local config).
CONFIG_FILENAMES = ["cvar-filter.yaml", "cvar-filter.json"]
# Config filenames for system/user config directories (already namespaced by directory)
CONFIG_USER_FILENAMES = ["config.yaml", "config.json"]
ENV_PREFIX = "CVAR_FILTER_"

DEFAULTS: dict[str, Any] = {
    "solver": {"max_iter": 10000, "tol": 1e-10, "kkt_tol": 1e-6, "feas_tol": 1e-8},
    "filter": {"safe_margin_tol": 1e-7, "backoff": 1e-8, "fallback_interference_weight": 1e-6},
    # unset: the scenario document decides; set: overrides every scenario
    "dccp": {"max_iters": None, "stationarity_tol": None},
    "verify": {"node_budget": DEFAULT_NODE_BUDGET, "tolerance": DEFAULT_VERIFY_TOLERANCE},
    "output": {"dir": "runs"},
    "log_level": "WARNING",
}


def _get_config_dirs() -> list[Path]:
    """Get list of config directories to search, in merge order (lowest priority first)."""
    return [
        Path("/etc/cvar-filter"),
        Path.home() / ".config" / "cvar-filter",
        Path.cwd(),
    ]


def find_config_files() -> list[Path]:
    """Find all existing config files, in merge order (lowest priority first).

    At each location only the first found file (YAML before JSON) is included.
    """
    found_files = []
    for dir_path in _get_config_dirs():
        filenames = CONFIG_FILENAMES if dir_path == Path.cwd() else CONFIG_USER_FILENAMES
        for filename in filenames:
            path = dir_path / filename
            if path.exists():
                found_files.append(path)
                break
    return found_files


def _deep_merge(base: dict, override: dict) -> dict:
    """Deep merge override into base dict, modifying base in place."""
    for key, value in override.items():
        if key in base and isinstance(base[key], dict) and isinstance(value, dict):
            _deep_merge(base[key], value)
        else:
            base[key] = value
    return base


def _load_config_file(path: Path) -> dict[str, Any]:
    """Load a single YAML or JSON config file.

    Raises:
        yaml.YAMLError: If a YAML config file is malformed.
        json.JSONDecodeError: If a JSON config file is malformed.
    """
    with open(path, encoding="utf-8") as f:
        if path.suffix in (".yaml", ".yml"):
            return yaml.safe_load(f) or {}
        return json.load(f)


def load_config(path: Path | None = None) -> dict[str, Any]:
    """Load config from file(s), merging with defaults.

    If path is provided, only that file is loaded (plus defaults and
    environment variables). Otherwise all standard locations are merged.
    """
    config = copy.deepcopy(DEFAULTS)
    paths = ([path] if path.exists() else []) if path is not None else find_config_files()
    for config_path in paths:
        _deep_merge(config, _load_config_file(config_path))
    _apply_env_overrides(config)
    return config


def _apply_env_overrides(config: dict[str, Any]) -> None:
    """Apply CVAR_FILTER_<KEY> environment overrides; nested keys use ``__``.

    e.g. ``CVAR_FILTER_SOLVER__MAX_ITER=500``
    """
    for key, value in os.environ.items():
        if key.startswith(ENV_PREFIX):
            _set_nested_value(config, key[len(ENV_PREFIX) :].lower(), value)


def _set_nested_value(config: dict, key: str, value: str) -> None:
    """Set a nested config value using double-underscore notation."""
    parts = key.split("__")
    target = config
    for part in parts[:-1]:
        if not isinstance(target.get(part), dict):
            target[part] = {}
        target = target[part]
    target[parts[-1]] = _convert_value(value)


def _convert_value(value: str) -> Any:
    """Convert string value to bool, int or float where possible."""
    if value.lower() in ("true", "yes"):
        return True
    if value.lower() in ("false", "no"):
        return False
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    return value


def get_config_value(config: dict[str, Any], key: str, default: Any = None) -> Any:
    """Get a config value using dot notation, e.g. ``solver.max_iter``."""
    target = config
    for part in key.split("."):
        if isinstance(target, dict) and part in target:
            target = target[part]
        else:
            return default
    return target


class Config:
    """Configuration holder with typed accessors for the solver stack."""

    def __init__(self, path: Path | None = None):
        if path is not None:
            self._paths = [path] if path.exists() else []
        else:
            self._paths = find_config_files()
        self._data = load_config(path)

    @property
    def path(self) -> Path | None:
        """Return the highest-priority loaded config file, or None."""
        return self._paths[-1] if self._paths else None

    @property
    def paths(self) -> list[Path]:
        return self._paths.copy()

    @property
    def data(self) -> dict[str, Any]:
        return self._data

    def get(self, key: str, default: Any = None) -> Any:
        if default is None:
            default = get_config_value(DEFAULTS, key)
        return get_config_value(self._data, key, default)

    @property
    def solver_settings(self) -> SolverSettings:
        return SolverSettings(
            max_iter=int(self.get("solver.max_iter")),
            tol=float(self.get("solver.tol")),
            kkt_tol=float(self.get("solver.kkt_tol")),
            feas_tol=float(self.get("solver.feas_tol")),
        )

    @property
    def filter_settings(self) -> FilterSettings:
        return FilterSettings(
            safe_margin_tol=float(self.get("filter.safe_margin_tol")),
            backoff=float(self.get("filter.backoff")),
            fallback_interference_weight=float(self.get("filter.fallback_interference_weight")),
        )

    def dccp_options(self, base: DccpOptions | None = None) -> DccpOptions:
        """Scenario DCCP options with any configured iteration limits applied."""
        base = base or DccpOptions()
        max_iters = self.get("dccp.max_iters")
        stationarity_tol = self.get("dccp.stationarity_tol")
        return dataclasses.replace(
            base,
            max_iters=base.max_iters if max_iters is None else int(max_iters),
            stationarity_tol=base.stationarity_tol if stationarity_tol is None else float(stationarity_tol),
        )

    @property
    def node_budget(self) -> int:
        return int(self.get("verify.node_budget"))

    @property
    def verify_tolerance(self) -> float:
        return float(self.get("verify.tolerance"))

    @property
    def output_dir(self) -> Path:
        return Path(self.get("output.dir"))

    @property
    def log_level(self) -> str:
        return str(self.get("log_level")).upper()
