"""
Run Settings
Layered configuration: field defaults, then .env / environment, then a flat
`key = value` file, then command-line flags
"""

import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import logging

from dotenv import find_dotenv, load_dotenv
from pydantic import ValidationError

from backend.features.model.config import RunConfig, SyntheticParams
from backend.features.utils.errors import InputError

logger = logging.getLogger(__name__)

# Environment variables and the RunConfig field each one sets
ENV_KEYS = {
    "GRIDGNN_THREADS": "threads",
    "GRIDGNN_COLLECTIVE_TIMEOUT": "collective_timeout",
}

# Flat keys that configure the synthetic generator
SYNTHETIC_KEYS = {
    "synthetic_n": "n",
    "avg_degree": "avg_degree",
    "d_in": "d_in",
    "classes": "n_classes",
    "feature_signal": "feature_signal",
}

DATASET_FILES = {
    "graph": "graph.txt",
    "features": "features.sgnf",
    "labels": "labels.sgnl",
    "split": "split.sgns",
}


def known_keys() -> set:
    return (set(RunConfig.model_fields) - {"synthetic"}) | set(SYNTHETIC_KEYS)


def read_config_file(path) -> Dict[str, str]:
    """
    Parse a `key = value` file; `#` starts a comment, blank lines are skipped

    Raises:
        InputError: missing file, a line without `=`, or an unknown key
    """
    path = Path(path)
    if not path.is_file():
        raise InputError("config file not found", path=str(path))
    values = {}
    allowed = known_keys()
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"expected 'key = value', got {raw.strip()!r}", path=str(path), offset=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in allowed:
            raise InputError(f"unknown config key {key!r}", path=str(path), offset=lineno)
        values[key] = value
    return values


def load_env_file() -> None:
    """Load the nearest .env above the working directory; set variables win"""
    load_dotenv(find_dotenv(usecwd=True))


def env_values(env: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """Settings taken from the process environment (after loading .env)"""
    if env is None:
        load_env_file()
        env = os.environ
    return {field: env[name] for name, field in ENV_KEYS.items() if env.get(name)}


def build_run_config(
    cli_values: Optional[Mapping[str, Any]] = None,
    config_path=None,
    env: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """
    Merge every source into a validated RunConfig

    Args:
        cli_values: Flag values; None entries mean "not given"
        config_path: Optional `key = value` file
        env: Environment mapping; the real environment if None

    Raises:
        InputError: unknown keys or values that fail validation
    """
    merged: Dict[str, Any] = dict(env_values(env))
    if config_path is not None:
        merged.update(read_config_file(config_path))
    merged.update({k: v for k, v in (cli_values or {}).items() if v is not None})

    unknown = set(merged) - known_keys()
    if unknown:
        raise InputError(f"unknown setting(s): {', '.join(sorted(unknown))}")

    synthetic = {SYNTHETIC_KEYS[k]: merged.pop(k) for k in list(merged) if k in SYNTHETIC_KEYS}
    try:
        if synthetic:
            merged["synthetic"] = SyntheticParams(**synthetic)
        return RunConfig(**merged)
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "config"
        raise InputError(f"invalid {location}: {first['msg']}") from exc


def dataset_paths(directory) -> Dict[str, Path]:
    directory = Path(directory)
    return {name: directory / filename for name, filename in DATASET_FILES.items()}
