"""
Parameter processing utilities for the command line.

Centralizes type conversion of override values, dotted-key overrides and
loading of the YAML run configuration, so every subcommand validates its
configuration the same way.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml
from pydantic import ValidationError

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from src.models import ConfigError, PipelineConfig
from src.settings import get_settings

TRUE_WORDS = ("true", "1", "yes", "on")
FALSE_WORDS = ("false", "0", "no", "off")


def _label(key: Optional[str]) -> str:
    return f"Override '{key}'" if key else "Override value"


def safe_int_conversion(value: Union[str, int, None], key: str = None) -> Optional[int]:
    """
    Integer config value such as mf.dim, align.k or seed.

    Quoted strings ('"8"') are unquoted first. Booleans are rejected even
    though Python treats them as ints.

    Raises:
        ValueError: Naming the dotted key when the value is not an integer
    """
    if value is None:
        return None
    if isinstance(value, bool):
        raise ValueError(f"{_label(key)} expects a count, got a boolean")
    if isinstance(value, int):
        return value
    cleaned = str(value).strip().strip('"').strip("'")
    try:
        return int(cleaned)
    except ValueError:
        raise ValueError(f"{_label(key)} expects an integer, got '{value}'")


def safe_float_conversion(value: Union[str, float, int, None], key: str = None) -> Optional[float]:
    """Penalties, rates and ratios; scientific notation ("1e-3") is accepted"""
    if value is None:
        return None
    if isinstance(value, bool):
        raise ValueError(f"{_label(key)} expects a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(str(value).strip().strip('"').strip("'"))
    except ValueError:
        raise ValueError(f"{_label(key)} expects a number, got '{value}'")


def safe_bool_conversion(value: Union[str, bool, None], key: str = None) -> Optional[bool]:
    """Stage toggles and flags: stages.s2d=off, slim.nonnegative=yes"""
    if value is None or isinstance(value, bool):
        return value
    lowered = str(value).strip().strip('"').strip("'").lower()
    if lowered in TRUE_WORDS:
        return True
    if lowered in FALSE_WORDS:
        return False
    raise ValueError(f"{_label(key)} expects one of {', '.join(TRUE_WORDS + FALSE_WORDS)}, got '{value}'")


def safe_list_conversion(value: Union[str, Sequence, None], key: str = None) -> Optional[List[Any]]:
    """
    Convert "[1,3,5]" or "1,3,5" to a list of parsed scalars.

    Raises:
        ValueError: If an element cannot be parsed
    """
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return list(value)
    cleaned = str(value).strip()
    if cleaned.startswith("[") and cleaned.endswith("]"):
        cleaned = cleaned[1:-1]
    if not cleaned.strip():
        return []
    return [parse_value(part, key) for part in cleaned.split(",")]


def parse_value(raw: str, key: str = None) -> Any:
    """
    Parse an override value: booleans, integers, floats, null and lists are
    recognized; anything else stays a string.
    """
    cleaned = raw.strip()
    lowered = cleaned.lower()
    if lowered in ("null", "none", "~"):
        return None
    if lowered in TRUE_WORDS + FALSE_WORDS and not lowered.isdigit():
        return safe_bool_conversion(cleaned, key)
    if cleaned.startswith("[") or ("," in cleaned and not cleaned.startswith(("'", '"'))):
        return safe_list_conversion(cleaned, key)
    try:
        return safe_int_conversion(cleaned, key)
    except ValueError:
        pass
    try:
        return safe_float_conversion(cleaned, key)
    except ValueError:
        pass
    try:
        loaded = yaml.safe_load(cleaned)
    except yaml.YAMLError:
        return cleaned.strip('"').strip("'")
    return loaded if loaded is not None else cleaned


def parse_override(override: str) -> Tuple[List[str], Any]:
    """
    Split "section.key=value" into (["section", "key"], parsed value).

    Raises:
        ConfigError: If the override is malformed
    """
    if "=" not in override:
        raise ConfigError(f"Override '{override}' must have the form key=value")
    key, raw = override.split("=", 1)
    keys = [part.strip() for part in key.strip().split(".")]
    if not all(keys):
        raise ConfigError(f"Override key '{key}' is malformed")
    try:
        return keys, parse_value(raw, key.strip())
    except ValueError as e:
        raise ConfigError(str(e))


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply dotted-key overrides to a nested configuration dictionary.

    Returns:
        A new dictionary; the input is not modified
    """
    result = json.loads(json.dumps(data))
    for override in overrides or []:
        keys, value = parse_override(override)
        node = result
        for key in keys[:-1]:
            child = node.get(key)
            if child is None:
                child = node[key] = {}
            elif not isinstance(child, dict):
                raise ConfigError(f"Override '{override}': '{key}' is not a section")
            node = child
        node[keys[-1]] = value
    return result


def read_config_file(path: Union[str, Path, None]) -> Dict[str, Any]:
    """
    Raises:
        ConfigError: If the file is missing or not a YAML mapping
    """
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping of sections")
    return data


def load_pipeline_config(path: Union[str, Path, None] = None, overrides: Sequence[str] = (),
                         seed: Optional[int] = None, threads: Optional[int] = None,
                         out: Optional[str] = None) -> PipelineConfig:
    """
    Build the validated run configuration from a YAML file, overrides and
    the dedicated command-line flags (which take precedence).

    Raises:
        ConfigError: If the configuration does not validate
    """
    settings = get_settings()
    data = apply_overrides(read_config_file(path), overrides)
    data.setdefault("threads", settings.threads)
    data.setdefault("out_dir", str(Path(settings.runs_dir) / "default"))
    if settings.gram_budget_mb is not None:
        data.setdefault("slim", {})["gram_budget_mb"] = settings.gram_budget_mb
    if seed is not None:
        data["seed"] = safe_int_conversion(seed, "seed")
        data.setdefault("mf", {})["seed"] = data["seed"]
    if threads is not None:
        data["threads"] = safe_int_conversion(threads, "threads")
    if out is not None:
        data["out_dir"] = str(out)
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}")


HASH_EXCLUDED = {"out_dir", "threads"}


def config_hash(cfg: PipelineConfig) -> str:
    """
    SHA-256 of the canonical JSON form of a configuration.

    The output directory and thread count leave results unchanged and are
    not hashed.
    """
    canonical = json.dumps(cfg.model_dump(mode="json", exclude=HASH_EXCLUDED), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def config_from_args(args: Any) -> PipelineConfig:
    """Run configuration from the common command-line flags"""
    return load_pipeline_config(
        getattr(args, "config", None),
        getattr(args, "override", None) or (),
        seed=getattr(args, "seed", None),
        threads=getattr(args, "threads", None),
        out=getattr(args, "out", None),
    )
