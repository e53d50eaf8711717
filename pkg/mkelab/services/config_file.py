"""Flat ``key=value`` experiment config files.

Dotted keys address nested fields (``transform.kind=input_gaussian``,
``optimizer.learning_rate=0.001``, ``sweep.strengths.dropout=0,0.5,0.8``);
comma-separated values fill list fields; ``#`` starts a comment. Later
assignments (and ``--set`` overrides) win over earlier ones.
"""

import logging
import types
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin

from pydantic import BaseModel, ValidationError
from rapidfuzz import fuzz, process

from mkelab.models.schemas import ExperimentConfig
from mkelab.services.mke import ConfigError


logger = logging.getLogger(__name__)

SUGGESTION_CUTOFF = 60


def _unwrap(annotation: Any) -> Any:
    """Strip Optional[...] from an annotation."""
    if get_origin(annotation) in (Union, types.UnionType):
        args = [a for a in get_args(annotation) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return annotation


def _is_model(annotation: Any) -> bool:
    return isinstance(annotation, type) and issubclass(annotation, BaseModel)


def _is_optional(annotation: Any) -> bool:
    return get_origin(annotation) in (Union, types.UnionType) and type(None) in get_args(annotation)


def known_keys(model: type[BaseModel] = ExperimentConfig, prefix: str = "") -> list[str]:
    """Every dotted key a config file may assign."""
    keys = []
    for name, info in model.model_fields.items():
        annotation = _unwrap(info.annotation)
        path = f"{prefix}{name}"
        if _is_model(annotation):
            keys.extend(known_keys(annotation, f"{path}."))
        elif get_origin(annotation) is dict:
            key_type, _ = get_args(annotation)
            if isinstance(key_type, type) and issubclass(key_type, Enum):
                keys.extend(f"{path}.{member.value}" for member in key_type)
        elif get_origin(annotation) is list and _is_model(get_args(annotation)[0]):
            continue  # nested model lists (composite transforms) are not flat-addressable
        else:
            keys.append(path)
    return keys


def _suggest(query: str, choices: list[str]) -> str:
    match = process.extractOne(query, choices, scorer=fuzz.WRatio, score_cutoff=SUGGESTION_CUTOFF)
    return f" (did you mean '{match[0]}'?)" if match else ""


def _resolve(key: str) -> Any:
    """Annotation of the field a dotted key addresses; None if unknown."""
    annotation: Any = ExperimentConfig
    for part in key.split("."):
        if _is_model(annotation):
            field = annotation.model_fields.get(part)
            if field is None:
                return None
            annotation = field.annotation
        elif get_origin(_unwrap(annotation)) is dict:
            key_type, value_type = get_args(_unwrap(annotation))
            if issubclass(key_type, Enum) and part not in {m.value for m in key_type}:
                return None
            annotation = value_type
        else:
            return None
        if _is_model(_unwrap(annotation)):
            annotation = _unwrap(annotation)
    return annotation


def parse_lines(lines: list[str], source: str = "<config>") -> dict[str, str]:
    """
    Parse ``key=value`` lines into a flat mapping.

    Raises:
        ConfigError: If a line has no '=' or an empty key
    """
    values: dict[str, str] = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{line_no}: empty key")
        values[key] = value
    return values


def _coerce(key: str, value: str, annotation: Any) -> Any:
    if value == "" and _is_optional(annotation):
        return None
    target = _unwrap(annotation)
    if get_origin(target) is list:
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def _set_path(tree: dict, key: str, value: Any) -> None:
    node = tree
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _translate(error: ValidationError) -> ConfigError:
    """Turn a pydantic error into a ConfigError naming the offending field."""
    problems = []
    for item in error.errors():
        field = ".".join(str(p) for p in item["loc"]) or "config"
        message = item["msg"]
        hint = ""
        lookup = ".".join(str(p) for p in item["loc"] if not isinstance(p, int))
        annotation = _unwrap(_resolve(lookup)) if lookup else None
        if get_origin(annotation) is list:
            annotation = get_args(annotation)[0]
        if isinstance(annotation, type) and issubclass(annotation, Enum) and isinstance(item.get("input"), str):
            hint = _suggest(item["input"], [m.value for m in annotation])
        problems.append(f"{field}: {message}{hint}")
    return ConfigError("invalid config: " + "; ".join(problems))


def build_config(values: dict[str, str]) -> ExperimentConfig:
    """
    Validate a flat key/value mapping into an ExperimentConfig.

    Raises:
        ConfigError: If a key is unknown or a value is invalid
    """
    tree: dict = {}
    keys = known_keys()
    for key, value in values.items():
        annotation = _resolve(key)
        if annotation is None or _is_model(_unwrap(annotation)):
            raise ConfigError(f"unknown config key '{key}'{_suggest(key, keys)}")
        _set_path(tree, key, _coerce(key, value, annotation))

    try:
        return ExperimentConfig.model_validate(tree)
    except ValidationError as e:
        raise _translate(e)


def load_config(path: Optional[str | Path] = None, overrides: Optional[list[str]] = None) -> ExperimentConfig:
    """
    Read a config file (optional) and apply ``key=value`` overrides on top.

    Raises:
        ConfigError: If the file is unreadable, a key is unknown or a value
            is invalid
    """
    values: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        values.update(parse_lines(text.splitlines(), str(path)))
    if overrides:
        values.update(parse_lines(list(overrides), "--set"))

    cfg = build_config(values)
    logger.info(f"Config loaded ({len(values)} keys), hash {cfg.config_hash()[:12]}")
    return cfg
