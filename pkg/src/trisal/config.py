"""Run configuration: YAML loading with a strict schema (unknown keys are
rejected with file/line positions) and `key.path=value` overrides."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .data import FixtureConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .model import ModelConfig, TrainConfig

_SCALAR = (int, float, str, bool)

# key -> expected type; dict values are nested schemas, `list` accepts any
# YAML sequence (element validation happens in the dataclass constructors).
SCHEMA: dict[str, Any] = {
    "seed": int,
    "sigma": float,
    "model": {
        "preset": str,
        "input_size": list,
        "common_width": int,
        "base_widths": list,
        "streams": list,
        "main_modality": str,
        "fusion_mode": str,
        "mam_levels": list,
        "hmap_levels": list,
    },
    "train": {
        "steps": int,
        "batch_size": int,
        "lr_backbone": float,
        "lr_head": float,
        "momentum": float,
        "weight_decay": float,
        "augment": bool,
        "crop_min_ratio": float,
    },
    "data": {
        "root": str,
        "manifest": str,
    },
    "fixtures": {
        "clips": int,
        "frames_per_clip": int,
        "height": int,
        "width": int,
        "speed": int,
    },
}


@dataclass
class RunConfig:
    """One resolved CLI invocation: raw config plus provenance."""

    command: str
    values: dict[str, Any]
    config_path: Path | None
    output_dir: Path
    seed: int
    overrides: tuple[str, ...] = ()


def _key_lines(path: Path | None) -> dict[str, int]:
    """Maps dotted key paths to 1-based line numbers in the YAML source."""
    if path is None:
        return {}
    try:
        with open(path) as f:
            root = yaml.compose(f)
    except OSError:
        return {}
    lines: dict[str, int] = {}

    def walk(node, prefix):
        if not isinstance(node, yaml.MappingNode):
            return
        for key_node, value_node in node.value:
            dotted = f"{prefix}{key_node.value}"
            lines[dotted] = key_node.start_mark.line + 1
            walk(value_node, dotted + ".")

    if root is not None:
        walk(root, "")
    return lines


def _type_ok(value, expected) -> bool:
    if expected is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if expected is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if expected is list:
        return isinstance(value, list)
    return isinstance(value, expected)


def validate_config(values: dict[str, Any], path: Path | None = None) -> None:
    """Rejects unknown keys and scalar type mismatches against SCHEMA."""
    lines = _key_lines(path)
    where = str(path) if path else "<config>"

    def fail(dotted, message):
        line = lines.get(dotted)
        location = f"{where}:{line}" if line else where
        raise ConfigError(f"{location}: {message}")

    def walk(mapping, schema, prefix):
        if not isinstance(mapping, dict):
            fail(prefix.rstrip("."), f"'{prefix.rstrip('.')}' must be a mapping")
        for key, value in mapping.items():
            dotted = f"{prefix}{key}"
            if key not in schema:
                fail(dotted, f"unknown config key '{dotted}'")
            expected = schema[key]
            if isinstance(expected, dict):
                walk(value or {}, expected, dotted + ".")
            elif not _type_ok(value, expected):
                fail(dotted, f"'{dotted}' expects {expected.__name__}, "
                             f"got {type(value).__name__} ({value!r})")

    walk(values, SCHEMA, "")


def apply_override(values: dict[str, Any], spec: str) -> None:
    """Applies one `key.path=value` override; the value is parsed as YAML."""
    if "=" not in spec:
        raise ConfigError(f"override '{spec}' is not of the form key=value")
    dotted, _, raw = spec.partition("=")
    keys = dotted.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override '{spec}': unparseable value ({exc})") from exc
    target = values
    for key in keys[:-1]:
        target = target.setdefault(key, {})
        if not isinstance(target, dict):
            raise ConfigError(f"override '{spec}': '{key}' is not a mapping")
    target[keys[-1]] = value


def load_run_config(config_path: str | Path | None,
                    overrides: tuple[str, ...] = ()) -> dict[str, Any]:
    """Loads, overrides, and validates a config file (or empty defaults)."""
    path = Path(config_path) if config_path else None
    if path is not None:
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as f:
            try:
                values = yaml.safe_load(f) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    else:
        values = {}
    for spec in overrides:
        apply_override(values, spec)
    validate_config(values, path)
    return values


def build_model_config(values: dict[str, Any], seed: int) -> ModelConfig:
    m = values.get("model", {}) or {}
    encoder = EncoderConfig(
        scale_preset=m.get("preset", "toy"),
        input_size=tuple(m.get("input_size", (64, 64))),
        common_width=m.get("common_width"),
        base_widths=tuple(m["base_widths"]) if "base_widths" in m else None,
    )
    return ModelConfig(
        encoder=encoder,
        enabled_streams=tuple(m.get("streams", ("rgb", "depth", "flow"))),
        main_modality=m.get("main_modality", "rgb"),
        fusion_mode=m.get("fusion_mode", "progressive"),
        mam_levels=tuple(m.get("mam_levels", (3, 4, 5))),
        hmap_levels=tuple(m.get("hmap_levels", (1, 2, 3))),
        seed=seed,
    )


def build_train_config(values: dict[str, Any], seed: int) -> TrainConfig:
    t = dict(values.get("train", {}) or {})
    return TrainConfig(seed=seed, **t)


def build_fixture_config(values: dict[str, Any]) -> FixtureConfig:
    f = dict(values.get("fixtures", {}) or {})
    return FixtureConfig(**f)


def resolve_seed(values: dict[str, Any], cli_seed: int | None) -> int:
    if cli_seed is not None:
        return cli_seed
    return int(values.get("seed", 0))
