"""Run configuration: a sectioned key-value file merged over the toy defaults.

Format is INI-style (configparser). Scalar values are plain literals;
structured values (layer schedules) are JSON. Unknown sections or keys are
rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, fields
from typing import Optional

from .model import (
    DiscriminatorConfig,
    GeneratorConfig,
    SaLayerSpec,
    toy_discriminator_config,
    toy_generator_config,
    toy_segment_discriminator_config,
)
from .train import TrainConfig


class ConfigError(ValueError):
    """Raised for unknown keys or malformed values in a run config."""


@dataclass
class RunConfig:
    train: TrainConfig
    generator: GeneratorConfig
    discriminator: DiscriminatorConfig
    segment: DiscriminatorConfig
    dataset_path: Optional[str] = None


_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)}
_GEN_KEYS = {"noise_dim", "point_schedule", "mlp_widths", "seed_feature_dim",
             "interpolation_k"}
_DISC_KEYS = {"layers", "head_widths"}
_DATA_KEYS = {"dataset"}


def _parse_scalar(raw: str, kind: str):
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _parse_layers(raw: str):
    try:
        spec = json.loads(raw)
        return tuple(
            SaLayerSpec(centroids=entry[0], radii=tuple(entry[1]),
                        samples=tuple(entry[2]), widths=_tupled(entry[3]))
            for entry in spec)
    except (json.JSONDecodeError, ValueError, TypeError, IndexError) as exc:
        raise ConfigError(f"bad SA layer spec: {exc}") from exc


def _disc_from_section(section, base: DiscriminatorConfig) -> DiscriminatorConfig:
    kwargs = {"layers": base.layers, "head_widths": base.head_widths}
    for key, raw in section.items():
        if key not in _DISC_KEYS:
            raise ConfigError(f"unknown discriminator key {key!r}")
        if key == "layers":
            kwargs["layers"] = _parse_layers(raw)
        else:
            kwargs["head_widths"] = _tupled(json.loads(raw))
    return DiscriminatorConfig(**kwargs)


def load_run_config(path: Optional[str] = None,
                    overrides: Optional[dict] = None) -> RunConfig:
    """Read a config file (all sections optional) on top of the toy defaults."""
    parser = configparser.ConfigParser()
    if path is not None:
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file {path!r} not found")

    known = {"train", "generator", "discriminator", "segment_discriminator",
             "data"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    train_kwargs = {}
    if parser.has_section("train"):
        for key, raw in parser.items("train"):
            if key not in _TRAIN_KEYS:
                raise ConfigError(f"unknown train key {key!r}")
            kind = str(_TRAIN_KEYS[key])
            train_kwargs[key] = _parse_scalar(
                raw, "bool" if "bool" in kind else
                "int" if "int" in kind else "float")
    for key, value in (overrides or {}).items():
        if value is not None:
            train_kwargs[key] = value
    try:
        train_cfg = TrainConfig(**train_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    gen_base = toy_generator_config(train_cfg.d, train_cfg.w)
    gen_kwargs = {f.name: getattr(gen_base, f.name)
                  for f in fields(GeneratorConfig)}
    if parser.has_section("generator"):
        for key, raw in parser.items("generator"):
            if key not in _GEN_KEYS:
                raise ConfigError(f"unknown generator key {key!r}")
            if key in ("point_schedule", "mlp_widths"):
                gen_kwargs[key] = _tupled(json.loads(raw))
            else:
                gen_kwargs[key] = int(raw)
    gen_kwargs["x_max"] = train_cfg.d
    gen_kwargs["y_halfwidth"] = train_cfg.w
    try:
        gen_cfg = GeneratorConfig(**gen_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    try:
        disc_cfg = _disc_from_section(
            parser["discriminator"] if parser.has_section("discriminator")
            else {}, toy_discriminator_config())
        seg_cfg = _disc_from_section(
            parser["segment_discriminator"]
            if parser.has_section("segment_discriminator")
            else {}, toy_segment_discriminator_config())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    dataset_path = None
    if parser.has_section("data"):
        for key, raw in parser.items("data"):
            if key not in _DATA_KEYS:
                raise ConfigError(f"unknown data key {key!r}")
            dataset_path = raw.strip()

    return RunConfig(train=train_cfg, generator=gen_cfg,
                     discriminator=disc_cfg, segment=seg_cfg,
                     dataset_path=dataset_path)
