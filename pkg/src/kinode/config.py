"""Experiment configuration: one YAML document for every tunable.

The file carries the encoder, vector-field, decoder, and training configs,
the fold count, an optional default data path, and the synthetic-generator
settings, each section mapping onto its dataclass. Missing sections or
keys take the documented defaults; unknown keys are rejected so typos
cannot silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .decoder import DecoderConfig
from .dynamics import VectorFieldConfig
from .encoder import EncoderConfig
from .model import ModelConfigs
from .synth import SynthConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """An experiment config file is malformed."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs besides the data itself."""

    model: ModelConfigs = ModelConfigs()
    train: TrainConfig = TrainConfig()
    synth: SynthConfig = SynthConfig()
    n_folds: int = 10
    data: str | None = None

    def __post_init__(self) -> None:
        if self.n_folds < 1:
            raise ValueError("need at least one fold")


_SECTION_TYPES = {
    "encoder": EncoderConfig,
    "vector_field": VectorFieldConfig,
    "decoder": DecoderConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
}
_TOP_LEVEL_KEYS = set(_SECTION_TYPES) | {"n_folds", "data"}

_TUPLE_KEYS = {"hidden_dims", "joint_names", "linear_matrix"}


def _build_section(cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    valid = {f.name for f in fields(cls)}
    unknown = set(data) - valid
    if unknown:
        raise ConfigError(
            f"unknown keys in section {section!r}: {sorted(unknown)}"
        )
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_KEYS and isinstance(value, list):
            value = tuple(
                tuple(v) if isinstance(v, list) else v for v in value
            )
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"section {section!r}: {err}") from None


def experiment_config_from_dict(data: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed YAML mapping."""
    if not isinstance(data, dict):
        raise ConfigError("experiment config must be a mapping")
    unknown = set(data) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    sections = {
        name: _build_section(cls, data.get(name, {}) or {}, name)
        for name, cls in _SECTION_TYPES.items()
    }
    try:
        model = ModelConfigs(
            encoder=sections["encoder"],
            vector_field=sections["vector_field"],
            decoder=sections["decoder"],
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None
    data_path = data.get("data")
    return ExperimentConfig(
        model=model,
        train=sections["train"],
        synth=sections["synth"],
        n_folds=int(data.get("n_folds", 10)),
        data=None if data_path is None else str(data_path),
    )


def experiment_config_to_dict(config: ExperimentConfig) -> dict:
    """Full dict form with every hyperparameter spelled out."""
    return {
        "encoder": asdict(config.model.encoder),
        "vector_field": asdict(config.model.vector_field),
        "decoder": asdict(config.model.decoder),
        "train": asdict(config.train),
        "synth": asdict(config.synth),
        "n_folds": config.n_folds,
        "data": config.data,
    }


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Read an experiment config file; missing path means all defaults."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text())
    if data is None:
        data = {}
    return experiment_config_from_dict(data)


def save_experiment_config(config: ExperimentConfig, path: str | Path) -> None:
    """Write the fully explicit YAML form of a config."""
    body = experiment_config_to_dict(config)
    for section in _SECTION_TYPES:
        body[section] = _listed(body[section])
    Path(path).write_text(yaml.safe_dump(body, sort_keys=True))


def _listed(section: dict) -> dict:
    """YAML-friendly copy: tuples become lists."""
    out = {}
    for key, value in section.items():
        if isinstance(value, tuple):
            value = [list(v) if isinstance(v, tuple) else v for v in value]
        out[key] = value
    return out


def config_hash(config: ExperimentConfig) -> str:
    """Stable content hash of a config, for run manifests."""
    body = experiment_config_to_dict(config)
    for section in _SECTION_TYPES:
        body[section] = _listed(body[section])
    canonical = yaml.safe_dump(body, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
