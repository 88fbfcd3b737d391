"""Run configuration: one JSON document with six sections.

Resolution order, lowest to highest: built-in defaults, the config file,
``LEAFSCOPE_<SECTION>_<KEY>`` environment variables, command-line flags.
Everything is validated before any file is written.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .augment import AugmentConfig
from .errors import ConfigError
from .imgproc import PreprocessConfig
from .model import BACKBONES
from .trainer import TrainConfig

ENV_PREFIX = "LEAFSCOPE_"


@dataclass(frozen=True)
class DatasetSection:
    root: str = ""
    ratio: float = 0.8
    val_ratio: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.ratio < 1:
            raise ConfigError(f"dataset.ratio must be in (0, 1), got {self.ratio}")
        if not 0 <= self.val_ratio < 1 or self.ratio + self.val_ratio >= 1:
            raise ConfigError(f"dataset.val_ratio {self.val_ratio} leaves no test partition")


@dataclass(frozen=True)
class PreprocessSection(PreprocessConfig):
    cache: bool = False

    def stages(self) -> PreprocessConfig:
        return PreprocessConfig(**{f.name: getattr(self, f.name) for f in dataclasses.fields(PreprocessConfig)})


@dataclass(frozen=True)
class AugmentSection(AugmentConfig):
    enabled: bool = True
    materialize: bool = False
    augment_eval: bool = False

    def policy(self) -> AugmentConfig:
        return AugmentConfig(**{f.name: getattr(self, f.name) for f in dataclasses.fields(AugmentConfig)})


@dataclass(frozen=True)
class ModelSection:
    backbone: str = "densenet201"
    pretrained: bool = True
    dropout_rate: float = 0.3
    weights_path: str | None = None

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"model.backbone {self.backbone!r} unknown; choose from {sorted(BACKBONES)}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"model.dropout_rate must be in [0, 1), got {self.dropout_rate}")


@dataclass(frozen=True)
class OutputSection:
    run_dir: str = "runs/default"


SECTIONS: dict[str, type] = {
    "dataset": DatasetSection,
    "preprocess": PreprocessSection,
    "augment": AugmentSection,
    "model": ModelSection,
    "train": TrainConfig,
    "output": OutputSection,
}


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputSection = field(default_factory=OutputSection)

    @property
    def run_dir(self) -> Path:
        return Path(self.output.run_dir)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


def _coerce(section: str, key: str, value: Any, default: Any) -> Any:
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigError(f"{where} must be a list of {len(default)} numbers, got {value!r}")
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    return value  # None defaults accept anything JSON can carry


def build_config(doc: Mapping[str, Mapping[str, Any]]) -> RunConfig:
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    sections = {}
    for name, cls in SECTIONS.items():
        raw = doc.get(name, {}) or {}
        if not isinstance(raw, Mapping):
            raise ConfigError(f"section {name!r} must be an object")
        defaults = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        bad = sorted(set(raw) - known)
        if bad:
            raise ConfigError(f"unknown key(s) in {name}: {', '.join(bad)}")
        kwargs = {k: _coerce(name, k, v, getattr(defaults, k)) for k, v in raw.items()}
        try:
            sections[name] = cls(**kwargs)
        except ConfigError as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    return RunConfig(**sections)


def _parse_env_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    out: dict[str, dict] = {}
    for var, text in environ.items():
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):].lower()
        for section in SECTIONS:
            if rest.startswith(section + "_"):
                out.setdefault(section, {})[rest[len(section) + 1:]] = _parse_env_value(text)
                break
        else:
            raise ConfigError(f"environment variable {var} does not name a config section")
    return out


def merge(*docs: Mapping) -> dict:
    out: dict[str, dict] = {}
    for doc in docs:
        for section, values in doc.items():
            if isinstance(values, Mapping):
                out.setdefault(section, {}).update(values)
            else:
                out[section] = values
    return out


def load_config(path: str | Path | None, flags: Mapping | None = None,
                environ: Mapping[str, str] | None = None) -> RunConfig:
    file_doc: dict = {}
    if path is not None:
        try:
            file_doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(file_doc, dict):
            raise ConfigError("config file must hold a JSON object")
    return build_config(merge(file_doc, env_overrides(environ), flags or {}))
