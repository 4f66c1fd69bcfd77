"""Run configuration: YAML sections, dotted-key overrides, effective echo.

A run config has seven sections (generator, critics, losses, train, data,
nse, ssl), each backed by a dataclass with working defaults. Files only
need to mention what they change. Command-line overrides use dotted keys
(``train.lr_g=2e-4``) and must reference existing keys, so typos fail fast
instead of silently training with defaults. Every entry point writes the
fully resolved config back out for provenance.
"""

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .critics import PERCEPTUAL_LAYERS, RANDOM_WEIGHTS
from .data_pipeline import DatasetSpec
from .errors import ConfigError
from .generator import GeneratorConfig
from .losses import LossWeights
from .nse import NSEConfig
from .ssl_pretext import SSLOptConfig
from .trainer import TrainConfig


@dataclass
class CriticsConfig:
    perceptual_layer: str = "conv5_4"
    perceptual_weights: str = RANDOM_WEIGHTS
    hr_patch_size: int = 0  # 0: derive from data.lr_patch * data.scale

    def validate(self) -> None:
        if self.perceptual_layer not in PERCEPTUAL_LAYERS:
            raise ConfigError(
                f"perceptual_layer must be one of {sorted(PERCEPTUAL_LAYERS)}, "
                f"got {self.perceptual_layer!r}"
            )
        if self.hr_patch_size < 0:
            raise ConfigError("hr_patch_size must be >= 0")


@dataclass
class DataConfig:
    root: str = "data"
    split: str = "train"
    hr_subdir: str = "HR"
    lr_subdir: str = "LRx4"
    cache_lr: bool = False
    scale: int = 4
    batch_size: int = 15
    lr_patch: int = 32
    augment: bool = True

    def to_spec(self) -> DatasetSpec:
        return DatasetSpec(root=Path(self.root), split=self.split,
                           hr_subdir=self.hr_subdir, lr_subdir=self.lr_subdir,
                           cache_lr=self.cache_lr, scale=self.scale)

    def validate(self) -> None:
        self.to_spec().validate()
        if self.batch_size < 1 or self.lr_patch < 1:
            raise ConfigError("batch_size and lr_patch must be positive")


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    critics: CriticsConfig = field(default_factory=CriticsConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    nse: NSEConfig = field(default_factory=NSEConfig)
    ssl: SSLOptConfig = field(default_factory=SSLOptConfig)

    def hr_patch_size(self) -> int:
        if self.critics.hr_patch_size:
            return self.critics.hr_patch_size
        return self.data.lr_patch * self.data.scale

    def validate(self) -> None:
        for section in fields(self):
            getattr(self, section.name).validate()


def default_config() -> RunConfig:
    return RunConfig()


def _build_section(cls, name: str, values: dict, base):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key {name}.{unknown[0]} in config")
    merged = asdict(base)
    merged.update(values)
    return cls(**merged)


def load_config(path: Optional[str] = None) -> RunConfig:
    """Read a YAML run config; missing sections and keys keep defaults."""
    config = default_config()
    if path is None:
        return config
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if raw is None:
        return config
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a mapping of sections")
    section_types = {f.name: type(getattr(config, f.name)) for f in fields(config)}
    for name, values in raw.items():
        if name not in section_types:
            raise ConfigError(f"unknown config section {name!r}; "
                              f"expected one of {sorted(section_types)}")
        if not isinstance(values, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        setattr(config, name,
                _build_section(section_types[name], name, values, getattr(config, name)))
    return config


def apply_overrides(config: RunConfig, assignments: list[str]) -> RunConfig:
    """Apply ``section.key=value`` strings; values parse as YAML scalars."""
    config = copy.deepcopy(config)
    section_names = {f.name for f in fields(config)}
    for text in assignments:
        if "=" not in text:
            raise ConfigError(f"override {text!r} is not of the form section.key=value")
        dotted, _, raw_value = text.partition("=")
        if "." not in dotted:
            raise ConfigError(f"override key {dotted!r} needs a section prefix")
        section_name, _, key = dotted.partition(".")
        if section_name not in section_names:
            raise ConfigError(f"unknown config section {section_name!r} in override {text!r}")
        section = getattr(config, section_name)
        if key not in {f.name for f in fields(section)}:
            raise ConfigError(f"unknown config key {dotted!r} in override {text!r}")
        try:
            value = yaml.safe_load(raw_value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw_value!r}: {exc}") from exc
        current = getattr(section, key)
        if isinstance(value, str) and not isinstance(current, bool):
            # YAML leaves dot-less exponent forms like 5e-4 as strings;
            # coerce by the field's current type so numbers stay numbers.
            try:
                if isinstance(current, float):
                    value = float(value)
                elif isinstance(current, int):
                    value = int(value)
            except ValueError:
                pass
        setattr(section, key, value)
    return config


def effective_config_dict(config: RunConfig) -> dict:
    """Plain nested dict of the resolved config (tuples become lists)."""
    def clean(value):
        if isinstance(value, dict):
            return {k: clean(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [clean(v) for v in value]
        return value
    return clean(asdict(config))


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(effective_config_dict(config), sort_keys=True,
                          default_flow_style=None)


def config_from_echo(echo: dict) -> RunConfig:
    """Rebuild a RunConfig from a checkpoint's config echo (best effort:
    sections absent from the echo fall back to defaults)."""
    config = default_config()
    for name in {f.name for f in fields(config)} & set(echo):
        values = echo[name]
        if isinstance(values, dict):
            setattr(config, name,
                    _build_section(type(getattr(config, name)), name, values,
                                   getattr(config, name)))
    return config
