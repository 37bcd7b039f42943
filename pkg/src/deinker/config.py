"""Structured pipeline configuration.

One YAML file with a section per pipeline stage; every default here equals
the default declared by the owning module, and a test enforces that. Unknown
keys are rejected so typos fail loudly. CLI flags override file values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .classifier import ClassifierConfig
from .dataset import SamplerConfig
from .errors import ConfigError
from .ink import HueRule, InkThresholds
from .model import ModelConfig
from .training import TrainConfig


@dataclass(frozen=True)
class InkSection:
    darkness_max: int = 90
    green_hue: tuple = (70.0, 170.0)
    green_sat_min: float = 0.25
    green_val_max: float = 0.95
    blue_hue: tuple = (190.0, 260.0)
    blue_sat_min: float = 0.25
    blue_val_max: float = 0.95
    close_radius: int = 2
    min_area: int = 64
    downsample: int = 8

    def thresholds(self) -> InkThresholds:
        return InkThresholds(
            darkness_max=self.darkness_max,
            green=HueRule(self.green_hue[0], self.green_hue[1], self.green_sat_min, self.green_val_max),
            blue=HueRule(self.blue_hue[0], self.blue_hue[1], self.blue_sat_min, self.blue_val_max),
            close_radius=self.close_radius,
            min_area=self.min_area,
        )


@dataclass(frozen=True)
class SamplerSection:
    patch_size: int = 128
    total_patches: int = 250_000
    marker_fraction: float = 0.5
    background_cap: float = 0.25
    tissue_threshold: float = 0.05
    balance_tolerance: float = 0.01
    val_slides: tuple = ()
    test_slides: tuple = ()

    def sampler_config(self, seed: int) -> SamplerConfig:
        return SamplerConfig(
            patch_size=self.patch_size,
            total_patches=self.total_patches,
            marker_fraction=self.marker_fraction,
            background_cap=self.background_cap,
            tissue_threshold=self.tissue_threshold,
            balance_tolerance=self.balance_tolerance,
            seed=seed,
            val_slides=tuple(self.val_slides),
            test_slides=tuple(self.test_slides),
        )


@dataclass(frozen=True)
class ModelSection:
    base_filters: int = 64
    residual_blocks: int = 6
    disc_base_filters: int = 64
    disc_layers: int = 3
    lambda_cyc: float = 10.0
    full_cyclegan: bool = False

    def model_config(self) -> ModelConfig:
        return ModelConfig(**asdict(self))


@dataclass(frozen=True)
class TrainingSection:
    epochs: int = 150
    batch_size: int = 64
    gen_optimizer: str = "adam"
    gen_lr: float = 2e-4
    disc_optimizer: str = "sgd"
    disc_lr: float = 1e-4
    augment_flips: bool = True
    checkpoint_every: int = 10
    deterministic: bool = True
    fake_buffer_size: int = 0

    def train_config(self, seed: int, max_steps: int | None = None) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            gen_optimizer=self.gen_optimizer,
            gen_lr=self.gen_lr,
            disc_optimizer=self.disc_optimizer,
            disc_lr=self.disc_lr,
            augment_flips=self.augment_flips,
            seed=seed,
            checkpoint_every=self.checkpoint_every,
            max_steps=max_steps,
            deterministic=self.deterministic,
            fake_buffer_size=self.fake_buffer_size,
        )


@dataclass(frozen=True)
class RestoreSection:
    tile: int = 128
    stride: int = 100
    batch: int = 32


@dataclass(frozen=True)
class EvaluationSection:
    classifier_depth: int = 18
    classifier_epochs: int = 100
    classifier_batch: int = 128
    classifier_lr: float = 1e-4
    classifier_input_size: int = 128
    nuclei_min_area: int = 40
    nuclei_peak_min_distance: int = 5

    def classifier_config(self, seed: int) -> ClassifierConfig:
        return ClassifierConfig(
            depth=self.classifier_depth,
            epochs=self.classifier_epochs,
            batch_size=self.classifier_batch,
            lr=self.classifier_lr,
            input_size=self.classifier_input_size,
            seed=seed,
        )


@dataclass(frozen=True)
class BlindtestSection:
    n: int = 100
    patch_size: int = 500
    port: int = 8008
    data_dir: str = "blindtest-data"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    ink: InkSection = field(default_factory=InkSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    restore: RestoreSection = field(default_factory=RestoreSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    blindtest: BlindtestSection = field(default_factory=BlindtestSection)


_SECTIONS = {
    "ink": InkSection,
    "sampler": SamplerSection,
    "model": ModelSection,
    "training": TrainingSection,
    "restore": RestoreSection,
    "evaluation": EvaluationSection,
    "blindtest": BlindtestSection,
}


def _build_section(cls, data: dict, section_name: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{section_name}]: {sorted(unknown)}")
    coerced = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(value)
        coerced[f.name] = value
    return cls(**coerced)


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - (set(_SECTIONS) | {"seed"})
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs = {"seed": int(data.get("seed", 0))}
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        if section is None:
            section = {}
        if not isinstance(section, dict):
            raise ConfigError(f"section [{name}] must be a mapping")
        kwargs[name] = _build_section(cls, section, name)
    return PipelineConfig(**kwargs)


def config_to_dict(config: PipelineConfig) -> dict:
    def plain(value):
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        return value

    out: dict = {"seed": config.seed}
    for name in _SECTIONS:
        section = getattr(config, name)
        out[name] = {f.name: plain(getattr(section, f.name)) for f in fields(type(section))}
    return out


def load_config(path: str | Path) -> PipelineConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data or {})


def dump_config(config: PipelineConfig | None = None) -> str:
    config = config or PipelineConfig()
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)
