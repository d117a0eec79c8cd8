"""Configuration objects for the generator, detector, and experiment loop.

Configs round-trip through plain dicts (and YAML files on disk). The config
hash is computed over a canonical JSON form with sorted keys, so reordering
keys in a config file does not change the hash.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

STRATEGIES = ("committee", "random", "entropy", "coreset")


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for the synthetic shapes benchmark.

    Images carry one drawing channel plus two pure-noise channels. A
    ``hard_fraction`` subset is object-rich (many small, possibly overlapping
    shapes on heavy clutter); the rest carry few large shapes on light
    clutter, so acquisition strategies have signal to separate.
    """

    image_size: int = 96
    num_classes: int = 3
    channels: int = 3
    max_objects: int = 6
    min_object_area: float = 64.0
    hard_fraction: float = 0.3
    easy_object_range: tuple[int, int] = (0, 2)
    hard_object_range: tuple[int, int] = (3, 6)
    easy_size_range: tuple[float, float] = (26.0, 48.0)
    hard_size_range: tuple[float, float] = (12.0, 26.0)
    easy_clutter_range: tuple[float, float] = (0.0, 0.25)
    hard_clutter_range: tuple[float, float] = (0.4, 0.9)
    max_overlap_iou: float = 0.4
    background_level: float = 0.1
    pixel_noise: float = 0.02

    def validate(self) -> None:
        if self.num_classes < 3:
            raise ValueError("need at least 3 shape classes")
        if self.max_objects < 0:
            raise ValueError("max_objects must be >= 0")
        for lo, hi in (self.easy_size_range, self.hard_size_range):
            if lo * lo < self.min_object_area:
                raise ValueError(
                    f"min size {lo} gives area {lo * lo} below min_object_area "
                    f"{self.min_object_area}"
                )
            if hi >= self.image_size - 2:
                raise ValueError(f"max size {hi} does not fit a {self.image_size}px image")


@dataclass(frozen=True)
class AnchorConfig:
    """Anchor pyramid: per-level stride and box sizes, shared aspect ratios."""

    strides: tuple[int, ...] = (8, 16)
    sizes: tuple[tuple[float, ...], ...] = ((11.0, 16.0, 22.0), (30.0, 42.0, 60.0))
    ratios: tuple[float, ...] = (1.0,)

    @property
    def anchors_per_cell(self) -> int:
        per_level = {len(s) * len(self.ratios) for s in self.sizes}
        if len(per_level) != 1:
            raise ValueError("every level must define the same number of anchors per cell")
        return per_level.pop()


@dataclass(frozen=True)
class DetectorConfig:
    """Architecture of the small two-level detector and its committee."""

    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    num_classes: int = 3
    committee_size: int = 3
    stem_channels: tuple[int, int, int, int] = (16, 32, 64, 64)
    head_channels: int = 32
    background_bias: float = 2.0
    positive_iou: float = 0.5
    negative_iou: float = 0.4
    score_threshold: float = 0.05
    nms_iou: float = 0.5
    max_detections: int = 100

    @property
    def num_outputs(self) -> int:
        # foreground classes plus explicit background
        return self.num_classes + 1


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one seeded active-learning run needs."""

    seed: int = 0
    dataset_seed: int = 0
    num_images: int = 500
    test_fraction: float = 0.2
    initial_fraction: float = 0.05
    budget_per_cycle: int = 25
    num_cycles: int = 6
    strategy: str = "committee"
    committee_size: int = 3
    top_instances: int = 50
    lambda_discrepancy: float = 1.0
    gamma_weight: float = 1.0
    weighted_discrepancy: bool = True
    weighted_selection: bool = False
    epochs_labeled: int = 20
    epochs_unlabeled: int = 4
    batch_size: int = 8
    warm_start: bool = False
    interleave_phases: bool = False
    probe_size: int = 32
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if not 0.0 < self.initial_fraction < 1.0:
            raise ValueError("initial_fraction must lie in (0, 1)")
        if self.budget_per_cycle <= 0:
            raise ValueError("budget_per_cycle must be positive")
        if self.strategy == "committee" and self.committee_size < 2:
            raise ValueError("committee strategy needs at least 2 members")
        if self.top_instances < 1:
            raise ValueError("top_instances must be >= 1")
        if self.lambda_discrepancy <= 0:
            raise ValueError("lambda_discrepancy must be positive")
        if self.gamma_weight <= 0:
            raise ValueError("gamma_weight must be positive")
        if self.num_cycles < 0:
            raise ValueError("num_cycles must be >= 0")
        self.generator.validate()

    @property
    def strategy_label(self) -> str:
        """Directory-friendly name; the unweighted committee ablation gets a suffix."""
        if self.strategy == "committee" and not self.weighted_discrepancy:
            return "committee_unweighted"
        return self.strategy

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return dataclasses.replace(self, **kwargs)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _from_dict(cls, data: dict):
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in fields:
            raise ValueError(f"unknown config key {key!r} for {cls.__name__}")
        ftype = fields[key].type
        if key == "optimizer":
            value = _from_dict(OptimizerConfig, value)
        elif key == "detector":
            value = _from_dict(DetectorConfig, value)
        elif key == "generator":
            value = _from_dict(GeneratorConfig, value)
        elif key == "anchors":
            value = _from_dict(AnchorConfig, value)
        else:
            value = _tuplify(value)
        del ftype
        kwargs[key] = value
    return cls(**kwargs)


def config_to_dict(config) -> dict:
    return _to_plain(config)


def experiment_config_from_dict(data: dict) -> ExperimentConfig:
    config = _from_dict(ExperimentConfig, data)
    config.validate()
    return config


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return experiment_config_from_dict(data)


def save_config(config, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(config), fh, sort_keys=True)


def config_hash(config) -> str:
    """Stable hex digest of a config, independent of key ordering."""
    canonical = json.dumps(_to_plain(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
