"""YAML run configuration."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .geometry import AbsorptionRanges


@dataclass
class DataConfig:
    rooms: int = 20
    positions: int = 5
    corpus_dir: str | None = None  # None selects synthetic speech
    synthetic_clip_seconds: float = 4.0
    splits: tuple = (0.8, 0.1, 0.1)
    snr_static: tuple = (70.0, 90.0)
    snr_diffuse: tuple = (30.0, 60.0)
    max_order: int = 10
    n_rays: int = 2000
    rir_cap_s: float = 5.0
    detector_radius: float = 0.1
    speed_of_sound: float = 343.0
    write_rirs: bool = True
    ssn_fit_clips: int = 32
    absorption: dict = field(default_factory=dict)

    @property
    def absorption_ranges(self):
        return AbsorptionRanges.from_dict(self.absorption)


@dataclass
class ModelConfig:
    channels: int = 8
    kernel_size: int = 11
    sc_dilations: tuple = (1, 2, 4)
    ic_dilations: tuple = (1,)
    sc_pool: int = 104
    ic_pool: int = 52
    hidden: tuple = (96, 48)
    conv_dropout: float = 0.2
    dense_dropout: float = 0.4
    use_ic: bool = True


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 120
    max_epochs: int = 150
    patience: int = 15
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    crop_frames: int | None = None  # random time crop per batch; None trains on full clips
    eval_batch_size: int = 32


@dataclass
class Config:
    seed: int = 0
    threads: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        sections = {"data": DataConfig, "model": ModelConfig, "train": TrainConfig}
        kwargs = {}
        for key, value in d.items():
            if key in sections:
                kwargs[key] = _build(sections[key], value)
            elif key in ("seed", "threads"):
                kwargs[key] = int(value)
            else:
                raise ValueError(f"unknown config key {key!r}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def save(self, path):
        Path(path).write_text(yaml.safe_dump(_plain(self.to_dict()), sort_keys=False))


def _build(cls, values):
    names = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in (values or {}).items():
        if key not in names:
            raise ValueError(f"unknown {cls.__name__} key {key!r}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
