"""Run configuration: one JSON document covering every tunable, unknown keys rejected."""
from __future__ import annotations

import json
import os
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import FormatError
from .image import AugmentConfig
from .lidar import BevConfig
from .model import AprConfig
from .service import DEFAULT_COVARIANCE, DEFAULT_PORT
from .training import TrainConfig
from .data import SyntheticWorldConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    d_model: int = 128
    heads: int = 4
    layers: int = 6
    ffn: int = 256
    dropout: float = 0.1
    input_size: int = 256
    backbone_channels: list[int] = [16, 24, 40, 80, 112]
    d_feat: int = 128
    sa1_widths: list[int] = [32, 32, 64]
    sa2_widths: list[int] = [64, 64, 128]
    point_radii: list[float] = [0.1, 0.25]
    nsample: int = 32


class TrainSection(_Section):
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 5e-4
    epochs: int = 300
    lr_period: int = 50
    lr_factor: float = 0.5
    checkpoint_every: int = 0
    s_x_init: float = 0.0
    s_q_init: float = -3.0


class AugmentSection(_Section):
    enabled: bool = False
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.05


class LidarSection(_Section):
    crop_radius: float = 20.0
    bev_extent: float = 32.0
    bev_z_split: float = 0.0
    bev_cap: float | None = 32.0
    bev_x_offset: float = 0.0
    bev_y_offset: float = 0.0


class SynthSection(_Section):
    extent_x: float = 100.0
    extent_y: float = 100.0
    height: float = 8.0
    landmarks: int = 2000
    frames: int = 64
    test_frames: int = 16
    sensor_height: float = 1.8


class ServiceSection(_Section):
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    covariance: list[float] = Field(default=list(DEFAULT_COVARIANCE), min_length=6, max_length=6)


class RunConfig(_Section):
    seed: int = 0
    modality: Literal["image", "bev", "points"] = "image"
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    augment: AugmentSection = AugmentSection()
    lidar: LidarSection = LidarSection()
    synth: SynthSection = SynthSection()
    service: ServiceSection = ServiceSection()

    def apr_config(self) -> AprConfig:
        return AprConfig(modality=self.modality, **self.model.model_dump())

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.train.model_dump())

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(**self.augment.model_dump())

    def bev_config(self) -> BevConfig:
        lc = self.lidar
        return BevConfig(extent=lc.bev_extent, cells=self.model.input_size, z_split=lc.bev_z_split,
                         cap=lc.bev_cap, x_offset=lc.bev_x_offset, y_offset=lc.bev_y_offset)

    def synth_config(self) -> SyntheticWorldConfig:
        return SyntheticWorldConfig(seed=self.seed, sensor_radius=self.lidar.crop_radius,
                                    **self.synth.model_dump())


def _describe(e: ValidationError) -> str:
    return "; ".join(f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors())


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file at ``path``, then ``overrides`` (top-level keys)."""
    doc: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                doc = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise FormatError(f"{path}: config must be a JSON object")
    for key, value in (overrides or {}).items():
        section, _, leaf = key.partition(".")
        if leaf:
            doc.setdefault(section, {})[leaf] = value
        else:
            doc[key] = value
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as e:
        raise FormatError(f"invalid config{f' {path}' if path else ''}: {_describe(e)}") from None


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.model_dump(), indent=2, sort_keys=True)
