"""Shared payload -> pose path used by ``infer``, ``eval`` and the network service."""
from __future__ import annotations

import time

import numpy as np
import torch

from . import formats
from .checkpoint import load_model
from .errors import ContractError, DomainError
from .geometry import NormalizationStats, Pose, minmax_invert, quat_canonicalize, quat_normalize
from .image import AugmentConfig, normalize_imagenet, preprocess_image, resize_bilinear
from .lidar import CROP_RADIUS, NUM_POINTS, BevConfig, bev_histogram, sample_points


def decode_payload(modality: str, data: bytes) -> np.ndarray:
    if modality == "image":
        return formats.decode_ppm(data)
    return formats.decode_cloud(data)


def read_payload(modality: str, path: str) -> np.ndarray:
    return formats.read_ppm(path) if modality == "image" else formats.read_cloud(path)


def prepare_input(modality: str, raw: np.ndarray, size: int = 256, seed=0,
                  bev: BevConfig | None = None, crop_radius: float = CROP_RADIUS,
                  augment: AugmentConfig | None = None) -> torch.Tensor:
    """Raw image or cloud -> one model input tensor (no batch axis)."""
    if modality == "image":
        if size == 256:
            x = preprocess_image(raw, augment, seed)
        else:
            x = normalize_imagenet(resize_bilinear(raw, size))
    elif modality == "bev":
        cfg = bev or BevConfig()
        if cfg.cells != size:
            cfg = BevConfig(cfg.extent, size, cfg.z_split, cfg.cap, cfg.x_offset, cfg.y_offset)
        x = bev_histogram(raw, cfg)
    elif modality == "points":
        x = sample_points(raw, seed=seed, k=NUM_POINTS, r=crop_radius)
    else:
        raise ContractError(f"unknown modality {modality!r}")
    return torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))


def decode_output(stats: NormalizationStats, position, quaternion) -> Pose:
    p = minmax_invert(stats, np.asarray(position, dtype=np.float64))
    q = np.asarray(quaternion, dtype=np.float64)
    if not np.all(np.isfinite(q)) or not np.linalg.norm(q) > 1e-12:
        raise DomainError(f"model produced a degenerate quaternion {q.tolist()}")
    return Pose(p, quat_canonicalize(quat_normalize(q)))


class PoseEstimator:
    """A loaded model plus everything needed to turn payload bytes into a map-frame pose.

    Read-only after construction; safe to call from several threads.
    """

    def __init__(self, model, stats: NormalizationStats, seed: int = 0,
                 bev: BevConfig | None = None, crop_radius: float = CROP_RADIUS):
        self.model = model.eval()
        self.stats = stats
        self.seed = seed
        self.bev = bev
        self.crop_radius = crop_radius

    @classmethod
    def from_checkpoint(cls, path: str, **kw) -> "PoseEstimator":
        model, _, stats, _ = load_model(path)
        return cls(model, stats, **kw)

    @property
    def modality(self) -> str:
        return self.model.cfg.modality

    def check_modality(self, modality: str) -> None:
        if modality != self.modality:
            raise ContractError(f"payload modality {modality!r} does not match the loaded "
                                f"{self.modality!r} checkpoint")

    def prepare(self, raw: np.ndarray) -> torch.Tensor:
        return prepare_input(self.modality, raw, self.model.cfg.input_size, self.seed,
                             self.bev, self.crop_radius)

    def estimate_raw(self, raw: np.ndarray) -> tuple[Pose, float]:
        """Returns (pose, inference milliseconds)."""
        t0 = time.perf_counter()
        x = self.prepare(raw).unsqueeze(0)
        with torch.no_grad():
            pos, quat = self.model(x)
        pose = decode_output(self.stats, pos[0].double().numpy(), quat[0].double().numpy())
        return pose, (time.perf_counter() - t0) * 1000.0

    def estimate_bytes(self, modality: str, data: bytes) -> tuple[Pose, float]:
        self.check_modality(modality)
        return self.estimate_raw(decode_payload(modality, data))

    def estimate_file(self, path: str, modality: str | None = None) -> tuple[Pose, float]:
        modality = modality or self.modality
        self.check_modality(modality)
        return self.estimate_raw(read_payload(modality, path))
