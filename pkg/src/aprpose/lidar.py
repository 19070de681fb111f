"""LiDAR preprocessing.

Two representations are produced from an ego-frame cloud (x forward,
y left, z up; columns x, y, z, intensity):

* a 2 x 256 x 256 bird's-eye-view histogram split into a low and a high
  height bin, and
* 4096 farthest-point-sampled points carrying absolute and centered
  coordinates (4096 x 6).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError

NUM_POINTS = 4096
CROP_RADIUS = 20.0


def check_cloud(cloud: np.ndarray) -> np.ndarray:
    cloud = np.asarray(cloud)
    if cloud.ndim != 2 or cloud.shape[1] != 4:
        raise ContractError(f"point cloud must be N x 4, got shape {cloud.shape}")
    return cloud


def crop_radius(cloud: np.ndarray, r: float = CROP_RADIUS) -> np.ndarray:
    if not r > 0:
        raise DomainError(f"crop radius must be positive, got {r}")
    cloud = check_cloud(cloud)
    xyz = cloud[:, :3].astype(np.float64)
    keep = np.sqrt((xyz * xyz).sum(axis=1)) <= r
    return cloud[keep]


def farthest_point_sample(cloud: np.ndarray, k: int = NUM_POINTS, seed=None,
                          start: int | None = None) -> np.ndarray:
    """Greedy farthest point sampling; returns k indices into ``cloud``.

    The first index comes from ``start`` if given, else from a seeded draw.
    Ties go to the lowest index. If the cloud has fewer than k points, every
    point is taken and the rest are seeded draws with replacement.
    """
    cloud = check_cloud(cloud)
    n = cloud.shape[0]
    if n == 0:
        raise DomainError("farthest point sampling needs a non-empty cloud")
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n)) if start is None else int(start)
    if not 0 <= first < n:
        raise DomainError(f"start index {first} outside [0, {n})")

    xyz = cloud[:, :3].astype(np.float64)
    picks = min(k, n)
    out = np.empty(picks, dtype=np.int64)
    out[0] = first
    mind = np.full(n, np.inf)
    taken = np.zeros(n, dtype=bool)
    taken[first] = True
    last = first
    for i in range(1, picks):
        dx = xyz[:, 0] - xyz[last, 0]
        dy = xyz[:, 1] - xyz[last, 1]
        dz = xyz[:, 2] - xyz[last, 2]
        mind = np.minimum(mind, dx * dx + dy * dy + dz * dz)
        last = int(np.argmax(np.where(taken, -1.0, mind)))
        taken[last] = True
        out[i] = last
    if k > n:
        out = np.concatenate([out, rng.integers(n, size=k - n)])
    return out


def build_point_features(cloud: np.ndarray, indices, r: float = CROP_RADIUS) -> np.ndarray:
    """Selected points -> k x 6 float32 rows [xyz / r, centered xyz / spread]."""
    cloud = check_cloud(cloud)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ContractError(f"indices must be a non-empty 1-D list, got shape {idx.shape}")
    xyz = cloud[idx, :3].astype(np.float64)
    absolute = np.clip(xyz / r, -1.0, 1.0)
    centered = xyz - xyz.mean(axis=0)
    spread = max(float(np.sqrt((centered * centered).sum(axis=1)).max()), 1e-9)
    relative = np.clip(centered / spread, -1.0, 1.0)
    return np.concatenate([absolute, relative], axis=1).astype(np.float32)


def sample_points(cloud: np.ndarray, seed=0, k: int = NUM_POINTS, r: float = CROP_RADIUS) -> np.ndarray:
    """Crop, sample and featurize a raw cloud into the point-backbone input."""
    cropped = crop_radius(cloud, r)
    if cropped.shape[0] == 0:
        raise DomainError(f"no points within {r} m of the sensor")
    return build_point_features(cropped, farthest_point_sample(cropped, k, seed), r)


@dataclass(frozen=True)
class BevConfig:
    extent: float = 32.0
    cells: int = 256
    z_split: float = 0.0
    cap: float | None = 32.0
    x_offset: float = 0.0
    y_offset: float = 0.0

    @property
    def cell_size(self) -> float:
        return self.extent / self.cells


def bev_histogram(cloud: np.ndarray, cfg: BevConfig = BevConfig()) -> np.ndarray:
    """2-bin BEV count grid, shape 2 x cells x cells.

    Row 0 is the far edge (x = extent ahead), column 0 the left edge
    (y = +extent/2). Bin 0 holds z < z_split, bin 1 z >= z_split. Counts are
    divided by ``cap`` and clipped to 1; ``cap=None`` or ``inf`` keeps raw
    counts.
    """
    cloud = check_cloud(cloud)
    grid = np.zeros((2, cfg.cells, cfg.cells), dtype=np.float64)
    if cloud.shape[0]:
        x = cloud[:, 0].astype(np.float64) - cfg.x_offset
        y = cloud[:, 1].astype(np.float64) - cfg.y_offset
        z = cloud[:, 2].astype(np.float64)
        row = np.floor((cfg.extent - x) / cfg.cell_size)
        col = np.floor((cfg.extent / 2 - y) / cfg.cell_size)
        inside = (row >= 0) & (row < cfg.cells) & (col >= 0) & (col < cfg.cells)
        b = (z[inside] >= cfg.z_split).astype(np.int64)
        np.add.at(grid, (b, row[inside].astype(np.int64), col[inside].astype(np.int64)), 1.0)
    if cfg.cap is not None and np.isfinite(cfg.cap):
        grid = np.minimum(grid / cfg.cap, 1.0)
    return grid.astype(np.float32)
