"""Dataset manifests and a seeded synthetic world with pose-determined sensor payloads."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import formats
from .errors import DomainError, FormatError
from .geometry import Pose, quat_from_euler, quat_to_matrix
from .lidar import CROP_RADIUS

MANIFEST_HEADER = ["frame", "x", "y", "z", "qw", "qx", "qy", "qz", "image", "cloud"]


@dataclass(frozen=True)
class FrameRecord:
    frame: str
    pose: Pose
    image: str | None = None
    cloud: str | None = None


@dataclass
class DatasetManifest:
    root: str
    records: list[FrameRecord] = field(default_factory=list)

    def resolve(self, rel: str) -> str:
        return rel if os.path.isabs(rel) else os.path.join(self.root, rel)

    def payload_path(self, rec: FrameRecord, modality: str) -> str | None:
        rel = rec.image if modality == "image" else rec.cloud
        return None if rel is None else self.resolve(rel)

    def positions(self) -> np.ndarray:
        return np.array([r.pose.position for r in self.records]).reshape(-1, 3)


def load_manifest(path: str | os.PathLike, check_paths: bool = True) -> DatasetManifest:
    path = os.fspath(path)
    root = os.path.dirname(os.path.abspath(path))
    manifest = DatasetManifest(root)
    seen: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise FormatError(f"{path}:1: expected header {','.join(MANIFEST_HEADER)!r}, got {header}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise FormatError(f"{path}:{line}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            frame = row[0]
            if not frame:
                raise FormatError(f"{path}:{line}: empty frame id")
            if frame in seen:
                raise FormatError(f"{path}:{line}: duplicate frame id {frame!r} (first on line {seen[frame]})")
            seen[frame] = line
            try:
                values = [float(v) for v in row[1:8]]
            except ValueError:
                raise FormatError(f"{path}:{line}: non-numeric pose value in {row[1:8]}") from None
            try:
                pose = Pose.from_components(values[:3], values[3:])
            except DomainError as e:
                raise FormatError(f"{path}:{line}: invalid pose: {e}") from None
            image = row[8] or None
            cloud = row[9] or None
            rec = FrameRecord(frame, pose, image, cloud)
            if check_paths:
                for rel in (image, cloud):
                    if rel is not None and not os.path.exists(manifest.resolve(rel)):
                        raise FormatError(f"{path}:{line}: referenced file {rel!r} does not exist")
            manifest.records.append(rec)
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            w.writerow([r.frame, *(repr(float(v)) for v in r.pose.position),
                        *(repr(float(v)) for v in r.pose.orientation), r.image or "", r.cloud or ""])


@dataclass(frozen=True)
class SyntheticWorldConfig:
    seed: int = 0
    extent_x: float = 100.0
    extent_y: float = 100.0
    height: float = 8.0
    landmarks: int = 2000
    frames: int = 64
    test_frames: int = 0
    sensor_radius: float = CROP_RADIUS
    sensor_height: float = 1.8

    def __post_init__(self):
        for name in ("extent_x", "extent_y", "height", "landmarks", "frames", "sensor_radius"):
            if not getattr(self, name) > 0:
                raise DomainError(f"synth.{name} must be positive, got {getattr(self, name)}")
        if self.test_frames < 0:
            raise DomainError("synth.test_frames must be non-negative")


def synth_world(cfg: SyntheticWorldConfig) -> np.ndarray:
    """Uniform landmarks in the world box: [L, 4] = x, y, z, intensity."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.landmarks
    return np.stack([
        rng.uniform(0.0, cfg.extent_x, n),
        rng.uniform(0.0, cfg.extent_y, n),
        rng.uniform(0.0, cfg.height, n),
        rng.uniform(0.0, 1.0, n),
    ], axis=1)


def synth_trajectory(cfg: SyntheticWorldConfig, n: int | None = None) -> list[Pose]:
    """Closed loop around the world center, heading along the path.

    The loop radius wobbles with the angle so headings and positions are not
    a single circle.
    """
    n = cfg.frames + cfg.test_frames if n is None else n
    rng = np.random.default_rng(cfg.seed + 1)
    phase = rng.uniform(0, 2 * math.pi)
    cx, cy = cfg.extent_x / 2, cfg.extent_y / 2
    ax, ay = 0.32 * cfg.extent_x, 0.28 * cfg.extent_y
    poses = []
    for i in range(n):
        t = 2 * math.pi * i / n
        wob = 1.0 + 0.15 * math.sin(3 * t + phase)
        x = cx + ax * wob * math.cos(t)
        y = cy + ay * wob * math.sin(t)
        # numerical tangent
        t2 = t + 1e-4
        wob2 = 1.0 + 0.15 * math.sin(3 * t2 + phase)
        dx = cx + ax * wob2 * math.cos(t2) - x
        dy = cy + ay * wob2 * math.sin(t2) - y
        yaw = math.atan2(dy, dx)
        poses.append(Pose.from_components([x, y, cfg.sensor_height], quat_from_euler(0.0, 0.0, yaw)))
    return poses


def world_to_ego(world: np.ndarray, pose: Pose) -> np.ndarray:
    r = quat_to_matrix(pose.orientation)
    ego = world.copy()
    ego[:, :3] = (world[:, :3] - pose.position) @ r
    return ego


def ego_to_world(ego: np.ndarray, pose: Pose) -> np.ndarray:
    r = quat_to_matrix(pose.orientation)
    world = ego.copy()
    world[:, :3] = ego[:, :3] @ r.T + pose.position
    return world


def render_pseudo_image(cloud: np.ndarray, radius: float, size: int = 256) -> np.ndarray:
    """Top-down splat of an ego-frame cloud.

    Channels: max height, max intensity, point density. Forward (+x) is up,
    left (+y) is to the left.
    """
    img = np.zeros((size, size, 3), dtype=np.float64)
    if cloud.shape[0]:
        x, y, z, inten = (cloud[:, i].astype(np.float64) for i in range(4))
        row = np.floor((radius - x) / (2 * radius) * size).astype(int)
        col = np.floor((radius - y) / (2 * radius) * size).astype(int)
        ok = (row >= 0) & (row < size) & (col >= 0) & (col < size)
        row, col, z, inten = row[ok], col[ok], z[ok], inten[ok]
        zn = np.clip((z + 5.0) / 15.0, 0.0, 1.0) * 255
        np.maximum.at(img[..., 0], (row, col), zn)
        np.maximum.at(img[..., 1], (row, col), inten * 255)
        np.add.at(img[..., 2], (row, col), 96.0)
        # 3x3 splat so single points survive resizing
        padded = np.pad(img, ((1, 1), (1, 1), (0, 0)))
        img = np.max([padded[i:i + size, j:j + size] for i in range(3) for j in range(3)], axis=0)
    return np.clip(img, 0, 255).astype(np.uint8)


def synth_sample(world: np.ndarray, pose: Pose, radius: float = CROP_RADIUS):
    """Returns (ego-frame cloud [N, 4] float32, pseudo-image 256 x 256 x 3 uint8)."""
    ego = world_to_ego(world, pose)
    keep = np.sqrt((ego[:, :3] ** 2).sum(axis=1)) <= radius
    cloud = ego[keep].astype(np.float32)
    return cloud, render_pseudo_image(cloud, radius)


def write_synthetic_dataset(out_dir: str, cfg: SyntheticWorldConfig) -> dict[str, str]:
    """Render the world along its loop and write payloads plus manifests.

    The first ``cfg.frames`` frames go to train.csv; the following
    ``cfg.test_frames`` (a disjoint segment of the loop) go to test.csv.
    Returns the manifest paths by split.
    """
    os.makedirs(os.path.join(out_dir, "frames"), exist_ok=True)
    world = synth_world(cfg)
    poses = synth_trajectory(cfg)
    splits = {"train": DatasetManifest(out_dir), "test": DatasetManifest(out_dir)}
    for i, pose in enumerate(poses):
        frame = f"{i:06d}"
        cloud, img = synth_sample(world, pose, cfg.sensor_radius)
        cloud_rel = f"frames/{frame}.bin"
        image_rel = f"frames/{frame}.ppm"
        formats.write_cloud(os.path.join(out_dir, cloud_rel), cloud)
        formats.write_ppm(os.path.join(out_dir, image_rel), img)
        split = "train" if i < cfg.frames else "test"
        splits[split].records.append(FrameRecord(frame, pose, image_rel, cloud_rel))
    paths = {}
    for name, m in splits.items():
        if m.records:
            paths[name] = os.path.join(out_dir, f"{name}.csv")
            save_manifest(m, paths[name])
    return paths
