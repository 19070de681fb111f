"""Pose values, quaternion helpers, error metrics and Min-Max target scaling.

Quaternions are always ordered (w, x, y, z).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError

UNIT_TOL = 1e-6
DEGENERATE_EXTENT = 1e-9


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(q))
    if not n > 1e-12:
        raise DomainError(f"cannot normalize quaternion with norm {n}")
    if abs(n - 1.0) < 1e-15:
        # already unit to rounding; dividing again could flip the last bit
        return q.copy()
    return q / n


def quat_canonicalize(q) -> np.ndarray:
    """Pick the representative of {q, -q} whose w is positive.

    When w == 0 the first nonzero component decides the sign.
    """
    q = np.asarray(q, dtype=np.float64)
    for c in q:
        if c > 0:
            return q.copy()
        if c < 0:
            return -q
    return q.copy()


def _check_unit(q: np.ndarray, name: str) -> None:
    n = float(np.linalg.norm(q))
    if abs(n - 1.0) > UNIT_TOL:
        raise DomainError(f"{name} is not a unit quaternion (norm {n:.9g})")


def quat_angular_distance(q1, q2) -> float:
    """Geodesic angle in degrees between the rotations of two unit quaternions."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    _check_unit(q1, "q1")
    _check_unit(q2, "q2")
    # 2*acos(|<q1,q2>|) via the atan2 form: exact 0 for equal inputs, stable near 0 and 180
    if np.dot(q1, q2) < 0:
        q2 = -q2
    half = math.atan2(float(np.linalg.norm(q1 - q2)), float(np.linalg.norm(q1 + q2)))
    return math.degrees(4.0 * half)


def position_error(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)))


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """ZYX intrinsic (yaw, then pitch, then roll), radians."""
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    return np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray

    @classmethod
    def from_components(cls, position: Sequence[float], quaternion: Sequence[float]) -> "Pose":
        """Canonicalizing constructor: normalizes and sign-fixes the quaternion."""
        p = np.asarray(position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(p)):
            raise DomainError(f"non-finite position {p.tolist()}")
        q = quat_canonicalize(quat_normalize(np.asarray(quaternion, dtype=np.float64).reshape(4)))
        return cls(p, q)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.position, other.position)
                    and np.array_equal(self.orientation, other.orientation))

    def __hash__(self) -> int:
        return hash((tuple(self.position), tuple(self.orientation)))


@dataclass(frozen=True)
class NormalizationStats:
    minimum: np.ndarray
    maximum: np.ndarray
    degenerate: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        lo = np.asarray(self.minimum, dtype=np.float64).reshape(3)
        hi = np.asarray(self.maximum, dtype=np.float64).reshape(3)
        if np.any(hi < lo):
            raise DomainError(f"maximum {hi.tolist()} below minimum {lo.tolist()}")
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)
        object.__setattr__(self, "degenerate", (hi - lo) < DEGENERATE_EXTENT)

    def to_dict(self) -> dict:
        return {"minimum": self.minimum.tolist(), "maximum": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(np.array(d["minimum"], dtype=np.float64), np.array(d["maximum"], dtype=np.float64))


def minmax_fit(positions) -> NormalizationStats:
    p = np.asarray(positions, dtype=np.float64)
    if p.size == 0:
        raise DomainError("cannot fit Min-Max statistics on an empty list")
    p = p.reshape(-1, 3)
    return NormalizationStats(p.min(axis=0), p.max(axis=0))


def minmax_apply(stats: NormalizationStats, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    extent = np.where(stats.degenerate, 1.0, stats.maximum - stats.minimum)
    u = (p - stats.minimum) / extent
    return np.where(stats.degenerate, 0.0, u)


def minmax_invert(stats: NormalizationStats, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    p = stats.minimum + u * (stats.maximum - stats.minimum)
    return np.where(stats.degenerate, stats.minimum, p)
