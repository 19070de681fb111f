"""Binary payload codecs: headerless float32 point clouds and P6 PPM images."""
from __future__ import annotations

import os
import re

import numpy as np

from .errors import FormatError

_CLOUD_DTYPE = np.dtype("<f4")
_RECORD_BYTES = 16


def encode_cloud(points: np.ndarray) -> bytes:
    pts = np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise FormatError(f"point cloud must be N x 4, got {pts.shape}")
    return pts.astype(_CLOUD_DTYPE).tobytes()


def decode_cloud(data: bytes) -> np.ndarray:
    if len(data) % _RECORD_BYTES:
        whole = len(data) - len(data) % _RECORD_BYTES
        raise FormatError(
            f"truncated point cloud: {len(data)} bytes is not a multiple of {_RECORD_BYTES} "
            f"(partial record at byte offset {whole})")
    return np.frombuffer(data, dtype=_CLOUD_DTYPE).reshape(-1, 4).copy()


def write_cloud(path: str | os.PathLike, points: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_cloud(points))


def read_cloud(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    try:
        return decode_cloud(data)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from None


_PPM_HEADER = re.compile(rb"\AP6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise FormatError(f"PPM payload must be H x W x 3 uint8, got {img.shape} {img.dtype}")
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    m = _PPM_HEADER.match(data)
    if m is None:
        raise FormatError("not a binary PPM (P6) image: bad header at byte offset 0")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"only 8-bit PPM is supported, maxval={maxval}")
    start = m.end()
    need = w * h * 3
    if len(data) - start < need:
        raise FormatError(
            f"truncated PPM: pixel data starts at byte offset {start}, expected {need} bytes, "
            f"found {len(data) - start}")
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=start).reshape(h, w, 3).copy()


def write_ppm(path: str | os.PathLike, img: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_ppm(img))


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    try:
        return decode_ppm(data)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from None
