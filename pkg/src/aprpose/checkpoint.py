"""Checkpoint files.

Layout (all integers little-endian uint32)::

    b"APRCKPT1"
    config_len, config_len bytes of UTF-8 JSON
    repeated until EOF:
        name_len, name bytes, rank, rank x dim, prod(dims) float32 values
"""
from __future__ import annotations

import io
import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import torch

from .errors import FormatError
from .geometry import NormalizationStats

MAGIC = b"APRCKPT1"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    config: dict
    arrays: "OrderedDict[str, np.ndarray]"


def write_checkpoint(path: str | os.PathLike, config: dict, arrays) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    text = json.dumps(config, sort_keys=True).encode("utf-8")
    buf.write(_U32.pack(len(text)))
    buf.write(text)
    for name, arr in arrays.items():
        a = np.array(arr, dtype="<f4", order="C")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        buf.write(_U32.pack(len(raw)))
        buf.write(raw)
        buf.write(_U32.pack(a.ndim))
        for d in a.shape:
            buf.write(_U32.pack(d))
        buf.write(a.tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def read_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated checkpoint reading {what} at byte offset {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    def u32(what: str) -> int:
        return _U32.unpack(take(4, what))[0]

    if take(len(MAGIC), "magic") != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    try:
        config = json.loads(take(u32("config length"), "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable config block: {e}") from None
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    while pos < len(data):
        name = take(u32("name length"), "name").decode("utf-8")
        rank = u32(f"rank of {name}")
        dims = tuple(u32(f"dims of {name}") for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arrays[name] = np.frombuffer(take(4 * count, f"payload of {name}"), dtype="<f4").reshape(dims).copy()
    return Checkpoint(config, arrays)


def save_model(path, model, loss_params, stats: NormalizationStats, train_cfg: dict | None = None) -> None:
    arrays = OrderedDict()
    for name, p in model.named_parameters():
        arrays[f"model.{name}"] = p.detach().cpu().numpy()
    arrays["loss.s_x"] = loss_params.s_x.detach().cpu().numpy()
    arrays["loss.s_q"] = loss_params.s_q.detach().cpu().numpy()
    config = {
        "format_version": FORMAT_VERSION,
        "model": model.cfg.to_dict(),
        "normalization": stats.to_dict(),
        "train": train_cfg or {},
    }
    write_checkpoint(path, config, arrays)


def load_model(path):
    """Returns (model in eval mode, loss params, normalization stats, checkpoint)."""
    from .model import AprConfig, AprModel
    from .training import LossParams

    ckpt = read_checkpoint(path)
    try:
        cfg = AprConfig(**ckpt.config["model"])
        stats = NormalizationStats.from_dict(ckpt.config["normalization"])
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: incomplete checkpoint config: {e}") from None
    model = AprModel(cfg)
    loss_params = LossParams()
    with torch.no_grad():
        for name, p in model.named_parameters():
            key = f"model.{name}"
            if key not in ckpt.arrays:
                raise FormatError(f"{path}: missing parameter {key}")
            arr = ckpt.arrays[key]
            if arr.shape != tuple(p.shape):
                raise FormatError(f"{path}: {key} has shape {arr.shape}, model expects {tuple(p.shape)}")
            p.copy_(torch.from_numpy(arr))
        for key in ("s_x", "s_q"):
            getattr(loss_params, key).copy_(torch.from_numpy(ckpt.arrays[f"loss.{key}"]))
    model.eval()
    return model, loss_params, stats, ckpt
