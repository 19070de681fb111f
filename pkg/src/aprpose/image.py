"""Camera image preprocessing: resize, ImageNet normalization, color jitter."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError

IMAGE_SIZE = 256
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"expected H x W x 3 image, got shape {img.shape}")
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ContractError(f"image must be at least 2x2, got {img.shape[1]}x{img.shape[0]}")
    if img.dtype != np.uint8:
        raise ContractError(f"expected uint8 pixels, got {img.dtype}")
    return img


def resize_bilinear(img: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Corner-aligned bilinear resize to size x size, rounded back to uint8."""
    img = check_image(img)
    h, w, _ = img.shape
    if h == size and w == size:
        return img.copy()
    src = img.astype(np.float64)
    ys = np.linspace(0.0, h - 1, size)
    xs = np.linspace(0.0, w - 1, size)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def resize_bilinear_256(img: np.ndarray) -> np.ndarray:
    return resize_bilinear(img, IMAGE_SIZE)


def normalize_imagenet(img: np.ndarray) -> np.ndarray:
    """uint8 H x W x 3 -> float32 3 x H x W with ImageNet channel statistics."""
    img = check_image(img)
    x = img.astype(np.float64) / 255.0
    x = (x - IMAGENET_MEAN) / IMAGENET_STD
    return np.ascontiguousarray(x.transpose(2, 0, 1)).astype(np.float32)


@dataclass(frozen=True)
class AugmentConfig:
    brightness: float = 0.0
    contrast: float = 0.0
    saturation: float = 0.0
    hue: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        for name in ("brightness", "contrast", "saturation", "hue"):
            v = getattr(self, name)
            if not 0.0 <= v <= 0.5:
                raise DomainError(f"{name} half-range must lie in [0, 0.5], got {v}")


def _gray(x: np.ndarray) -> np.ndarray:
    return x[..., 0] * 0.299 + x[..., 1] * 0.587 + x[..., 2] * 0.114


def _rgb_to_hsv(x: np.ndarray):
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    mx = x.max(axis=-1)
    mn = x.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(mx == r, (g - b) / safe % 6.0,
                 np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0)) / 6.0
    h = np.where(delta > 0, h, 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return h, s, mx


def _hsv_to_rgb(h, s, v) -> np.ndarray:
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    i = i.astype(int) % 6
    choices = [
        np.stack([v, t, p], -1), np.stack([q, v, p], -1), np.stack([p, v, t], -1),
        np.stack([p, q, v], -1), np.stack([t, p, v], -1), np.stack([v, p, q], -1),
    ]
    out = np.zeros(h.shape + (3,))
    for k, c in enumerate(choices):
        out = np.where((i == k)[..., None], c, out)
    return out


def _weather(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Placeholder stage for weather effects; intentionally the identity.
    return x


def augment_color(img: np.ndarray, cfg: AugmentConfig, seed) -> np.ndarray:
    """Seeded color jitter applied as brightness, contrast, saturation, hue."""
    img = check_image(img)
    rng = np.random.default_rng(seed)
    fb = rng.uniform(1 - cfg.brightness, 1 + cfg.brightness)
    fc = rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)
    fs = rng.uniform(1 - cfg.saturation, 1 + cfg.saturation)
    dh = rng.uniform(-cfg.hue, cfg.hue)
    if not cfg.enabled:
        return img.copy()

    x = img.astype(np.float64)
    if fb != 1.0:
        x = np.clip(x * fb, 0, 255)
    if fc != 1.0:
        mean = _gray(x).mean()
        x = np.clip(fc * x + (1 - fc) * mean, 0, 255)
    if fs != 1.0:
        g = _gray(x)[..., None]
        x = np.clip(fs * x + (1 - fs) * g, 0, 255)
    if dh != 0.0:
        h, s, v = _rgb_to_hsv(x / 255.0)
        x = np.clip(_hsv_to_rgb((h + dh) % 1.0, s, v) * 255.0, 0, 255)
    x = _weather(x, rng)
    return np.rint(x).astype(np.uint8)


def preprocess_image(img: np.ndarray, augment: AugmentConfig | None = None, seed=None) -> np.ndarray:
    """Full camera pipeline: optional jitter, resize to 256, ImageNet normalize."""
    if augment is not None and augment.enabled:
        img = augment_color(img, augment, seed)
    return normalize_imagenet(resize_bilinear_256(img))
