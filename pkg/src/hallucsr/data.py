"""LR/HR pair construction from image folders or procedural patterns."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .imagecore import downscale, round_colors, uint8_to_signed

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class PairedSample:
    """An HR image and the LR image obtained by area-downscaling it.

    Both are ``(C, H, W)`` float32 tensors in [-1, 1].
    """

    hr: torch.Tensor
    lr: torch.Tensor
    id: str


def make_pair(hr: torch.Tensor, scale_factor: int, id: str) -> PairedSample:
    hr = hr.to(torch.float32).contiguous()
    return PairedSample(hr=hr, lr=downscale(hr, scale_factor), id=id)


def _check_sizes(hr_size: int, scale_factor: int) -> None:
    if hr_size % scale_factor:
        raise ValueError(f"hr_size {hr_size} is not a multiple of scale_factor {scale_factor}")


def _center_square(img: Image.Image) -> Image.Image:
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    return img.crop((left, top, left + side, top + side))


def load_image(path, size: int, channels: int = 3) -> np.ndarray:
    """Center-crop to a square, area-resize to ``size`` and map to [-1, 1] (HWC)."""
    with Image.open(path) as img:
        img = _center_square(img.convert("RGB" if channels == 3 else "L"))
        if img.size != (size, size):
            img = img.resize((size, size), Image.Resampling.BOX)
        pixels = np.asarray(img)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return uint8_to_signed(pixels)


def load_dataset(root_dir, hr_size: int, scale_factor: int, channels: int = 3) -> list[PairedSample]:
    root = Path(root_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    _check_sizes(hr_size, scale_factor)
    samples = []
    for path in sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
        try:
            hr = load_image(path, hr_size, channels)
        except (OSError, UnidentifiedImageError) as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            continue
        hr_t = torch.from_numpy(hr.transpose(2, 0, 1).copy())
        samples.append(make_pair(hr_t, scale_factor, path.stem))
    if not samples:
        raise ValueError(f"no decodable images in {root}")
    return samples


# -- procedural images -----------------------------------------------------------

def stripes(size: int, period: int, angle: str = "vertical", channels: int = 3,
            low: float = -0.8, high: float = 0.8) -> np.ndarray:
    """Square wave of the given period in pixels, returned as (H, W, C)."""
    idx = np.arange(size)
    wave = np.where((idx % period) < period / 2, high, low)
    img = np.tile(wave[None, :], (size, 1)) if angle == "vertical" else np.tile(wave[:, None], (1, size))
    return np.repeat(img[:, :, None], channels, axis=2)


def _linear_ramp(rng, size, channels):
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) - 0.5
    t = np.cos(theta) * xx + np.sin(theta) * yy
    a, b = rng.uniform(-1, 1, (2, channels))
    return a + (b - a) * (t[:, :, None] + 0.5)


def _disks(rng, size, channels):
    img = np.tile(rng.uniform(-1, 1, channels), (size, size, 1))
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0, size, 2)
        radius = rng.uniform(size / 8, size / 3)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < radius ** 2
        img[mask] = rng.uniform(-1, 1, channels)
    return img


def _random_stripes(rng, size, channels):
    period = int(rng.integers(3, max(4, size // 3)))
    low, high = np.sort(rng.uniform(-1, 1, 2))
    img = stripes(size, period, "vertical" if rng.random() < 0.5 else "horizontal", 1, low, high)
    tint = rng.uniform(0.5, 1.0, channels)
    return img * tint


_PATTERNS = (_linear_ramp, _disks, _random_stripes)


def synth_image(rng: np.random.Generator, size: int, channels: int = 3) -> np.ndarray:
    kind = _PATTERNS[rng.integers(len(_PATTERNS))]
    img = kind(rng, size, channels)
    if rng.random() < 0.5:
        img = 0.6 * img + 0.4 * _disks(rng, size, channels)
    return np.clip(img, -1.0, 1.0)


def synth_dataset(n: int, hr_size: int, scale_factor: int, seed: int = 0, channels: int = 3) -> list[PairedSample]:
    """Seeded ramps, disks and stripes quantized to 8-bit levels."""
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    _check_sizes(hr_size, scale_factor)
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        hr = torch.from_numpy(synth_image(rng, hr_size, channels).transpose(2, 0, 1).copy())
        samples.append(make_pair(round_colors(hr.to(torch.float32)), scale_factor, f"synth-{i:05d}"))
    return samples


def split(dataset, train_fraction: float, seed: int = 0):
    """Disjoint seeded partition; each part keeps the original order."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    train_idx = sorted(perm[:n_train])
    test_idx = sorted(perm[n_train:])
    return [dataset[i] for i in train_idx], [dataset[i] for i in test_idx]
