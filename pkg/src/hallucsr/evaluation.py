"""Image-quality metrics, diversity and consistency diagnostics, sample grids.

``model`` arguments are callables ``model(lr, z) -> MultiScaleOutput`` such
as a :class:`~hallucsr.nets.Generator`.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .imagecore import downscale, nearest_upscale, to_numpy, write_png
from .losses import perceptual_loss

PSNR_CAP = 99.0
DATA_RANGE = 2.0


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    perceptual: float
    consistency_violation_rate: float
    diversity: float
    baseline_psnr: float = float("nan")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.detach().to(torch.float64)
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def _check_pair(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for images in [-1, 1]; identical inputs give ``PSNR_CAP``."""
    a, b = _check_pair(a, b)
    mse = torch.mean((a - b) ** 2).item()
    if mse == 0:
        return PSNR_CAP
    return min(10.0 * math.log10(DATA_RANGE ** 2 / mse), PSNR_CAP)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a, b, window_size: int = 11, sigma: float = 1.5) -> float:
    """Mean local SSIM over valid window positions, averaged over channels.

    Inputs are ``(C, H, W)`` or ``(B, C, H, W)`` with data range 2.
    """
    a, b = _check_pair(a, b)
    if a.dim() == 2:
        a, b = a[None], b[None]
    if a.dim() == 3:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < window_size:
        raise ValueError(f"image {tuple(a.shape[-2:])} is smaller than the {window_size}x{window_size} window")
    c = a.shape[1]
    win = gaussian_window(window_size, sigma).expand(c, 1, window_size, window_size)

    def filt(x):
        return F.conv2d(x, win, groups=c)

    c1 = (0.01 * DATA_RANGE) ** 2
    c2 = (0.03 * DATA_RANGE) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return (num / den).mean().item()


def perceptual_distance(a, b, extractor) -> float:
    """Feature-space distance under ``extractor`` (not LPIPS unless given LPIPS-like weights)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() == 3:
        a, b = a[None], b[None]
    with torch.no_grad():
        return perceptual_loss(a, b, extractor).item()


def _batched(lr: torch.Tensor) -> torch.Tensor:
    return lr[None] if lr.dim() == 3 else lr


def _run(model: Callable, lr: torch.Tensor, z) -> object:
    z = torch.as_tensor(z, dtype=lr.dtype)
    with torch.no_grad():
        return model(lr, z.expand(lr.shape[0], -1))


def consistency_violation_rate(model: Callable, lr: torch.Tensor, z_samples: Sequence, epsilon: float = 0.1) -> float:
    """Fraction of (sample, pixel, channel) entries with ``|DS(I_z) - lr| >= epsilon``."""
    if len(z_samples) == 0:
        raise ValueError("z_samples is empty")
    lr = _batched(lr)
    bad = total = 0
    for z in z_samples:
        image = _run(model, lr, z).image
        factor = image.shape[-1] // lr.shape[-1]
        viol = (downscale(image, factor) - lr).abs() >= epsilon
        bad += int(viol.sum())
        total += viol.numel()
    return bad / total


def diversity_score(model: Callable, lr: torch.Tensor, z_samples: Sequence) -> float:
    """Mean over unordered pairs of the mean absolute difference of output gradient maps."""
    if len(z_samples) < 2:
        raise ValueError("diversity_score needs at least 2 noise samples")
    lr = _batched(lr)
    grads = [_run(model, lr, z).gradient.to(torch.float64) for z in z_samples]
    pairs = [(g1 - g2).abs().mean().item() for g1, g2 in itertools.combinations(grads, 2)]
    return float(np.mean(pairs))


def sample_noise(count: int, dim: int, seed: int) -> list[torch.Tensor]:
    gen = torch.Generator().manual_seed(seed)
    return [torch.randn(dim, generator=gen) for _ in range(count)]


def grid_rows(model: Callable, samples, z_count: int, noise_dim: int, seed: int = 0) -> np.ndarray:
    """Rows of [LR nearest-upscaled, ground truth, SR, hallucinations...] as one HWC array."""
    zs = sample_noise(z_count, noise_dim, seed)
    rows = []
    for s in samples:
        lr = s.lr[None]
        factor = s.hr.shape[-1] // s.lr.shape[-1]
        tiles = [nearest_upscale(s.lr, factor), s.hr, _run(model, lr, torch.zeros(noise_dim)).image[0]]
        tiles += [_run(model, lr, z).image[0] for z in zs]
        rows.append(torch.cat([t.to(torch.float32) for t in tiles], dim=-1))
    return to_numpy(torch.cat(rows, dim=-2))


def emit_grid(model: Callable, samples, z_count: int, out_path, noise_dim: int, seed: int = 0) -> np.ndarray:
    grid = grid_rows(model, samples, z_count, noise_dim, seed)
    write_png(out_path, grid)
    return grid


def evaluate(model: Callable, extractor, samples, noise_dim: int, z_count: int = 8,
             epsilon: float = 0.1, seed: int = 0) -> MetricsReport:
    """Reconstruction metrics against ground truth plus hallucination diagnostics."""
    if not samples:
        raise ValueError("no samples to evaluate")
    lr = torch.stack([s.lr for s in samples])
    hr = torch.stack([s.hr for s in samples])
    factor = hr.shape[-1] // lr.shape[-1]
    sr = _run(model, lr, torch.zeros(noise_dim)).image
    zs = sample_noise(max(z_count, 2), noise_dim, seed)
    min_side = min(hr.shape[-2:])
    return MetricsReport(
        psnr=float(np.mean([psnr(a, b) for a, b in zip(sr, hr)])),
        ssim=ssim(sr, hr) if min_side >= 11 else float("nan"),
        perceptual=perceptual_distance(sr, hr, extractor),
        consistency_violation_rate=consistency_violation_rate(model, lr, zs, epsilon),
        diversity=diversity_score(model, lr, zs),
        baseline_psnr=float(np.mean([psnr(a, b) for a, b in zip(nearest_upscale(lr, factor), hr)])),
    )
