"""Deterministic image-domain primitives.

Images are torch tensors laid out channels-first, either ``(C, H, W)`` or
batched ``(B, C, H, W)``, with values in [-1, 1]. Every function here works
on the trailing three dimensions, so both layouts are accepted.

PNG helpers at the bottom convert between 8-bit files and ``(H, W, C)``
numpy arrays in [-1, 1].
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

#: quantization step of an 8-bit image mapped to [-1, 1]
COLOR_STEP = 2.0 / 255.0
_HALF_LEVELS = 127.5


def _check_image(image: torch.Tensor, name: str = "image") -> None:
    if not isinstance(image, torch.Tensor):
        raise TypeError(f"{name} must be a torch.Tensor, got {type(image).__name__}")
    if image.dim() < 3:
        raise ValueError(f"{name} must have shape (C, H, W) or (B, C, H, W), got {tuple(image.shape)}")


def compute_gradient(image: torch.Tensor) -> torch.Tensor:
    """Gradient magnitude from central differences.

    ``g_x = I(x+1) - I(x-1)`` and ``g_y = I(y+1) - I(y-1)`` with replicate
    padding at the border, so the boundary difference spans one pixel.
    Colour inputs are differenced per channel and the two components are
    averaged over channels before taking the Euclidean norm.

    Returns a single-channel map with the spatial size of ``image``.
    """
    _check_image(image)
    h, w = image.shape[-2:]
    if h < 3 or w < 3:
        raise ValueError(f"compute_gradient needs at least 3x3 pixels, got {h}x{w}")

    right = torch.cat([image[..., :, 1:], image[..., :, -1:]], dim=-1)
    left = torch.cat([image[..., :, :1], image[..., :, :-1]], dim=-1)
    down = torch.cat([image[..., 1:, :], image[..., -1:, :]], dim=-2)
    up = torch.cat([image[..., :1, :], image[..., :-1, :]], dim=-2)

    gx = (right - left).mean(dim=-3, keepdim=True)
    gy = (down - up).mean(dim=-3, keepdim=True)
    return torch.sqrt(gx * gx + gy * gy)


def downscale(image: torch.Tensor, factor: int) -> torch.Tensor:
    """Area downscaling: mean over non-overlapping ``factor x factor`` blocks."""
    _check_image(image)
    if not isinstance(factor, int) or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    h, w = image.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"spatial size {h}x{w} is not divisible by factor {factor}")
    if factor == 1:
        return image
    lead = image.shape[:-2]
    blocks = image.reshape(*lead, h // factor, factor, w // factor, factor)
    return blocks.mean(dim=(-3, -1))


def nearest_upscale(image: torch.Tensor, factor: int) -> torch.Tensor:
    """Pixel replication by ``factor`` along both spatial axes."""
    _check_image(image)
    return image.repeat_interleave(factor, dim=-2).repeat_interleave(factor, dim=-1)


def _round_to_grid(x: torch.Tensor) -> torch.Tensor:
    # Grid points sit at half-integers of x * 127.5; integer positions are ties
    # and go away from zero (0 itself goes up).
    s = x * _HALF_LEVELS
    mag = torch.clamp(torch.floor(s.abs()) + 0.5, max=_HALF_LEVELS)
    sign = torch.where(s < 0, -torch.ones_like(s), torch.ones_like(s))
    return sign * mag / _HALF_LEVELS


class _StraightThroughRound(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return _round_to_grid(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output


def round_colors(image: torch.Tensor) -> torch.Tensor:
    """Snap values to the nearest of the 256 levels ``-1 + k * 2/255``.

    Backpropagation treats the rounding as the identity (straight-through).
    """
    return _StraightThroughRound.apply(image)


def constraint_map(fake_hr: torch.Tensor, lr: torch.Tensor, factor: int, epsilon: float = 0.1) -> torch.Tensor:
    """Downscale-consistency conditioning map for the image discriminator.

    ``max(|round(DS(fake_hr)) - round(lr)| / r - epsilon, 0)`` with
    ``r = 2/255``, computed per channel and averaged to one plane. ``lr`` is
    rounded too, which is a no-op for 8-bit inputs and makes a perfectly
    consistent fake map to exactly zero when ``lr`` came from area averaging.
    """
    _check_image(fake_hr, "fake_hr")
    _check_image(lr, "lr")
    small = downscale(fake_hr, factor)
    if small.shape != lr.shape:
        raise ValueError(
            f"downscaled fake has shape {tuple(small.shape)}, lr has shape {tuple(lr.shape)}"
        )
    diff = (round_colors(small) - _round_to_grid(lr)).abs() / COLOR_STEP
    return torch.relu(diff - epsilon).mean(dim=-3, keepdim=True)


# -- 8-bit PNG I/O -------------------------------------------------------------

def uint8_to_signed(pixels: np.ndarray) -> np.ndarray:
    """Map ``[0, 255]`` linearly onto ``[-1, 1]``."""
    return pixels.astype(np.float64) * (2.0 / 255.0) - 1.0


def signed_to_uint8(image: np.ndarray) -> np.ndarray:
    values = (np.clip(image, -1.0, 1.0) + 1.0) * 127.5
    return np.floor(values + 0.5).astype(np.uint8)


def read_png(path, channels: int = 3) -> np.ndarray:
    """Read an image file into an ``(H, W, C)`` float array in [-1, 1]."""
    with Image.open(path) as img:
        img = img.convert("RGB" if channels == 3 else "L")
        pixels = np.asarray(img)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return uint8_to_signed(pixels)


def write_png(path, image: np.ndarray) -> None:
    """Write an ``(H, W, C)`` array in [-1, 1] as an 8-bit PNG."""
    pixels = signed_to_uint8(np.asarray(image))
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PNG")


def to_tensor(image: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """``(H, W, C)`` array -> ``(C, H, W)`` tensor (batched input also accepted)."""
    arr = np.asarray(image)
    if arr.ndim == 3:
        arr = arr.transpose(2, 0, 1)
    elif arr.ndim == 4:
        arr = arr.transpose(0, 3, 1, 2)
    else:
        raise ValueError(f"expected (H, W, C) or (N, H, W, C), got shape {arr.shape}")
    return torch.as_tensor(np.ascontiguousarray(arr), dtype=dtype)


def to_numpy(image: torch.Tensor) -> np.ndarray:
    """``(C, H, W)`` or ``(B, C, H, W)`` tensor -> channels-last numpy array."""
    arr = image.detach().cpu().numpy()
    if arr.ndim == 3:
        return arr.transpose(1, 2, 0)
    return arr.transpose(0, 2, 3, 1)
