"""Input checks for image batches passed through the estimator API."""
from __future__ import annotations

import numpy as np


def check_images(X, *, name: str = "X", multiple_of: int | None = None, min_side: int | None = None,
                 channels: int | None = None) -> np.ndarray:
    """Validate an image batch and return it as float32 ``(N, H, W, C)`` in [-1, 1].

    Accepts ``(N, H, W)`` (single channel) or ``(N, H, W, C)`` arrays. ``uint8``
    input is mapped from [0, 255]; float input must already lie in [-1, 1].
    """
    arr = np.asarray(X)
    if arr.dtype == object:
        raise TypeError(f"{name} must be a numeric array")
    if arr.ndim == 3:
        arr = arr[..., None]
    if arr.ndim != 4:
        raise ValueError(f"{name} must have shape (N, H, W) or (N, H, W, C), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} contains no images")
    if arr.shape[-1] not in (1, 3):
        raise ValueError(f"{name} must have 1 or 3 channels, got {arr.shape[-1]}")
    if channels is not None and arr.shape[-1] != channels:
        raise ValueError(f"{name} has {arr.shape[-1]} channels, expected {channels}")

    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) * (2.0 / 255.0) - 1.0
    elif np.issubdtype(arr.dtype, np.number):
        arr = arr.astype(np.float32)
        if not np.isfinite(arr).all():
            raise ValueError(f"{name} contains NaN or infinity")
        if arr.min() < -1.0 or arr.max() > 1.0:
            raise ValueError(f"{name} values must lie in [-1, 1] (got [{arr.min():.3g}, {arr.max():.3g}])")
    else:
        raise TypeError(f"{name} has unsupported dtype {arr.dtype}")

    h, w = arr.shape[1:3]
    if min_side is not None and min(h, w) < min_side:
        raise ValueError(f"{name} images must be at least {min_side}x{min_side}, got {h}x{w}")
    if multiple_of is not None and (h % multiple_of or w % multiple_of):
        raise ValueError(f"{name} spatial size {h}x{w} must be a multiple of {multiple_of}")
    return arr
