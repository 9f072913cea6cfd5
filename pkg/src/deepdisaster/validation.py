"""Input validation helpers for the array-facing estimator API."""

from __future__ import annotations

import numpy as np


def check_image_array(X, *, channels: int | None = None, image_size: int | None = None,
                      allow_single: bool = False) -> np.ndarray:
    """Validate and coerce an image array to float32 (n, channels, size, size).

    Pixel values must already live in [-1, 1]. A single (c, h, w) image is
    accepted when ``allow_single`` and promoted to a batch of one.
    """
    arr = np.asarray(X, dtype=np.float32)
    if allow_single and arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected images of shape (n, channels, h, w), got {arr.shape}")
    n, c, h, w = arr.shape
    if n == 0:
        raise ValueError("empty image batch")
    if h != w:
        raise ValueError(f"images must be square, got {h}x{w}")
    if channels is not None and c != channels:
        raise ValueError(f"expected {channels} channels, got {c}")
    if image_size is not None and h != image_size:
        raise ValueError(f"expected image size {image_size}, got {h}")
    if not np.isfinite(arr).all():
        raise ValueError("images contain non-finite values")
    if arr.min() < -1.0 or arr.max() > 1.0:
        raise ValueError("pixel values must be scaled to [-1, 1]")
    return np.ascontiguousarray(arr)


def check_binary_labels(y, n: int) -> np.ndarray:
    """Validate a 0/1 label vector of length ``n``."""
    arr = np.asarray(y).reshape(-1)
    if len(arr) != n:
        raise ValueError(f"expected {n} labels, got {len(arr)}")
    values = set(np.unique(arr).tolist())
    if not values <= {0, 1}:
        raise ValueError(f"labels must be 0 (no damage) or 1 (damage), got {sorted(values)}")
    return arr.astype(int)
