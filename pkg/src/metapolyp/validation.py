"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np


def check_image_batch(X) -> np.ndarray:
    """Coerce to (n, H, W, 3) float32 in [-1, 1] with extents divisible by 32."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected images of shape (n, H, W, 3), got {arr.shape}")
    n, h, w, _ = arr.shape
    if n == 0:
        raise ValueError("empty image batch")
    if h % 32 or w % 32:
        raise ValueError(f"image extents {(h, w)} must be multiples of 32")
    if not np.isfinite(arr).all():
        raise ValueError("images contain non-finite values")
    if arr.min() < -1.0 - 1e-5 or arr.max() > 1.0 + 1e-5:
        raise ValueError(f"images must be normalized to [-1, 1]; found range "
                         f"[{arr.min():.3g}, {arr.max():.3g}]")
    return np.ascontiguousarray(arr)


def check_mask_batch(y, spatial: tuple) -> np.ndarray:
    """Coerce to (n, H, W, 1) float32 strictly in {0, 1}, matching ``spatial``."""
    arr = np.asarray(y, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim == 3:
        arr = arr[..., None]
    if arr.ndim != 4 or arr.shape[-1] != 1:
        raise ValueError(f"expected masks of shape (n, H, W) or (n, H, W, 1), "
                         f"got {np.asarray(y).shape}")
    if arr.shape[1:3] != tuple(spatial):
        raise ValueError(f"mask extents {arr.shape[1:3]} do not match images {spatial}")
    values = np.unique(arr)
    if not np.isin(values, (0.0, 1.0)).all():
        raise ValueError(f"masks must be binary; found values {values[:8]}")
    return np.ascontiguousarray(arr)
