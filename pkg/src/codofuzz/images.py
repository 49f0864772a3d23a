"""Image representation helpers.

An image is a float32 array of shape (height, width, channels) with
values in [0, 1]. Every image the engine mutates, predicts on, or stores
lives on the 8-bit grid (multiples of 1/255) so that in-memory pixels,
oracle inputs, PNG bytes, and lineage replay all agree exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError

_LEVELS = np.float32(255.0)


def check_image(image: np.ndarray) -> np.ndarray:
    """Validate shape and range, returning the array as float32."""
    arr = np.asarray(image)
    if arr.ndim != 3:
        raise InputError(f"image must have shape (H, W, C), got {arr.shape}")
    if any(d < 1 for d in arr.shape):
        raise InputError(f"image dimensions must be positive, got {arr.shape}")
    arr = arr.astype(np.float32, copy=False)
    if not np.isfinite(arr).all():
        raise InputError("image contains non-finite pixels")
    if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
        raise InputError(
            f"pixels must lie in [0, 1], got range [{arr.min()}, {arr.max()}]"
        )
    return np.clip(arr, 0.0, 1.0)


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap pixels to the 8-bit grid, as float32 multiples of 1/255."""
    return to_unit(to_bytes(image))


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Convert unit-range pixels to uint8, rounding to nearest level."""
    arr = np.clip(np.asarray(image, dtype=np.float32), 0.0, 1.0)
    return np.rint(arr * 255.0).astype(np.uint8)


def to_unit(raw: np.ndarray) -> np.ndarray:
    """Convert uint8 pixels back to float32 in [0, 1]."""
    return raw.astype(np.float32) / _LEVELS


def same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
