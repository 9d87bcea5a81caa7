"""Input validation helpers shared by the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


def check_image(X, in_channels: int = 3) -> np.ndarray:
    """Coerce an image to a float32 (C,H,W) array in [0, 1]."""
    img = X.data if isinstance(X, Tensor) else np.asarray(X, dtype=np.float32)
    if img.ndim == 4 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 3 or img.shape[0] != in_channels:
        raise ShapeError(f"expected ({in_channels},H,W) image, got {img.shape}")
    img = img.astype(np.float32, copy=False)
    if img.min() < 0.0 or img.max() > 1.0:
        raise ShapeError("image values must be normalized to [0, 1]")
    return img


def check_batches(X, in_channels: int, input_size: tuple[int, int]) -> list[Tensor]:
    """Coerce an iterable of (N,C,H,W) arrays into f32 Tensors."""
    batches = []
    for i, b in enumerate(X):
        arr = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[np.newaxis]
        if arr.ndim != 4 or arr.shape[1] != in_channels:
            raise ShapeError(f"batch {i}: expected (N,{in_channels},H,W), got {arr.shape}")
        if (arr.shape[2], arr.shape[3]) != tuple(input_size):
            raise ShapeError(f"batch {i}: spatial size {arr.shape[2:]} != {input_size}")
        batches.append(Tensor(arr.astype(np.float32, copy=False), "f32"))
    return batches
