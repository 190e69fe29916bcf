"""Gray-scale image mapping: label-conditioned restoration targets.

A normalized image ``t`` with class label ``a`` is mapped to
``t - (-1)**a * d / 2``, so benign images are darkened by ``d/2`` and
malignant ones brightened by ``d/2``. Targets are deliberately not clamped,
which keeps the two candidate targets exactly ``d`` apart.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput

DEFAULT_SHIFT = 0.5


@dataclass(frozen=True, eq=False)
class GsimTarget:
    pixels: np.ndarray
    shift_distance: float


def _as_image(image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInput(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("image contains non-finite pixels")
    return arr


def normalize_image(raw) -> np.ndarray:
    """Per-image min-max scaling to [0, 1]; constant images become zeros."""
    arr = _as_image(raw)
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    out = (arr - lo) / (hi - lo)
    # guard against 1 + ulp from the division
    return np.clip(out, 0.0, 1.0)


def check_label(label) -> int:
    if isinstance(label, (bool, np.bool_)):
        label = int(label)
    if isinstance(label, str):
        if label.strip() not in ("0", "1"):
            raise InvalidInput(f"label must be 0 or 1, got {label!r}")
        return int(label)
    try:
        as_int = int(label)
    except (TypeError, ValueError):
        raise InvalidInput(f"label must be 0 or 1, got {label!r}") from None
    if as_int != label or as_int not in (0, 1):
        raise InvalidInput(f"label must be 0 or 1, got {label!r}")
    return as_int


def label_shift(label, d: float) -> float:
    """Signed offset added to every pixel: ``-d/2`` for class 0, ``+d/2`` for class 1."""
    a = check_label(label)
    return -((-1.0) ** a) * d / 2.0


def gsim_target(image, label, d: float = DEFAULT_SHIFT) -> GsimTarget:
    d = float(d)
    if not np.isfinite(d) or d < 0:
        raise InvalidInput(f"shift distance d must be finite and >= 0, got {d}")
    arr = _as_image(image)
    return GsimTarget(pixels=arr + label_shift(label, d), shift_distance=d)


def gsim_batch(images: np.ndarray, labels, d: float = DEFAULT_SHIFT) -> np.ndarray:
    """Vectorized targets for a stack of images of shape (N, ..., H, W)."""
    d = float(d)
    if not np.isfinite(d) or d < 0:
        raise InvalidInput(f"shift distance d must be finite and >= 0, got {d}")
    images = np.asarray(images)
    labels = np.asarray(labels)
    if labels.shape != images.shape[:1]:
        raise InvalidInput("one label per image required")
    if not np.all((labels == 0) | (labels == 1)):
        raise InvalidInput("labels must be 0 or 1")
    shifts = np.where(labels == 1, d / 2.0, -d / 2.0).astype(images.dtype)
    return images + shifts.reshape((-1,) + (1,) * (images.ndim - 1))
