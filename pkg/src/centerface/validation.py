"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numbers

import numpy as np

from .core import Box, FaceAnnotation


def check_image(image, *, name: str = "image") -> np.ndarray:
    """Return ``image`` as a float32 ``(3, H, W)`` array or raise ``ValueError``."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"{name} must have shape (3, H, W), got {arr.shape}")
    if arr.shape[1] == 0 or arr.shape[2] == 0:
        raise ValueError(f"{name} has a zero dimension: {arr.shape}")
    if not np.issubdtype(arr.dtype, np.number):
        raise ValueError(f"{name} must be numeric, got dtype {arr.dtype}")
    arr = arr.astype(np.float32, copy=False)
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_images(images) -> list[np.ndarray]:
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = [images]
    return [check_image(im, name=f"image {i}") for i, im in enumerate(images)]


def check_faces(faces) -> list[FaceAnnotation]:
    out = []
    for f in faces:
        if isinstance(f, FaceAnnotation):
            out.append(f)
        elif isinstance(f, Box):
            out.append(FaceAnnotation(f))
        else:
            out.append(FaceAnnotation(Box(*f)))
    return out


def check_fraction(value, name: str, *, low: float = 0.0, high: float = 1.0, low_open: bool = False) -> float:
    if not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    ok = (low < value if low_open else low <= value) and value <= high
    if not ok:
        bracket = "(" if low_open else "["
        raise ValueError(f"{name} must lie in {bracket}{low}, {high}], got {value}")
    return float(value)


def check_dims(dims, name: str = "input_size", multiple: int = 1) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in dims)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a (width, height) pair, got {dims!r}") from None
    if w <= 0 or h <= 0 or w % multiple or h % multiple:
        raise ValueError(f"{name} must be positive multiples of {multiple}, got {w}x{h}")
    return w, h
