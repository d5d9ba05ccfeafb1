"""Input validation helpers used at module boundaries."""

import math

import numpy as np
from sklearn.utils.validation import check_array

from .errors import ValidationError


def check_points(points, name="points", min_points=1):
    """Return ``points`` as a float64 ``(n, 2)`` array or raise ValidationError."""
    try:
        arr = check_array(points, dtype=np.float64, ensure_2d=True,
                          ensure_min_samples=0, ensure_all_finite=True)
    except ValueError as exc:
        raise ValidationError(f"{name}: {exc}") from exc
    if arr.shape[1] != 2:
        raise ValidationError(f"{name}: expected shape (n, 2), got {arr.shape}")
    if arr.shape[0] < min_points:
        raise ValidationError(
            f"{name}: need at least {min_points} point(s), got {arr.shape[0]}")
    return arr


def check_positive(value, name):
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_nonnegative(value, name):
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise ValidationError(f"{name} must be a non-negative finite number, got {value!r}")
    return value


def check_finite(value, name):
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return value


def check_pose(pose, name="pose"):
    """Validate a planar pose ``(x, y, theta)`` and return it as a float tuple."""
    try:
        x, y, theta = (float(v) for v in pose)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name} must be (x, y, theta): {exc}") from exc
    if not all(math.isfinite(v) for v in (x, y, theta)):
        raise ValidationError(f"{name} must be finite, got {pose!r}")
    return x, y, theta


def check_image(pixels, name="image"):
    """Validate a 2-D intensity array with values in [0, 255]."""
    arr = np.asarray(pixels)
    if arr.ndim != 2 or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.number):
        raise ValidationError(f"{name} must be numeric")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    if arr.min() < 0 or arr.max() > 255:
        raise ValidationError(f"{name} intensities must lie in [0, 255]")
    return arr
