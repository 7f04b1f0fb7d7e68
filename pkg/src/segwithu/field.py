"""Dense fields: arrays laid out as (batch, channels, *spatial)."""

import numpy as np


class NonFiniteError(FloatingPointError):
    """A field picked up NaN or Inf."""


class ShapeError(ValueError):
    """Incompatible field shapes or channel counts."""


def check_finite(x, what="field"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what}: non-finite values")
    return x


def as_field(x, dtype=np.float64):
    """Validate an array as a dense field of rank >= 3 with finite entries."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim < 3:
        raise ShapeError(f"dense field needs (batch, channels, *spatial), got shape {arr.shape}")
    if arr.size == 0:
        raise ShapeError("dense field is empty")
    return check_finite(arr)


def spatial_shape(x):
    return tuple(x.shape[2:])


def channels(x):
    return x.shape[1]
