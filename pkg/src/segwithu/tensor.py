"""Field-level primitives shared by every branch of the head.

Each function accepts ndarrays or :class:`~segwithu.autodiff.Tensor` values
and returns the same kind it was given.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, field_op
from .field import NonFiniteError, ShapeError


def _flatten(f):
    b, c = f.shape[:2]
    return f.reshape(b, c, -1)


@field_op
def pointwise_linear(W, b, f):
    """Per-voxel affine map ``out[:, o] = sum_k W[o, k] f[:, k] + b[o]`` (a 1x1 convolution)."""
    W, b, f = as_tensor(W), as_tensor(b), as_tensor(f)
    if W.ndim != 2 or b.shape != (W.shape[0],):
        raise ShapeError(f"weights {W.shape} and bias {b.shape} do not form a linear map")
    if f.ndim < 3 or f.shape[1] != W.shape[1]:
        raise ShapeError(f"field has {f.shape[1] if f.ndim > 1 else '?'} channels, map expects {W.shape[1]}")
    out = ad.einsum("oc,bcn->bon", W, _flatten(f)) + b.reshape(1, -1, 1)
    return out.reshape((f.shape[0], W.shape[0]) + f.shape[2:])


@field_op
def softmax(z):
    z = as_tensor(z)
    if z.ndim < 2 or z.shape[1] < 2:
        raise ShapeError("softmax needs at least two channels")
    _require_finite(z, "softmax")
    return ad.softmax(z, axis=1)


@field_op
def softplus(x):
    x = as_tensor(x)
    _require_finite(x, "softplus")
    return ad.softplus(x)


def entropy(p):
    """Shannon entropy over the channel axis with 0 log 0 = 0; returns one channel."""
    p = np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    return -(p * np.log(safe)).sum(axis=1, keepdims=True)


def _require_finite(t, what):
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"{what}: non-finite input")
