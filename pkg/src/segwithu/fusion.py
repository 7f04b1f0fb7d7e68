"""Multi-tap feature fusion: project, resize to the finest grid, concatenate, fuse."""

import numpy as np

from . import autodiff as ad
from .autodiff import as_tensor, field_op
from .field import ShapeError
from .tensor import pointwise_linear

DEFAULT_TARGET_CHANNELS = 32


def target_grid(taps):
    return tuple(int(n) for n in np.max([t.shape[2:] for t in taps], axis=0))


@field_op
def resize_nearest(f, out_shape):
    """Nearest-neighbour resize of every spatial axis; integer upscales repeat each voxel."""
    f = as_tensor(f)
    if len(out_shape) != f.ndim - 2:
        raise ShapeError(f"cannot resize {f.ndim - 2}-D field to {out_shape}")
    for axis, (n_in, n_out) in enumerate(zip(f.shape[2:], out_shape)):
        if n_in != n_out:
            idx = (np.arange(n_out) * n_in) // n_out
            f = ad.take(f, idx, axis=axis + 2)
    return f


@field_op
def fuse_taps(taps, proj, fuser):
    """Fuse tapped feature maps into one representation on the finest grid.

    Parameters
    ----------
    taps : sequence of fields
        Feature maps ``(B, F_m, *spatial_m)``; spatial extents may differ.
    proj : sequence of (W, b)
        One projection per tap, ``F_m -> target_channels``.
    fuser : (W, b)
        Linear map ``M * target_channels -> target_channels``.
    """
    if len(taps) == 0:
        raise ShapeError("need at least one tap")
    if len(proj) != len(taps):
        raise ShapeError(f"{len(taps)} taps but {len(proj)} projections")
    taps = [as_tensor(t) for t in taps]
    batch = {t.shape[0] for t in taps}
    if len(batch) != 1:
        raise ShapeError(f"taps disagree on batch size: {sorted(batch)}")
    if len({t.ndim for t in taps}) != 1:
        raise ShapeError("taps have different spatial rank")

    grid = target_grid([t.data for t in taps])
    projected = [resize_nearest(pointwise_linear(W, b, t), grid) for t, (W, b) in zip(taps, proj)]
    stacked = projected[0] if len(projected) == 1 else ad.concat(projected, axis=1)
    W, b = fuser
    if as_tensor(W).shape[1] != stacked.shape[1]:
        raise ShapeError(f"fuser expects {as_tensor(W).shape[1]} channels, got {stacked.shape[1]}")
    return pointwise_linear(W, b, stacked)
