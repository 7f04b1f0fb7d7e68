"""Margin weighting, aleatoric/calibration branches, tempering, anchor and ranking maps."""

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, field_op
from .field import ShapeError
from .tensor import entropy, pointwise_linear

DEFAULT_GAMMA = 4.0


def _values(x):
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def margin_map(p):
    """Top-1 minus top-2 probability per voxel. Backbone-only, so never differentiated."""
    p = _values(p)
    top2 = np.sort(p, axis=1)[:, -2:]
    return top2[:, 1:2] - top2[:, 0:1]


def ambiguity_weight(m, gamma=DEFAULT_GAMMA):
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return np.exp(-gamma * _values(m))


@field_op
def aleatoric_map(h, psi_ale):
    W, b = psi_ale
    return ad.softplus(pointwise_linear(W, b, h))


def calibration_features(u_epi, u_res, u_ale, m):
    """[log(1 + U_epi + U_res), log(1 + U_ale), m]; the middle term is dropped when u_ale is None."""
    feats = [ad.log1p(as_tensor(u_epi) + u_res)]
    if u_ale is not None:
        feats.append(ad.log1p(as_tensor(u_ale)))
    feats.append(as_tensor(m))
    return ad.concat(feats, axis=1)


@field_op
def calibration_map(u_epi, u_res, u_ale, m, psi_cal):
    W, b = psi_cal
    width = 2 if u_ale is None else 3
    if as_tensor(W).shape[1] != width:
        raise ShapeError(f"calibration projector takes {as_tensor(W).shape[1]} inputs, "
                         f"aleatoric branch implies {width}")
    return ad.softplus(pointwise_linear(W, b, calibration_features(u_epi, u_res, u_ale, m)))


@field_op
def temper_logits(z, u_cal):
    return as_tensor(z) / ad.sqrt(1.0 + as_tensor(u_cal))


def entropy_map(p):
    return entropy(p)


@field_op
def anchor_map(u_epi, u_res, u_cal, H, w, num_classes):
    """Handcrafted anchor combining perturbation energy, temperature, entropy and ambiguity.

    ``u_cal`` may be None (no calibration branch), in which case its term is zero.
    """
    out = ad.log1p(as_tensor(u_epi)) + 0.5 * ad.log1p(as_tensor(u_res))
    if u_cal is not None:
        out = out + 0.25 * ad.log1p(as_tensor(u_cal))
    return out + 0.25 * _values(H) / math.log(num_classes) + _values(w)


@field_op
def ranking_map(u_anchor, w, a, b, c):
    a, b, c = as_tensor(a), as_tensor(b), as_tensor(c)
    slope = 1.0 + 0.1 * ad.tanh(a)
    return slope * as_tensor(u_anchor) + b + ad.softplus(c) * _values(w)
