"""Rank-1 posterior probes and the perturbation-energy maps they induce."""

import math

import numpy as np

from . import autodiff as ad
from .autodiff import as_tensor, field_op
from .field import ShapeError
from .tensor import pointwise_linear

DEFAULT_NUM_PROBES = 8
DEFAULT_SIGMA_INIT = 0.1
DEFAULT_EPSILON = 1e-6


def signed_one_hot_patterns(num_probes):
    """The 2R patterns {+e_r, -e_r}, ordered +e_0, -e_0, +e_1, ..."""
    eye = np.eye(num_probes)
    return np.stack([s * eye[r] for r in range(num_probes) for s in (1.0, -1.0)])


def inverse_softplus(y):
    """alpha such that softplus(alpha) == y, for y > 0."""
    return float(y + math.log(-math.expm1(-y)))


@field_op
def probe_responses(h, psi):
    W, b = psi
    return pointwise_linear(W, b, h)


@field_op
def probe_scales(alpha, epsilon=DEFAULT_EPSILON):
    return ad.softplus(as_tensor(alpha)) + epsilon


@field_op
def base_delta(v, mixer):
    W, b = mixer
    return pointwise_linear(W, b, v)


@field_op
def pattern_delta(v, sigma, u, mixer):
    """Logit perturbation for one pattern: mixer applied to sigma * u * v per voxel."""
    v, sigma = as_tensor(v), as_tensor(sigma)
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (v.shape[1],) or sigma.shape != (v.shape[1],):
        raise ShapeError(f"pattern {u.shape} / scales {sigma.shape} do not match {v.shape[1]} probes")
    scale = (sigma * u).reshape((1, -1) + (1,) * (v.ndim - 2))
    W, b = mixer
    return pointwise_linear(W, b, v * scale)


@field_op
def pattern_probabilities(z, v, sigma, mixer, patterns):
    """Softmax of z + delta(u_k) for every pattern, shape (B, K, C, N)."""
    z, v, sigma = as_tensor(z), as_tensor(v), as_tensor(sigma)
    patterns = np.asarray(patterns, dtype=np.float64)
    if patterns.ndim != 2 or patterns.shape[1] != v.shape[1]:
        raise ShapeError(f"patterns {patterns.shape} do not match {v.shape[1]} probes")
    W, bias = (as_tensor(m) for m in mixer)
    B, C = z.shape[:2]
    zf = z.reshape(B, C, -1)
    vf = v.reshape(B, v.shape[1], -1)
    # coef[k, r] = u_k[r] * sigma_r; delta[b, k, c, n] = sum_r W[c, r] coef[k, r] v[b, r, n]
    coef = as_tensor(patterns) * sigma.reshape(1, -1)
    delta = ad.einsum("cr,kr,brn->bkcn", W, coef, vf) + bias.reshape(1, 1, -1, 1)
    return ad.softmax(zf.reshape(B, 1, C, -1) + delta, axis=2)


@field_op
def epistemic_map(z, v, sigma, mixer, patterns):
    """Sum over classes of the population variance across patterns of perturbed probabilities."""
    patterns = np.asarray(patterns, dtype=np.float64)
    if len(patterns) < 2:
        raise ShapeError("epistemic map needs at least two patterns")
    z = as_tensor(z)
    p = pattern_probabilities(z, v, sigma, mixer, patterns)
    centred = p - p.mean(axis=1, keepdims=True)
    u = (centred * centred).mean(axis=1).sum(axis=1, keepdims=True)
    return u.reshape((z.shape[0], 1) + z.shape[2:])


@field_op
def probe_energy(v):
    v = as_tensor(v)
    return (v * v).mean(axis=1, keepdims=True)


@field_op
def residual_energy(delta):
    delta = as_tensor(delta)
    return (delta * delta).mean(axis=1, keepdims=True)
