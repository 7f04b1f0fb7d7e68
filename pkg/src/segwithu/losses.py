"""Training objective terms and their weighted sum.

All terms take the batch as a whole: statistics such as standardisation,
pair sampling and the tail softmax run over every voxel of every case in
the batch.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, field_op

STD_EPS = 1e-6
LOG_CLAMP = math.log(1e-12)
MAX_PAIRS = 4096


@dataclass
class LossWeights:
    nll: float = 0.5
    ec: float = 0.25
    pair: float = 0.25
    tail: float = 0.25
    trust: float = 0.05
    anchor: float = 0.05
    res: float = 0.05
    seg: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be nonnegative")

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


@dataclass
class RankingHyper:
    tau_ec: float = 1.0
    tau_pair: float = 1.0
    delta: float = 0.1
    tail_temperature: float = 1.0
    max_pairs: int = MAX_PAIRS

    def __post_init__(self):
        if min(self.tau_ec, self.tau_pair, self.tail_temperature) <= 0:
            raise ValueError("temperatures must be positive")
        if self.delta < 0:
            raise ValueError("ranking margin must be nonnegative")
        if self.max_pairs < 1:
            raise ValueError("need at least one pair")


def predicted_labels(z):
    """argmax over channels; ties go to the lowest class index."""
    z = z.data if isinstance(z, Tensor) else np.asarray(z)
    return np.argmax(z, axis=1)


def error_indicator(z, y):
    """1 where the raw backbone argmax disagrees with the label. Shape (B, 1, *spatial)."""
    z = z.data if isinstance(z, Tensor) else np.asarray(z)
    y = np.asarray(y)
    if y.ndim == z.ndim:
        y = y[:, 0]
    num_classes = z.shape[1]
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return (predicted_labels(z) != y).astype(np.float64)[:, None]


@field_op
def standardize(u):
    u = as_tensor(u)
    centred = u - u.mean()
    std = ad.sqrt((centred * centred).mean())
    return centred / (std + STD_EPS)


def _flat_labels(y, z):
    y = np.asarray(y)
    if y.ndim == z.ndim:
        y = y[:, 0]
    return y.reshape(y.shape[0], -1).astype(np.intp)


@field_op
def nll_loss(z_tilde, y):
    z_tilde = as_tensor(z_tilde)
    B, C = z_tilde.shape[:2]
    logp = ad.log_softmax(z_tilde.reshape(B, C, -1), axis=1)
    yf = _flat_labels(y, z_tilde)
    onehot = np.zeros(logp.shape)
    np.put_along_axis(onehot, yf[:, None], 1.0, axis=1)
    picked = (logp * onehot).sum(axis=1)
    return -ad.clip_min(picked, LOG_CLAMP).mean()


@field_op
def ec_loss(u_hat, e, tau=1.0):
    s = as_tensor(u_hat) / tau
    return (ad.softplus(s) - s * np.asarray(e, dtype=np.float64)).mean()


def sample_pairs(e, num_pairs, seed):
    """Indices (error, correct) drawn uniformly with replacement; empty if either set is."""
    flat = np.asarray(e).reshape(-1)
    err = np.flatnonzero(flat > 0.5)
    cor = np.flatnonzero(flat <= 0.5)
    if len(err) == 0 or len(cor) == 0:
        return err[:0], cor[:0]
    k = min(num_pairs, len(err) * len(cor))
    rng = np.random.default_rng(seed)
    return err[rng.integers(0, len(err), k)], cor[rng.integers(0, len(cor), k)]


@field_op
def pairwise_loss(u, e, delta=0.1, tau=1.0, num_pairs=MAX_PAIRS, seed=0):
    i, j = sample_pairs(e, num_pairs, seed)
    if len(i) == 0:
        return ad.Tensor(0.0)
    flat = as_tensor(u).reshape(-1)
    gap = ad.take(flat, j, axis=0) - ad.take(flat, i, axis=0) + delta
    return ad.softplus(gap / tau).mean()


@field_op
def tail_loss(u, e, temperature=1.0):
    flat = as_tensor(u).reshape(-1)
    omega = ad.softmax(flat * (-1.0 / temperature), axis=0)
    return (omega * np.asarray(e, dtype=np.float64).reshape(-1)).sum()


@field_op
def trust_loss(delta, z):
    delta = as_tensor(delta)
    z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64)
    energy = (delta * delta).sum(axis=1).mean()
    drift = ad.softmax(as_tensor(z) + delta, axis=1) - ad.softmax(as_tensor(z), axis=1).data
    return energy + 0.25 * (drift * drift).sum(axis=1).mean()


@field_op
def anchor_consistency_loss(u_rnk, u_anchor, beta=1.0):
    target = standardize(ad.stop_gradient(u_anchor))
    return ad.smooth_l1(standardize(as_tensor(u_rnk)) - target, beta).mean()


@field_op
def residual_reg_loss(w, u_res):
    return ((1.0 - np.asarray(w, dtype=np.float64)) * as_tensor(u_res)).mean()


def total_loss(terms, weights):
    """Weighted sum of loss terms.

    ``terms`` maps term name to either a value or a zero-argument callable;
    callables whose weight is zero are never evaluated.
    """
    total = ad.Tensor(0.0)
    tensor_mode = False
    for name, lam in weights.items():
        if lam == 0 or name not in terms:
            continue
        value = terms[name]
        value = value() if callable(value) else value
        tensor_mode = tensor_mode or isinstance(value, Tensor)
        total = total + lam * as_tensor(value)
    return total if tensor_mode else float(total.data)
