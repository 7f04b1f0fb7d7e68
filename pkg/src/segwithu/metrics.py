"""Voxel-level segmentation and selective-prediction metrics.

Probability and logit fields are (B, C, *spatial); labels are (B, *spatial)
integer arrays; scores and error indicators may have any shape and are
flattened. Ties in any sort are broken by original voxel index.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

NUM_THRESHOLDS = 101
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class RiskCoverageCurve:
    coverage: np.ndarray
    risk: np.ndarray
    kind: str = "method"


@dataclass
class CaseMetrics:
    case_id: str
    method: str
    dice: float
    brier: float
    auroc: float
    aurc: float


def _voxels(p):
    """(B, C, *spatial) -> (N, C)."""
    p = np.asarray(p, dtype=np.float64)
    return np.moveaxis(p, 1, -1).reshape(-1, p.shape[1])


def _labels(y, p_shape):
    y = np.asarray(y)
    if y.ndim == len(p_shape):
        y = y[:, 0]
    if y.shape != (p_shape[0],) + tuple(p_shape[2:]):
        raise ValueError(f"labels {y.shape} do not match field {p_shape}")
    return y.reshape(-1)


def hard_labels(p):
    """argmax over the channel axis, lowest index on ties."""
    return np.argmax(np.asarray(p), axis=1)


def dice(pred, gt, num_classes):
    """Mean foreground Dice over classes present in either mask; 1.0 with no foreground at all."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    for arr in (pred, gt):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")
    scores = []
    for c in range(1, num_classes):
        x, y = pred == c, gt == c
        denom = x.sum() + y.sum()
        if denom:
            scores.append(2.0 * np.logical_and(x, y).sum() / denom)
    return float(np.mean(scores)) if scores else 1.0


def brier(p, y):
    P = _voxels(p)
    labels = _labels(y, np.shape(p))
    onehot = np.zeros_like(P)
    onehot[np.arange(len(labels)), labels] = 1.0
    return float(((P - onehot) ** 2).sum(axis=1).mean())


def auroc(u, e):
    """Mann-Whitney AUROC with mid-ranks; NaN when e has only one class."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    e = np.asarray(e).reshape(-1) > 0.5
    n1 = int(e.sum())
    n0 = e.size - n1
    if n1 == 0 or n0 == 0:
        return math.nan
    ranks = rankdata(u, method="average")
    return float((ranks[e].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def risk_coverage_curve(u, e, kind="method"):
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    order = np.argsort(u, kind="stable")
    n = e.size
    k = np.arange(1, n + 1)
    return RiskCoverageCurve(coverage=k / n, risk=np.cumsum(e[order]) / k, kind=kind)


def aurc(curve):
    """Trapezoidal area over the attained coverages 1/N .. 1."""
    cov, risk = curve.coverage, curve.risk
    if len(cov) < 2:
        return 0.0
    return float(np.sum(0.5 * (risk[1:] + risk[:-1]) * np.diff(cov)))


def reference_curves(e):
    """(random-rejection, oracle) curves for an error indicator."""
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    n = e.size
    cov = np.arange(1, n + 1) / n
    random = RiskCoverageCurve(cov, np.full(n, e.mean()), kind="random")
    return random, risk_coverage_curve(e, e, kind="oracle")


def accuracy_threshold_curve(p, y, num_thresholds=NUM_THRESHOLDS):
    """(threshold, accuracy, retained fraction) for voxels whose max probability exceeds the threshold.

    Accuracy is NaN where nothing is retained.
    """
    P = _voxels(p)
    labels = _labels(y, np.shape(p))
    conf = P.max(axis=1)
    correct = P.argmax(axis=1) == labels
    rows = []
    for t in np.linspace(0.0, 1.0, num_thresholds):
        keep = conf > t
        n = int(keep.sum())
        acc = float(correct[keep].mean()) if n else math.nan
        rows.append((float(t), acc, n / len(conf)))
    return rows


def entropy_score(p):
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    return -(p * np.log(safe)).sum(axis=1, keepdims=True)


def softmax_np(z, temperature=1.0):
    z = np.asarray(z, dtype=np.float64) / temperature
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def temperature_nll(z, y, temperature):
    Z = _voxels(z) / temperature
    labels = _labels(y, np.shape(z))
    Z = Z - Z.max(axis=1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def fit_temperature(z_val, y_val, lo=0.05, hi=20.0, tol=1e-4):
    """Scalar temperature minimising validation NLL, by golden-section search on log T."""
    z_val = np.asarray(z_val)
    if z_val.size == 0:
        raise ValueError("validation set is empty")
    a, b = math.log(lo), math.log(hi)

    def f(log_t):
        return temperature_nll(z_val, y_val, math.exp(log_t))

    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return math.exp(0.5 * (a + b))


def case_metrics(case_id, method, probs, y, score, errors):
    """Dice/Brier from ``probs``; AUROC/AURC from ranking ``score`` against ``errors``."""
    num_classes = np.shape(probs)[1]
    labels = np.asarray(y)
    if labels.ndim == np.ndim(probs):
        labels = labels[:, 0]
    return CaseMetrics(
        case_id=case_id,
        method=method,
        dice=dice(hard_labels(probs), labels, num_classes),
        brier=brier(probs, labels),
        auroc=auroc(score, errors),
        aurc=aurc(risk_coverage_curve(score, errors)),
    )
