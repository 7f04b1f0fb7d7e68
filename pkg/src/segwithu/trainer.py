"""Optimise the head on a frozen backbone: AdamW, cosine schedule, clipping, early stopping."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .field import NonFiniteError
from .head import HeadConfig, forward, init_head_params
from .losses import LossWeights, RankingHyper, error_indicator
from .metrics import aurc, risk_coverage_curve
from .objective import objective

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr_max: float = 1e-3
    lr_min: float = 3e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2
    clip_norm: float = 12.0
    max_epochs: int = 200
    early_stop_tolerance: int = 10
    batch_size: int = 5
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    ranking: RankingHyper = field(default_factory=RankingHyper)
    head: HeadConfig = field(default_factory=HeadConfig)

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.batch_size < 1 or self.max_epochs < 0 or self.early_stop_tolerance < 1:
            raise ValueError("batch_size and early_stop_tolerance must be >= 1, max_epochs >= 0")


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0

    def append(self, record):
        self.records.append(record)

    def column(self, key):
        return [r.get(key) for r in self.records]


def cosine_lr(epoch, config):
    frac = epoch / config.max_epochs if config.max_epochs else 0.0
    return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + math.cos(math.pi * frac))


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))


def clip_gradients(grads, clip_norm):
    """Rescale all gradients together so their global L2 norm is at most ``clip_norm``."""
    norm = global_norm(grads)
    if norm <= clip_norm:
        return dict(grads)
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}


def init_adam_state():
    return {"step": 0, "m": {}, "v": {}}


def adamw_step(params, grads, state, lr, config):
    """One AdamW update: decoupled weight decay, then the bias-corrected Adam step.

    Parameters without a gradient entry are left untouched.
    """
    b1, b2 = config.betas
    step = state["step"] + 1
    new_params, m_all, v_all = dict(params), dict(state["m"]), dict(state["v"])
    for name, g in grads.items():
        theta = np.asarray(params[name], dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        m = b1 * m_all.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * v_all.get(name, 0.0) + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        theta = theta - lr * config.weight_decay * theta
        new_params[name] = theta - lr * m_hat / (np.sqrt(v_hat) + config.eps)
        m_all[name], v_all[name] = m, v
    return new_params, {"step": step, "m": m_all, "v": v_all}


def collate(cases):
    """Stack single-case arrays along the batch axis."""
    taps = [np.concatenate([c.taps[m] for c in cases]) for m in range(len(cases[0].taps))]
    z = np.concatenate([c.logits for c in cases])
    y = np.concatenate([c.labels for c in cases])
    return taps, z, y


def _seed(*parts):
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def loss_and_grads(params, batch, config, pair_seed, trainable=None):
    """Total loss, per-term values and gradients for every trainable parameter."""
    taps, z, y = batch
    trainable = set(params) - config.head.frozen() if trainable is None else trainable
    leaves = {k: (ad.parameter(v) if k in trainable else np.asarray(v, dtype=np.float64))
              for k, v in params.items()}
    bundle = forward(leaves, taps, z, config.head)
    total, terms = objective(bundle, y, config.weights, config.ranking, pair_seed)
    total = ad.as_tensor(total)
    if not np.isfinite(total.data):
        raise NonFiniteError(f"non-finite training loss; terms={terms}")
    total.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for k, t in leaves.items() if k in trainable}
    return float(total.data), terms, grads


def validation_score(params, cases, head_config):
    """Mean per-case AURC of the head's ranking score (lower is better)."""
    if not cases:
        return math.nan
    taps, z, y = collate(cases)
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    score = forward(arrays, taps, z, head_config).score
    score = np.asarray(getattr(score, "data", score))
    errors = error_indicator(z, y)
    return float(np.mean([aurc(risk_coverage_curve(score[i], errors[i])) for i in range(len(cases))]))


def _epoch_loss(params, cases, config, epoch):
    totals, terms_acc = [], {}
    for step, start in enumerate(range(0, len(cases), config.batch_size)):
        batch = collate(cases[start:start + config.batch_size])
        taps, z, y = batch
        arrays = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        bundle = forward(arrays, taps, z, config.head)
        total, terms = objective(bundle, y, config.weights, config.ranking,
                                 _seed(config.seed, epoch, step))
        totals.append(float(np.asarray(getattr(total, "data", total))))
        for k, v in terms.items():
            terms_acc.setdefault(k, []).append(v)
    return float(np.mean(totals)), {k: float(np.mean(v)) for k, v in terms_acc.items()}


def train_head(train_cases, val_cases, config, params=None):
    """Fit the head; returns (best parameters as float32 arrays, TrainHistory).

    Epoch 0 records the untouched initial parameters. Training stops early
    once the validation score has not improved for ``early_stop_tolerance``
    consecutive epochs.
    """
    if not train_cases:
        raise ValueError("training set is empty")
    if params is None:
        tap_channels = [t.shape[1] for t in train_cases[0].taps]
        params = init_head_params(config.head, tap_channels, train_cases[0].logits.shape[1],
                                  _seed(config.seed, 7))
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    trainable = set(params) - config.head.frozen()

    history = TrainHistory()
    loss0, terms0 = _epoch_loss(params, train_cases, config, 0)
    best_score = validation_score(params, val_cases, config.head)
    history.append({"epoch": 0, "lr": 0.0, "loss": loss0, **terms0, "val_score": best_score})
    best_params, stale = dict(params), 0
    state = init_adam_state()

    for epoch in range(1, config.max_epochs + 1):
        lr = cosine_lr(epoch - 1, config)
        order = np.random.default_rng(_seed(config.seed, epoch, 0xC0FFEE)).permutation(len(train_cases))
        shuffled = [train_cases[i] for i in order]
        totals, terms_acc = [], {}
        for step, start in enumerate(range(0, len(shuffled), config.batch_size)):
            batch = collate(shuffled[start:start + config.batch_size])
            loss, terms, grads = loss_and_grads(params, batch, config, _seed(config.seed, epoch, step),
                                                trainable)
            grads = clip_gradients(grads, config.clip_norm)
            params, state = adamw_step(params, grads, state, lr, config)
            totals.append(loss)
            for k, v in terms.items():
                terms_acc.setdefault(k, []).append(v)

        score = validation_score(params, val_cases, config.head)
        history.append({"epoch": epoch, "lr": lr, "loss": float(np.mean(totals)),
                        **{k: float(np.mean(v)) for k, v in terms_acc.items()}, "val_score": score})
        log.debug("epoch %d lr %.2e loss %.5f val %.6f", epoch, lr, history.records[-1]["loss"], score)
        if score < best_score:
            best_score, best_params, stale = score, dict(params), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.early_stop_tolerance:
                break

    return {k: np.asarray(v, dtype=np.float32) for k, v in best_params.items()}, history
