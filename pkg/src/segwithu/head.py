"""The uncertainty head: parameters, architecture variants and the forward pass."""

from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .field import ShapeError
from .fusion import DEFAULT_TARGET_CHANNELS, fuse_taps
from .maps import (
    DEFAULT_GAMMA,
    aleatoric_map,
    ambiguity_weight,
    anchor_map,
    calibration_map,
    entropy_map,
    margin_map,
    ranking_map,
    temper_logits,
)
from .probes import (
    DEFAULT_EPSILON,
    DEFAULT_NUM_PROBES,
    DEFAULT_SIGMA_INIT,
    base_delta,
    epistemic_map,
    inverse_softplus,
    probe_energy,
    probe_responses,
    probe_scales,
    residual_energy,
    signed_one_hot_patterns,
)
from .tensor import pointwise_linear


@dataclass
class HeadConfig:
    """Architecture hyperparameters and ablation switches of the head."""

    num_probes: int = DEFAULT_NUM_PROBES
    sigma_init: float = DEFAULT_SIGMA_INIT
    epsilon: float = DEFAULT_EPSILON
    gamma: float = DEFAULT_GAMMA
    target_channels: int = DEFAULT_TARGET_CHANNELS
    aleatoric: bool = True
    calibration_branch: bool = True
    ranking_branch: bool = True
    direct_head: bool = False
    fixed_sigma: bool = False
    single_tap: bool = False

    def __post_init__(self):
        if self.num_probes < 1:
            raise ValueError("need at least one probe")
        if self.epsilon <= 0 or self.sigma_init <= 0 or self.gamma <= 0:
            raise ValueError("epsilon, sigma_init and gamma must be positive")
        if not (self.calibration_branch or self.ranking_branch):
            raise ValueError("at least one of the calibration and ranking branches must be on")

    def patterns(self):
        return signed_one_hot_patterns(self.num_probes)

    def frozen(self):
        """Parameter names excluded from optimisation."""
        return {"alpha"} if self.fixed_sigma else set()


@dataclass
class UncertaintyBundle:
    """Everything the head returns for a batch; all maps are (B, 1, *spatial) unless noted."""

    logits: object
    probs: object
    v: object                      # (B, R, *spatial); None for the direct head
    u_epi: object
    u_ale: object                  # None when the aleatoric branch is off
    u_cal: object                  # None without the calibration branch
    u_rnk: object                  # None without the ranking branch
    u_probe: object
    u_res: object
    u_anchor: object
    m: np.ndarray
    w: np.ndarray
    H: np.ndarray
    z_tilde: object                # tempered logits (the raw logits without calibration)
    delta: object = None           # base logit perturbation A(v), (B, C, *spatial)
    extras: dict = field(default_factory=dict)

    @property
    def score(self):
        """The map used to rank voxels: U_rnk, or U_cal for a calibration-only head."""
        return self.u_rnk if self.u_rnk is not None else self.u_cal

    def numpy(self):
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, Tensor):
                val = val.data
            if f.name != "extras":
                out[f.name] = val
        return UncertaintyBundle(**out)

    def maps(self):
        """Named non-empty fields as plain arrays, for export."""
        b = self.numpy()
        names = ["v", "u_epi", "u_ale", "u_cal", "u_rnk", "u_probe", "u_res", "u_anchor",
                 "m", "w", "H", "z_tilde"]
        return {n: getattr(b, n) for n in names if getattr(b, n) is not None}


def _glorot(rng, n_out, n_in):
    return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))


def init_head_params(config, tap_channels, num_classes, seed):
    """Fresh parameters as a dict of float32 arrays.

    ``tap_channels`` lists the feature width of each tap, finest first.
    """
    rng = np.random.default_rng(seed)
    tap_channels = list(tap_channels[:1] if config.single_tap else tap_channels)
    params = {}
    if len(tap_channels) > 1:
        T = config.target_channels
        for m, F in enumerate(tap_channels):
            params[f"proj{m}.W"] = _glorot(rng, T, F)
            params[f"proj{m}.b"] = np.zeros(T)
        params["fuser.W"] = _glorot(rng, T, T * len(tap_channels))
        params["fuser.b"] = np.zeros(T)
        feat = T
    else:
        feat = tap_channels[0]

    R = config.num_probes
    if config.direct_head:
        params["direct.W"] = _glorot(rng, 1, feat)
        params["direct.b"] = np.zeros(1)
    else:
        params["psi.W"] = _glorot(rng, R, feat)
        params["psi.b"] = np.zeros(R)
        params["alpha"] = np.full(R, inverse_softplus(config.sigma_init))
        params["mixer.W"] = _glorot(rng, num_classes, R)
        params["mixer.b"] = np.zeros(num_classes)
    if config.calibration_branch:
        if config.aleatoric:
            params["ale.W"] = _glorot(rng, 1, feat) * 0.1
            params["ale.b"] = np.zeros(1)
        width = 3 if config.aleatoric else 2
        params["cal.W"] = _glorot(rng, 1, width) * 0.1
        params["cal.b"] = np.zeros(1)
    if config.ranking_branch:
        for k in ("rank.a", "rank.b", "rank.c"):
            params[k] = np.zeros(())
    return {k: np.asarray(v, dtype=np.float32) for k, v in params.items()}


def select_taps(taps, config):
    return list(taps[:1]) if config.single_tap else list(taps)


def _pair(params, name):
    return params[f"{name}.W"], params[f"{name}.b"]


def forward(params, taps, z, config):
    """Run the head on a batch.

    ``params`` values may be arrays (plain evaluation) or learnable Tensors
    (training); ``taps`` and ``z`` are backbone outputs and stay constant.
    """
    taps = select_taps(taps, config)
    z = np.asarray(z, dtype=np.float64)
    num_classes = z.shape[1]
    if num_classes < 2:
        raise ShapeError("need at least two classes")

    if len(taps) > 1:
        proj = [_pair(params, f"proj{m}") for m in range(len(taps))]
        h = fuse_taps([np.asarray(t, dtype=np.float64) for t in taps], proj, _pair(params, "fuser"))
    else:
        h = ad.Tensor(taps[0])
    if h.shape[2:] != z.shape[2:]:
        raise ShapeError(f"fused features on grid {h.shape[2:]}, logits on {z.shape[2:]}")

    p = ad.softmax(ad.Tensor(z), axis=1).data
    m = margin_map(p)
    w = ambiguity_weight(m, config.gamma)
    H = entropy_map(p)

    if config.direct_head:
        v = None
        u_epi = ad.softplus(pointwise_linear(*_pair(params, "direct"), h))
        zero = ad.Tensor(np.zeros_like(m))
        u_probe, u_res, delta = zero, zero, None
    else:
        v = probe_responses(h, _pair(params, "psi"))
        sigma = probe_scales(params["alpha"], config.epsilon)
        mixer = _pair(params, "mixer")
        u_epi = epistemic_map(z, v, sigma, mixer, config.patterns())
        delta = base_delta(v, mixer)
        u_probe = probe_energy(v)
        u_res = residual_energy(delta)

    u_ale = u_cal = None
    z_tilde = ad.Tensor(z)
    if config.calibration_branch:
        if config.aleatoric:
            u_ale = aleatoric_map(h, _pair(params, "ale"))
        u_cal = calibration_map(u_epi, u_res, u_ale, m, _pair(params, "cal"))
        z_tilde = temper_logits(z, u_cal)

    u_anchor = anchor_map(u_epi, u_res, u_cal, H, w, num_classes)
    u_rnk = None
    if config.ranking_branch:
        u_rnk = ranking_map(u_anchor, w, params["rank.a"], params["rank.b"], params["rank.c"])

    return UncertaintyBundle(
        logits=z, probs=p, v=v, u_epi=u_epi, u_ale=u_ale, u_cal=u_cal, u_rnk=u_rnk,
        u_probe=u_probe, u_res=u_res, u_anchor=u_anchor, m=m, w=w, H=H, z_tilde=z_tilde,
        delta=delta,
    )


def infer(params, taps, z, config):
    """Forward pass on plain arrays; returns a bundle of ndarrays."""
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    return forward(arrays, taps, z, config).numpy()
