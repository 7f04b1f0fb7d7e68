"""Seeded synthetic stand-in for a frozen segmentation backbone.

A case is built in three steps:

1. smooth random class-score fields; their argmax is the label map;
2. a latent logit field mixing the one-hot labels with a blurred copy, plus
   smooth noise, scaled to an over-confident logit range. The un-blurred
   share keeps the argmax equal to the label when there is no noise. Near
   region boundaries the blurred share thins the margin and the noise
   amplitude rises (interior voxels keep ``interior_noise`` of it), so noise
   flips boundary voxels far more often than interior ones;
3. feature taps: fixed linear transforms of the backbone's internal latent
   (clean blurred scores and the noise field), one per resolution, plus
   per-tap noise. Coarser taps average-pool the latent first.

The tap transforms depend only on the config seed, never on the case.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter

SPLIT_OFFSETS = {"train": 0, "val": 1_000_000, "test": 2_000_000}


@dataclass
class SynthConfig:
    shape: tuple = (32, 32)
    num_classes: int = 3
    tap_channels: tuple = (16, 8)
    tap_strides: tuple = (1, 2)
    region_smoothness: float = 4.0
    blur: float = 1.5
    blur_share: float = 0.45
    noise: float = 0.6
    noise_smoothness: float = 1.0
    interior_noise: float = 0.3
    logit_scale: float = 8.0
    tap_noise: float = 0.3
    artifact: float = 1.0
    artifact_coverage: float = 0.15
    seed: int = 0

    def __post_init__(self):
        self.shape = tuple(int(n) for n in self.shape)
        self.tap_channels = tuple(int(n) for n in self.tap_channels)
        self.tap_strides = tuple(int(n) for n in self.tap_strides)
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if min(self.shape) < 4:
            raise ValueError("spatial extents must be at least 4")
        if not 0 <= self.interior_noise <= 1:
            raise ValueError("interior_noise is a fraction in [0, 1]")
        if not 0 <= self.artifact_coverage < 1:
            raise ValueError("artifact_coverage is a fraction in [0, 1)")
        if self.noise < 0 or self.tap_noise < 0 or self.artifact < 0:
            raise ValueError("noise levels must be nonnegative")
        if not 0 <= self.blur_share < 0.5:
            raise ValueError("blur_share must lie in [0, 0.5) to keep noiseless argmax exact")
        if len(self.tap_channels) != len(self.tap_strides):
            raise ValueError("one stride per tap")
        for s in self.tap_strides:
            if any(n % s for n in self.shape):
                raise ValueError(f"stride {s} does not divide {self.shape}")


@dataclass
class SynthCase:
    case_id: str
    taps: list
    logits: np.ndarray
    labels: np.ndarray
    extras: dict = field(default_factory=dict)


def _backbone_transforms(config):
    rng = np.random.default_rng([config.seed, 0])
    width = 2 * config.num_classes + 1
    return [rng.normal(0.0, 1.0 / np.sqrt(width), size=(F, width)) for F in config.tap_channels]


def _avg_pool(x, stride):
    if stride == 1:
        return x
    c, spatial = x.shape[0], x.shape[1:]
    shape = [c]
    for n in spatial:
        shape += [n // stride, stride]
    pooled = x.reshape(shape)
    return pooled.mean(axis=tuple(range(2, 2 + 2 * len(spatial), 2)))


def _unit_noise(rng, shape, smoothness):
    eps = rng.normal(size=shape)
    if smoothness > 0:
        eps = gaussian_filter(eps, sigma=(0,) + (smoothness,) * (len(shape) - 1))
    return eps / (eps.std() + 1e-12)


def _artifact_mask(rng, shape, config):
    """Smooth blobs in [0, 1] covering about ``artifact_coverage`` of the grid."""
    field_ = gaussian_filter(rng.normal(size=shape), sigma=config.region_smoothness, mode="wrap")
    field_ = field_ / (field_.std() + 1e-12)
    if config.artifact_coverage <= 0:
        return np.zeros(shape)
    cut = np.quantile(field_, 1.0 - config.artifact_coverage)
    return np.clip(2.0 * (field_ - cut), 0.0, 1.0)


def generate_case(config, case_index):
    """Deterministic case number ``case_index`` (global across splits)."""
    rng = np.random.default_rng([config.seed, 1, case_index])
    C, shape = config.num_classes, config.shape
    spatial_sigma = (0,) + (config.region_smoothness,) * len(shape)

    scores = gaussian_filter(rng.normal(size=(C,) + shape), sigma=spatial_sigma, mode="wrap")
    labels = np.argmax(scores, axis=0)
    onehot = (np.arange(C).reshape((C,) + (1,) * len(shape)) == labels).astype(np.float64)
    blurred = gaussian_filter(onehot, sigma=(0,) + (config.blur,) * len(shape), mode="nearest")
    clean = (1.0 - config.blur_share) * onehot + config.blur_share * blurred

    eps = _unit_noise(rng, (C,) + shape, config.noise_smoothness)
    top2 = np.sort(blurred, axis=0)[-2:]
    ambiguity = 1.0 - (top2[1] - top2[0])
    amplitude = config.noise * (config.interior_noise + (1.0 - config.interior_noise) * ambiguity)
    art = _artifact_mask(rng, shape, config)
    glitch = _unit_noise(rng, (C,) + shape, config.noise_smoothness)
    latent = clean + amplitude * eps + config.artifact * art * glitch
    logits = config.logit_scale * latent

    internal = np.concatenate([blurred, eps, art[None]], axis=0)
    taps = []
    for W, stride in zip(_backbone_transforms(config), config.tap_strides):
        pooled = _avg_pool(internal, stride)
        feat = np.einsum("fk,k...->f...", W, pooled)
        feat = feat + config.tap_noise * rng.normal(size=feat.shape)
        taps.append(feat[None].astype(np.float32))

    return SynthCase(
        case_id=f"case{case_index:07d}",
        taps=taps,
        logits=logits[None].astype(np.float32),
        labels=labels[None].astype(np.int32),
    )


def generate_split(config, n_cases, split_tag):
    if split_tag not in SPLIT_OFFSETS:
        raise ValueError(f"unknown split {split_tag!r}; expected one of {sorted(SPLIT_OFFSETS)}")
    offset = SPLIT_OFFSETS[split_tag]
    return [generate_case(config, offset + i) for i in range(n_cases)]


def boundary_distance(labels):
    """Euclidean distance of every voxel to the nearest label-boundary voxel."""
    labels = np.asarray(labels)
    boundary = np.zeros(labels.shape, dtype=bool)
    for axis in range(labels.ndim):
        diff = np.diff(labels, axis=axis) != 0
        lo = [slice(None)] * labels.ndim
        hi = [slice(None)] * labels.ndim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        boundary[tuple(lo)] |= diff
        boundary[tuple(hi)] |= diff
    if not boundary.any():
        return np.full(labels.shape, np.inf)
    return distance_transform_edt(~boundary)
