"""Tiny random head problems for gradient and invariant checks."""

import numpy as np

from segwithu.head import HeadConfig, init_head_params


def small_problem(seed, config=None, batch=2, grid=(4, 4), classes=3, tap_channels=(3, 2)):
    """Random taps (full and half resolution), logits, labels and float64 parameters."""
    rng = np.random.default_rng(seed)
    config = config or HeadConfig(num_probes=2, target_channels=3)
    half = tuple(n // 2 for n in grid)
    taps = [rng.normal(size=(batch, tap_channels[0]) + grid),
            rng.normal(size=(batch, tap_channels[1]) + half)]
    z = 2.0 * rng.normal(size=(batch, classes) + grid)
    y = rng.integers(0, classes, size=(batch,) + grid)
    params = init_head_params(config, tap_channels, classes, seed)
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    # move away from the zero initialisation so every path carries gradient
    for k in params:
        params[k] = params[k] + 0.3 * rng.normal(size=params[k].shape)
    return config, params, taps, z, y
