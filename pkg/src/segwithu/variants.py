"""Named ablation configurations of the head and its objective.

Every variant is a function of a base ``TrainConfig`` returning a modified
copy; ``GRIDS`` groups them the way the ablation tables are laid out.
"""

from dataclasses import replace


LOSS_TERMS = ("nll", "ec", "pair", "tail", "trust", "anchor", "res")


def full(base):
    return base


def calibration_only(base):
    """Calibration branch alone: no ranking map, no ranking losses; U_cal is the score."""
    w = replace(base.weights, ec=0.0, pair=0.0, tail=0.0, anchor=0.0)
    return replace(base, head=replace(base.head, ranking_branch=False, calibration_branch=True),
                   weights=w)


def ranking_only(base):
    """Ranking branch alone: logits are never tempered and the NLL term is dropped."""
    return replace(base, head=replace(base.head, calibration_branch=False, ranking_branch=True),
                   weights=replace(base.weights, nll=0.0))


def without_loss(term):
    if term not in LOSS_TERMS:
        raise ValueError(f"unknown loss term {term!r}")

    def variant(base):
        return replace(base, weights=replace(base.weights, **{term: 0.0}))

    variant.__name__ = f"no_{term}"
    return variant


def direct_head(base):
    return replace(base, head=replace(base.head, direct_head=True))


def fixed_sigma(base):
    return replace(base, head=replace(base.head, fixed_sigma=True))


def no_aleatoric(base):
    return replace(base, head=replace(base.head, aleatoric=False))


def single_tap(base):
    return replace(base, head=replace(base.head, single_tap=True))


def num_probes(r):
    def variant(base):
        return replace(base, head=replace(base.head, num_probes=r))

    variant.__name__ = f"probes_{r}"
    return variant


def gamma(g):
    def variant(base):
        return replace(base, head=replace(base.head, gamma=g))

    variant.__name__ = f"gamma_{g:g}"
    return variant


VARIANTS = {
    "full": full,
    "calibration-only": calibration_only,
    "ranking-only": ranking_only,
    "direct-head": direct_head,
    "fixed-sigma": fixed_sigma,
    "no-aleatoric": no_aleatoric,
    "single-tap": single_tap,
}
VARIANTS.update({f"no-{t}": without_loss(t) for t in LOSS_TERMS})
VARIANTS.update({f"probes-{r}": num_probes(r) for r in (4, 8, 16, 32)})
VARIANTS.update({f"gamma-{g}": gamma(float(g)) for g in (1, 2, 4, 8)})

GRIDS = {
    "branches": ["full", "calibration-only", "ranking-only"],
    "losses": ["full"] + [f"no-{t}" for t in LOSS_TERMS],
    "architecture": ["full", "direct-head", "fixed-sigma", "no-aleatoric", "single-tap"],
    "probes": [f"probes-{r}" for r in (4, 8, 16, 32)],
    "gamma": [f"gamma-{g}" for g in (1, 2, 4, 8)],
    "taps": ["full", "single-tap"],
}


def apply_variant(name, base):
    if name not in VARIANTS:
        raise KeyError(f"unknown variant {name!r}; known: {', '.join(sorted(VARIANTS))}")
    return VARIANTS[name](base)


def grid(name):
    if name not in GRIDS:
        raise KeyError(f"unknown grid {name!r}; known: {', '.join(sorted(GRIDS))}")
    return list(GRIDS[name])
