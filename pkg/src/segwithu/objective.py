"""Assemble the weighted training objective from a forward bundle."""

import numpy as np

from .losses import (
    anchor_consistency_loss,
    ec_loss,
    error_indicator,
    nll_loss,
    pairwise_loss,
    residual_reg_loss,
    standardize,
    tail_loss,
    total_loss,
    trust_loss,
)


def loss_terms(bundle, y, ranking, pair_seed):
    """Lazy loss terms for a bundle; each value is a zero-argument callable."""
    e = error_indicator(bundle.logits, y)
    u = bundle.score
    terms = {
        "nll": lambda: nll_loss(bundle.z_tilde, y),
        "ec": lambda: ec_loss(standardize(u), e, ranking.tau_ec),
        "pair": lambda: pairwise_loss(u, e, ranking.delta, ranking.tau_pair,
                                      ranking.max_pairs, pair_seed),
        "tail": lambda: tail_loss(u, e, ranking.tail_temperature),
        "res": lambda: residual_reg_loss(bundle.w, bundle.u_res),
    }
    if bundle.delta is not None:
        terms["trust"] = lambda: trust_loss(bundle.delta, bundle.logits)
    if bundle.u_rnk is not None:
        terms["anchor"] = lambda: anchor_consistency_loss(bundle.u_rnk, bundle.u_anchor)
    return terms


def objective(bundle, y, weights, ranking, pair_seed):
    """Total loss plus the evaluated value of every weighted term (as floats)."""
    terms = loss_terms(bundle, y, ranking, pair_seed)
    values = {}

    def recorded(name, fn):
        def run():
            out = fn()
            values[name] = float(np.asarray(getattr(out, "data", out)))
            return out
        return run

    lazy = {name: recorded(name, fn) for name, fn in terms.items()}
    return total_loss(lazy, weights), values
