"""Fit the uncertainty head on a small synthetic task and compare it to entropy.

Run with ``python demos/quickstart.py``; takes well under a minute.
"""

import numpy as np

from segwithu import SynthConfig, TrainConfig, generate_split, infer, train_head
from segwithu.losses import error_indicator
from segwithu.metrics import aurc, auroc, entropy_score, risk_coverage_curve, softmax_np
from segwithu.trainer import collate

synth = SynthConfig(seed=1)
train = generate_split(synth, 20, "train")
val = generate_split(synth, 8, "val")
test = generate_split(synth, 10, "test")

taps, z, y = collate(test)
errors = error_indicator(z, y)
print(f"backbone error rate on test: {errors.mean():.3f}")

params, history = train_head(train, val, TrainConfig(seed=1, max_epochs=30))
print(f"best epoch {history.best_epoch}; validation AURC "
      f"{history.records[0]['val_score']:.4f} -> {history.records[history.best_epoch]['val_score']:.4f}")

bundle = infer(params, taps, z, TrainConfig().head)
scores = {"head": bundle.score, "entropy": entropy_score(softmax_np(z))}

for name, s in scores.items():
    a = np.nanmean([auroc(s[i], errors[i]) for i in range(len(test))])
    r = np.mean([aurc(risk_coverage_curve(s[i], errors[i])) for i in range(len(test))])
    print(f"{name:8s} AUROC {a:.4f}  AURC {r:.4f}")

print("maps available:", ", ".join(sorted(bundle.maps())))
