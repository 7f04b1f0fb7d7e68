"""Single-pass voxel uncertainty for a frozen segmentation backbone.

The head reads feature taps and logits from the backbone and returns
epistemic, aleatoric, calibration and ranking maps; training, metrics,
significance testing, a synthetic backbone and a file/CLI layer sit around it.
"""

from .head import HeadConfig, UncertaintyBundle, forward, infer, init_head_params
from .losses import LossWeights, RankingHyper
from .synth import SynthConfig, generate_case, generate_split
from .trainer import TrainConfig, train_head

__all__ = [
    "HeadConfig",
    "LossWeights",
    "RankingHyper",
    "SynthConfig",
    "TrainConfig",
    "UncertaintyBundle",
    "forward",
    "generate_case",
    "generate_split",
    "infer",
    "init_head_params",
    "train_head",
]
__version__ = "0.1.0"
