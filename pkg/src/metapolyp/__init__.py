"""Polyp segmentation with a MetaFormer-style encoder-decoder.

The package is self-contained: a float32 tensor engine with reverse-mode
autodiff, the network blocks and full model, the smoothed Jaccard loss and
IoU/Dice/MAE metrics, Netpbm data loading with the augmentation suite, the
Adam + cosine-annealing training recipe, a scikit-learn style estimator,
and a CLI (``metapolyp``).
"""

from .augment import AugmentConfig, AugmentPipeline
from .blocks import (
    AttentionWeights,
    ConvFormerEncoderBlock,
    ConvformerBlock,
    MultiscaleUpsampleBlock,
    TransformerEncoderBlock,
    levelup_merge,
)
from .data import Sample, SplitSpec, load_dataset, save_dataset, split, synth_polyp
from .estimator import MetaPolypSegmenter
from .gradcheck import grad_check
from .metrics import EvalReport, dice, evaluate, iou, jaccard_loss, mae
from .model import MetaPolyp, ModelConfig, ModelOutput, build, load_model, save_model
from .rng import Rng
from .tensor import Parameter, Tape, Tensor, backward
from .train import (
    Adam,
    ScheduleSpec,
    TrainConfig,
    cosine_lr,
    load_train_state,
    predict,
    save_train_state,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AttentionWeights",
    "AugmentConfig",
    "AugmentPipeline",
    "ConvFormerEncoderBlock",
    "ConvformerBlock",
    "EvalReport",
    "MetaPolyp",
    "MetaPolypSegmenter",
    "ModelConfig",
    "ModelOutput",
    "MultiscaleUpsampleBlock",
    "Parameter",
    "Rng",
    "Sample",
    "ScheduleSpec",
    "SplitSpec",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TransformerEncoderBlock",
    "backward",
    "build",
    "cosine_lr",
    "dice",
    "evaluate",
    "grad_check",
    "iou",
    "jaccard_loss",
    "levelup_merge",
    "load_dataset",
    "load_model",
    "load_train_state",
    "mae",
    "predict",
    "save_dataset",
    "save_model",
    "save_train_state",
    "split",
    "synth_polyp",
    "train",
]
