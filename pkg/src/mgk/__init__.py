"""mgk: desk-scale whole-body grasp motion generation.

A three-stage pipeline (grasp pose VAE, temporal infilling, joint-to-marker
liftup) with generalized pretraining tasks, built on a self-contained float64
autodiff core, plus the full motion evaluation metric suite.
"""

from .blocks import AttentionConfig, DistanceBias
from .errors import (CompositionError, ConfigError, ContractError, FormatError,
                     ShapeError, StateError, TrainingError, TransferError)
from .losses import ContactMap, LossWeights
from .metrics import MetricReport
from .motion import (JointFrame, JointSequence, MarkerLayout, MarkerSequence,
                     MaskSpec, ObjectPointCloud, add_gaussian_noise, downsample,
                     interpolate_linear, load_layout, load_sequence,
                     mask_markers, save_layout, save_sequence)
from .optim import Adam, AdamState, adam_init, adam_step
from .synth import default_layout, rest_pose, synth_motion
from .tensor import Tensor, grad_check
from .training import TrainRun

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig", "DistanceBias", "ContactMap", "LossWeights",
    "MetricReport", "JointFrame", "JointSequence", "MarkerLayout",
    "MarkerSequence", "MaskSpec", "ObjectPointCloud", "add_gaussian_noise",
    "downsample", "interpolate_linear", "load_layout", "load_sequence",
    "mask_markers", "save_layout", "save_sequence", "Adam", "AdamState",
    "adam_init", "adam_step", "default_layout", "rest_pose", "synth_motion",
    "Tensor", "grad_check", "TrainRun", "CompositionError", "ConfigError",
    "ContractError", "FormatError", "ShapeError", "StateError",
    "TrainingError", "TransferError",
]
