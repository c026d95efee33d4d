"""Trajectory prediction for teleoperation under bursty packet loss.

A numpy-only stack: a four-state loss channel, synthetic and recorded
kinematics, a small reverse-mode autograd, ProbSparse attention, an
encoder/decoder Informer with a constrained training objective, reference
baselines and an evaluation CLI.
"""

from .channel import ChannelParams, ChannelState, severity_params
from .model import InformerModel, ModelConfig, load_checkpoint, predict
from .objective import ObjectiveConfig, ObjectiveWeights, ConstraintLimits, total_loss
from .trajectory import WindowSpec, WindowDataset, generate_synthetic_trial, make_windows
from .training import TrainConfig, train

__all__ = [
    "ChannelParams", "ChannelState", "severity_params",
    "InformerModel", "ModelConfig", "load_checkpoint", "predict",
    "ObjectiveConfig", "ObjectiveWeights", "ConstraintLimits", "total_loss",
    "WindowSpec", "WindowDataset", "generate_synthetic_trial", "make_windows",
    "TrainConfig", "train",
]
