"""Coordination-aware human motion prediction on a small numpy autodiff engine."""

from .data import MotionSequence, SampleWindow, KinematicTree, parse_motion_file, write_motion_file
from .model import ModelConfig, init_params, network_forward, predict
from .training import TrainConfig, load_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "KinematicTree",
    "ModelConfig",
    "MotionSequence",
    "SampleWindow",
    "TrainConfig",
    "init_params",
    "load_checkpoint",
    "network_forward",
    "parse_motion_file",
    "predict",
    "train",
    "write_motion_file",
]
