"""Hierarchical user-interest news recommendation."""

from .config import ExperimentConfig, MatchConfig, ModelConfig, TrainConfig, load_config
from .model import HieRec, load_checkpoint, save_checkpoint

__all__ = [
    "ExperimentConfig",
    "HieRec",
    "MatchConfig",
    "ModelConfig",
    "TrainConfig",
    "load_checkpoint",
    "load_config",
    "save_checkpoint",
]
__version__ = "0.1.0"
