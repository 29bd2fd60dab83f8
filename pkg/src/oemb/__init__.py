"""Joint caption/video order embeddings: encoders, ranking losses, training and evaluation."""

from .encoders import DegenerateEmbeddingError
from .model import JointModel, ModelParams, init_params
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = ["DegenerateEmbeddingError", "JointModel", "ModelParams", "TrainConfig",
           "init_params", "train"]
