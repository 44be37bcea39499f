"""Information-preserving CSI feedback: invertible codec, learned quantizer,
differentiable bit channel, trained end to end."""

from .channel import CsiGeometry, generate_channels, read_dataset, write_dataset
from .estimator import CsiFeedbackCodec
from .evaluation import evaluate, nmse
from .pipeline import FeedbackPipeline, ModelConfig
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "CsiFeedbackCodec",
    "CsiGeometry",
    "FeedbackPipeline",
    "ModelConfig",
    "TrainConfig",
    "evaluate",
    "generate_channels",
    "load_checkpoint",
    "nmse",
    "read_dataset",
    "save_checkpoint",
    "train",
    "write_dataset",
    "__version__",
]
