from . import tensor as ops
from .checkpoint import CheckpointError, load_into, read_checkpoint, save_checkpoint
from .optim import AdamW, MissingGradient, OptimizerState, lr_schedule
from .tensor import NonScalarLoss, Parameter, ShapeMismatch, Tensor, backward

__all__ = [
    "ops", "Tensor", "Parameter", "ShapeMismatch", "NonScalarLoss", "backward",
    "AdamW", "OptimizerState", "MissingGradient", "lr_schedule",
    "save_checkpoint", "read_checkpoint", "load_into", "CheckpointError",
]
