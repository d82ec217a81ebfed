"""One-dimensional convolutional network for appliance disaggregation."""

from .checkpoint import CheckpointError, load, save
from .layers import (
    DimensionMismatch,
    KernelTooLong,
    conv1d_forward,
    cross_entropy,
    maxpool,
    relu,
    softmax,
)
from .network import (
    Architecture,
    Hyperparameters,
    NetworkModel,
    backprop,
    build_model,
    dense_softmax_forward,
    forward,
    he_init,
    objective,
)
from .optim import lr_schedule, momentum_schedule, update_parameters
from .train import EpochRecord, classify_batch, classify_segment, detect_events, evaluate, train

__all__ = [
    "Architecture", "CheckpointError", "DimensionMismatch", "EpochRecord", "Hyperparameters",
    "KernelTooLong", "NetworkModel", "backprop", "build_model", "classify_batch",
    "classify_segment", "conv1d_forward", "cross_entropy", "dense_softmax_forward",
    "detect_events", "evaluate", "forward", "he_init", "load", "lr_schedule", "maxpool",
    "momentum_schedule", "objective", "relu", "save", "softmax", "train", "update_parameters",
]
