"""Minimal reverse-mode CNN engine: the ops, layers and optimizers both networks need."""
from clusternet.engine.layers import (
    BatchNorm2d,
    Conv2d,
    Dropout,
    Identity,
    Layer,
    MaxPool2x2,
    PReLU,
    ReLU,
    Sequential,
)
from clusternet.engine.ops import (
    NonFiniteError,
    conv2d_backward,
    conv2d_forward,
    euclidean_loss,
    maxpool2x2_backward,
    maxpool2x2_forward,
    softmax,
    softmax_xent_loss,
)
from clusternet.engine.optim import OptimizerState, PlateauSchedule, step

__all__ = [
    "BatchNorm2d", "Conv2d", "Dropout", "Identity", "Layer", "MaxPool2x2", "PReLU", "ReLU",
    "Sequential", "NonFiniteError", "conv2d_backward", "conv2d_forward", "euclidean_loss",
    "maxpool2x2_backward", "maxpool2x2_forward", "softmax", "softmax_xent_loss",
    "OptimizerState", "PlateauSchedule", "step",
]
