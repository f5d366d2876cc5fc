"""Minimal dense-tensor numerical core with reverse-mode autodiff."""

from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    TraceError,
    check_finite,
    concat,
    flip_time,
    matmul,
    relu,
    sigmoid,
    tanh,
)
from .store import CheckpointFormatError, ParameterStore
from .layers import (
    Bidirectional,
    Conv2d,
    Dropout,
    Embedding,
    GRU,
    LSTM,
    Layer,
    LayerConfig,
    Linear,
    MeanPoolTime,
    ReLU,
    Sequential,
    build_layer,
    forward,
)
from .optim import AdamState, MissingGradientError, adam_step, gradient_check, max_gradient_error

__all__ = [
    "AdamState",
    "Bidirectional",
    "CheckpointFormatError",
    "Conv2d",
    "Dropout",
    "Embedding",
    "GRU",
    "LSTM",
    "Layer",
    "LayerConfig",
    "Linear",
    "MeanPoolTime",
    "MissingGradientError",
    "NonFiniteError",
    "ParameterStore",
    "ReLU",
    "Sequential",
    "ShapeError",
    "Tensor",
    "TraceError",
    "adam_step",
    "build_layer",
    "check_finite",
    "concat",
    "flip_time",
    "forward",
    "gradient_check",
    "matmul",
    "max_gradient_error",
    "relu",
    "sigmoid",
    "tanh",
]
