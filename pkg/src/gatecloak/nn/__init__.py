from .layers import (LabelOutOfRange, NonFiniteTensor, RateOutOfRange,
                     ShapeMismatch, TargetOutOfRange, ensure_finite, softmax,
                     softmax_cross_entropy)
from .net import GradResult, LayerSpec, Network, ShapeUnderflow
from .optim import Adam
from .params_io import FormatError, load_params, save_params

__all__ = [
    "Adam", "FormatError", "GradResult", "LabelOutOfRange", "LayerSpec",
    "Network", "NonFiniteTensor", "RateOutOfRange", "ShapeMismatch",
    "ShapeUnderflow", "TargetOutOfRange", "ensure_finite", "load_params",
    "save_params", "softmax", "softmax_cross_entropy",
]
