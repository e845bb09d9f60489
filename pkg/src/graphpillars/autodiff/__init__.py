"""Reverse-mode automatic differentiation on float64 numpy arrays."""

from . import functional
from .checkpoint import load_tensors, save_tensors
from .gradcheck import GradcheckResult, gradcheck
from .nn import ChannelAffine, Conv2d, Linear, Module, parameter
from .tensor import Tape, Tensor, no_grad

__all__ = [
    "ChannelAffine", "Conv2d", "GradcheckResult", "Linear", "Module", "Tape", "Tensor",
    "functional", "gradcheck", "load_tensors", "no_grad", "parameter", "save_tensors",
]
