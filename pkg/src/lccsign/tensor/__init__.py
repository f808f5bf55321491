"""Minimal dense float64 tensor engine with reverse-mode differentiation."""

from .checkpoint import load_checkpoint, save_checkpoint
from .core import Gradients, Graph, Node, Tensor, backward
from .gradcheck import check_gradients, grad_check, numeric_gradient, relative_error
from .ops import OPS, catalog, conv_output_length

__all__ = [
    "OPS",
    "Gradients",
    "Graph",
    "Node",
    "Tensor",
    "backward",
    "catalog",
    "check_gradients",
    "conv_output_length",
    "grad_check",
    "load_checkpoint",
    "numeric_gradient",
    "relative_error",
    "save_checkpoint",
]
