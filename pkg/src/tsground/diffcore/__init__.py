"""Dense-tensor reverse-mode differentiation on numpy."""

from . import ops
from .gradcheck import (GradCheckReport, check_gradients, finite_difference_check,
                        redraw_zero_matrices)
from .nn import Conv1d, LayerNorm, Linear, Module, glorot_uniform
from .tensor import GraphError, Parameter, ShapeError, Tensor, as_tensor, backward, no_grad

__all__ = [
    "ops", "Tensor", "Parameter", "backward", "no_grad", "as_tensor",
    "ShapeError", "GraphError", "Module", "Linear", "LayerNorm", "Conv1d",
    "glorot_uniform", "check_gradients", "finite_difference_check", "GradCheckReport",
    "redraw_zero_matrices",
]
