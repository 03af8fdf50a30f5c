"""A small reverse-mode autodiff engine for 3-D convolutional networks."""

from .ops import (avg_pool2d, add, concat_channels, conv3d, conv3d_transpose,
                  filter2d_valid, prelu)
from .tensor import GradCheckResult, GraphError, ShapeError, Tensor, grad_check, grad_enabled, no_grad, tensor

__all__ = [
    "Tensor", "tensor", "GradCheckResult", "no_grad", "grad_enabled", "grad_check", "GraphError", "ShapeError",
    "conv3d", "conv3d_transpose", "prelu", "concat_channels", "add",
    "filter2d_valid", "avg_pool2d",
]
