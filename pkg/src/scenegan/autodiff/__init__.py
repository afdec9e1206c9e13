from . import ops
from .gradcheck import finite_difference_gradient, relative_error
from .ops import primitive_catalog
from .params import ParamStore, load_checkpoint, save_checkpoint
from .tensor import (
    GraphError,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    enable_grad,
    finite_checks,
    grad,
    is_grad_enabled,
    no_grad,
)

__all__ = [
    "ops", "Tensor", "as_tensor", "backward", "grad", "no_grad", "enable_grad", "is_grad_enabled",
    "finite_checks", "ShapeError", "NonFiniteError", "GraphError", "ParamStore", "save_checkpoint",
    "load_checkpoint", "finite_difference_gradient", "relative_error", "primitive_catalog",
]
