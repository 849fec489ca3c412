from . import tensor as T
from .autodiff import (
    DENSE_HESSIAN_LIMIT,
    grad,
    grad_tensor,
    hessian,
    hvp,
    jacobian,
    jacobian_derivative,
    value_and_grad,
)
from .linalg import lanczos, sym_eigen
from .params import ParamVector
from .rng import make_rng
from .tensor import Tensor, no_grad

__all__ = [
    "DENSE_HESSIAN_LIMIT",
    "ParamVector",
    "T",
    "Tensor",
    "grad",
    "grad_tensor",
    "hessian",
    "hvp",
    "jacobian",
    "jacobian_derivative",
    "lanczos",
    "make_rng",
    "no_grad",
    "sym_eigen",
    "value_and_grad",
]
