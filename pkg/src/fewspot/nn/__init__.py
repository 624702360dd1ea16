from . import autograd, kernels, layers, optim
from .autograd import Tensor, no_grad, parameter

__all__ = ["autograd", "kernels", "layers", "optim", "Tensor", "no_grad", "parameter"]
