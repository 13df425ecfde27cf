from . import functional
from .gradcheck import grad_check
from .nn import BatchNorm, Dropout, LayerNorm, Linear, Module, PatchMix, count_params
from .optim import SGD, cosine_lr
from .tensor import NonFiniteError, Tensor, no_grad

__all__ = [
    "BatchNorm",
    "Dropout",
    "LayerNorm",
    "Linear",
    "Module",
    "NonFiniteError",
    "PatchMix",
    "SGD",
    "Tensor",
    "count_params",
    "cosine_lr",
    "functional",
    "grad_check",
    "no_grad",
]
