"""Small numpy autodiff stack: tensors, layers, losses, Adam and a gradient checker."""
from ._conv import get_backend, set_backend
from .functional import (
    conv2d,
    dropout,
    global_avg_pool,
    l2_normalize,
    maxpool2,
    mean,
    relu,
    reshape,
    sigmoid,
    softplus,
    take_rows,
    upsample2_nearest,
)
from .gradcheck import grad_check
from .losses import bce_loss, rae_loss
from .optim import OptimizerState, adam_step
from .tensor import Tensor, make_op

__all__ = [
    "OptimizerState",
    "Tensor",
    "adam_step",
    "bce_loss",
    "conv2d",
    "dropout",
    "get_backend",
    "global_avg_pool",
    "grad_check",
    "l2_normalize",
    "make_op",
    "maxpool2",
    "mean",
    "rae_loss",
    "relu",
    "reshape",
    "set_backend",
    "sigmoid",
    "softplus",
    "take_rows",
    "upsample2_nearest",
]
