"""Differentiable numeric core: tensors, layers, losses, Adam."""

from .autodiff import (
    Tensor,
    concat,
    flip_time,
    l1,
    make_node,
    matmul,
    mse,
    no_grad,
    relu,
    reshape,
    set_finite_checks,
    sigmoid,
    tanh,
    tsum,
)
from .gradcheck import check_gradients, numeric_gradient, relative_error
from .layers import LSTM, Adam, BatchNorm1d, BiLSTM, Conv1d, Linear, Module, clip_grad_norm

__all__ = [
    "Tensor",
    "concat",
    "flip_time",
    "l1",
    "make_node",
    "matmul",
    "mse",
    "no_grad",
    "relu",
    "reshape",
    "set_finite_checks",
    "sigmoid",
    "tanh",
    "tsum",
    "check_gradients",
    "numeric_gradient",
    "relative_error",
    "LSTM",
    "Adam",
    "BatchNorm1d",
    "BiLSTM",
    "Conv1d",
    "Linear",
    "Module",
    "clip_grad_norm",
]
