"""Tensor arithmetic with reverse-mode autodiff, gradient checking, checkpoints."""

from .checkpoint import load_arrays, load_into, save_arrays
from .gradcheck import check_gradients, check_parameter_gradients
from .ops import (
    BatchNormState,
    add,
    as_tensor,
    batchnorm_1d,
    clamp,
    concat_lastdim,
    custom_op,
    edge_softmax,
    gather_rows,
    leaky_relu,
    linear,
    log,
    matmul,
    mean_all,
    mul,
    neg,
    reshape,
    scale,
    scale_rows,
    segment_sum_rows,
    slice_lastdim,
    softmax_lastdim,
    sub,
    sum_all,
    sum_lastdim,
)
from .tensor import DTYPE, Tape, Tensor, active_tape, backward, zero_grads

__all__ = [
    "BatchNormState", "DTYPE", "Tape", "Tensor", "active_tape", "add", "as_tensor",
    "backward", "batchnorm_1d", "check_gradients", "check_parameter_gradients",
    "clamp", "concat_lastdim", "custom_op", "edge_softmax", "gather_rows", "leaky_relu",
    "linear", "load_arrays", "load_into", "log", "matmul", "mean_all", "mul",
    "neg", "reshape", "save_arrays", "scale", "scale_rows", "segment_sum_rows",
    "slice_lastdim", "softmax_lastdim", "sub", "sum_all", "sum_lastdim", "zero_grads",
]
