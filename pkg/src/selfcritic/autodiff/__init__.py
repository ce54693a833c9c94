"""Tape-based reverse-mode autodiff with differentiable backward passes."""

from .grad import finite_diff_oracle, grad, relative_error, tape_of
from .tensor import (
    Node,
    Tensor,
    add,
    as_tensor,
    broadcast_row,
    broadcast_to,
    concat,
    conv1d_dilated,
    conv1d_dilated_nlc,
    debug_mode,
    getitem,
    grad_mode,
    is_grad_enabled,
    log_softmax,
    logsumexp,
    matmul,
    mean,
    mul,
    mul_scalar,
    neg,
    no_grad,
    one_hot,
    ordered_row_sum,
    relu,
    reshape,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    softplus,
    square,
    sub,
    sum_to,
    take_rows,
    texp,
    transpose,
    tsum,
    variable,
)

__all__ = [name for name in dir() if not name.startswith("_")]
