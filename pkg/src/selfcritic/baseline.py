"""Support-only adaptation that never touches the critic or the embedder.

Used as the reference the full inner loop must reduce to when no target
steps are taken.
"""

from __future__ import annotations

import numpy as np

from .autodiff.grad import grad
from .autodiff.tensor import Tensor, mul_scalar, softmax_cross_entropy, sub
from .models import forward
from .params import ParameterSet


def maml_adapt(theta0: ParameterSet, x_S, y_S, alpha: float, n_steps: int) -> ParameterSet:
    theta = theta0.ensure_tracked() if n_steps else theta0
    x_S = Tensor(x_S)
    for _ in range(n_steps):
        loss = softmax_cross_entropy(forward(x_S, theta), y_S)
        grads = grad(loss, theta)
        theta = ParameterSet(
            (n, sub(p, mul_scalar(grads[n], alpha))) for n, p in theta.items()
        ).detach().ensure_tracked()
    return theta


def maml_predict(theta0: ParameterSet, x_S, y_S, x_T, alpha: float, n_steps: int):
    """Target logits and argmax predictions after support-only adaptation."""
    theta = maml_adapt(theta0, x_S, y_S, alpha, n_steps)
    logits = forward(Tensor(x_T), theta).data
    return logits, np.argmax(logits, axis=1)
