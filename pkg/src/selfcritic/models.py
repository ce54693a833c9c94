"""Functional MLP base learner: parameters are passed on every call."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff.tensor import Tensor, add, as_tensor, matmul, relu
from .errors import ContractError
from .params import ParameterSet


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden: tuple = (40, 40)
    n_classes: int = 5

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        dims = (self.input_dim, *self.hidden, self.n_classes)
        if any(int(d) <= 0 for d in dims):
            raise ContractError(f"model dimensions must be positive, got {dims}")

    @property
    def widths(self) -> tuple:
        return (self.input_dim, *self.hidden, self.n_classes)

    @property
    def layout(self) -> tuple:
        return dense_layout(self.widths)

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(a * b + b for a, b in zip(w[:-1], w[1:]))


def dense_layout(widths, prefix: str = "layer") -> tuple:
    out = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        out.append((f"{prefix}{i}.weight", (a, b)))
        out.append((f"{prefix}{i}.bias", (b,)))
    return tuple(out)


def glorot_dense(widths, rng: np.random.Generator, prefix: str = "layer") -> ParameterSet:
    """Glorot-uniform weights, zero biases, drawn layer by layer from ``rng``."""
    items = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        limit = np.sqrt(6.0 / (a + b))
        items.append((f"{prefix}{i}.weight", Tensor(rng.uniform(-limit, limit, size=(a, b)))))
        items.append((f"{prefix}{i}.bias", Tensor(np.zeros(b))))
    return ParameterSet(items)


def init_params(spec: ModelSpec, seed: int) -> ParameterSet:
    return glorot_dense(spec.widths, np.random.default_rng(seed))


def dense_forward(x: Tensor, params: ParameterSet, n_layers: int, prefix: str = "layer",
                  final_activation: bool = False) -> Tensor:
    h = x
    for i in range(n_layers):
        h = add(matmul(h, params[f"{prefix}{i}.weight"]), params[f"{prefix}{i}.bias"])
        if i < n_layers - 1 or final_activation:
            h = relu(h)
    return h


def mlp_depth(params: ParameterSet, prefix: str = "layer") -> int:
    """Number of dense layers in ``params``; raises if the layout is not an MLP."""
    n_layers = len(params) // 2
    expected = []
    for i in range(n_layers):
        expected += [f"{prefix}{i}.weight", f"{prefix}{i}.bias"]
    if n_layers == 0 or len(params) % 2 or params.names != tuple(expected):
        raise ContractError(f"not an MLP parameter layout: {params.names}")
    for i in range(n_layers):
        w, b = params[f"{prefix}{i}.weight"], params[f"{prefix}{i}.bias"]
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ContractError(f"layer {i} has weight {w.shape} and bias {b.shape}")
        if i and w.shape[0] != params[f"{prefix}{i - 1}.weight"].shape[1]:
            raise ContractError(f"layer {i} input width does not match layer {i - 1}")
    return n_layers


def forward(x, params: ParameterSet, spec: ModelSpec | None = None) -> Tensor:
    """Logits ``[n, c]`` of the ReLU MLP described by ``params``.

    Layer count and widths are read from the layout; pass ``spec`` to have
    the layout checked against it as well.
    """
    x = as_tensor(x)
    if spec is not None:
        params.check_layout(spec.layout)
    n_layers = mlp_depth(params)
    in_dim = params["layer0.weight"].shape[0]
    if x.ndim != 2 or x.shape[1] != in_dim:
        raise ContractError(f"input of shape {x.shape} does not match input_dim {in_dim}")
    return dense_forward(x, params, n_layers)
