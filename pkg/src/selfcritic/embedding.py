"""Relational task embedding over support and target inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff.tensor import Tensor, add, as_tensor, concat, matmul, ordered_row_sum, relu, take_rows
from .errors import ContractError
from .models import glorot_dense
from .params import ParameterSet


@dataclass(frozen=True)
class EmbedderSpec:
    input_dim: int
    embed_dim: int = 16
    relation_hidden: int = 32
    hidden: int = 32

    def __post_init__(self):
        if min(self.input_dim, self.embed_dim, self.relation_hidden, self.hidden) <= 0:
            raise ContractError(f"embedder sizes must be positive: {self}")

    @property
    def example_widths(self) -> tuple:
        return (self.input_dim, self.hidden, self.embed_dim)

    @property
    def relation_widths(self) -> tuple:
        return (2 * self.embed_dim, self.relation_hidden, self.embed_dim)

    @property
    def n_params(self) -> int:
        total = 0
        for w in (self.example_widths, self.relation_widths):
            total += sum(a * b + b for a, b in zip(w[:-1], w[1:]))
        return total


def init_embedder(spec: EmbedderSpec, seed: int) -> ParameterSet:
    rng = np.random.default_rng(seed)
    example = glorot_dense(spec.example_widths, rng, prefix="embed")
    relation = glorot_dense(spec.relation_widths, rng, prefix="relation")
    return ParameterSet([*example.items(), *relation.items()])


def _mlp(x: Tensor, phi: ParameterSet, prefix: str) -> Tensor:
    h = relu(add(matmul(x, phi[f"{prefix}0.weight"], rowwise=True), phi[f"{prefix}0.bias"]))
    return add(matmul(h, phi[f"{prefix}1.weight"], rowwise=True), phi[f"{prefix}1.bias"])


def embed_task(x_S, x_T, phi: ParameterSet) -> Tensor:
    """Task vector ``[1, E]``: relation MLP summed over all ordered example pairs.

    Every pair ``(i, j)`` of the pooled support and target embeddings,
    including ``i == j``, is related; ``x_T`` may be empty.
    """
    x_S = as_tensor(x_S)
    if x_S.ndim != 2 or x_S.shape[0] == 0:
        raise ContractError("task embedding needs at least one support example")
    x_T = as_tensor(x_T) if x_T is not None else None
    pooled = x_S if x_T is None or x_T.shape[0] == 0 else concat([x_S, x_T], axis=0)
    if pooled.shape[1] != phi["embed0.weight"].shape[0]:
        raise ContractError(
            f"inputs have {pooled.shape[1]} features, embedder expects {phi['embed0.weight'].shape[0]}"
        )
    e = _mlp(pooled, phi, "embed")
    m = e.shape[0]
    left = np.repeat(np.arange(m), m)
    right = np.tile(np.arange(m), m)
    pairs = concat([take_rows(e, left), take_rows(e, right)], axis=1)
    return ordered_row_sum(_mlp(pairs, phi, "relation"))


def pair_count(n_support: int, n_target: int) -> int:
    return (n_support + n_target) ** 2
