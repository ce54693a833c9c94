"""Learned label-free loss over target-set conditioning features.

Each feature row is read as a one-channel sequence and passed through a
stack of kernel-2 dilated convolutions with dense connectivity, mean
pooled over positions, and mapped to a scalar by a small ReLU MLP. The
critic loss is the mean of the per-row scalars.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff.tensor import (
    Tensor,
    add,
    as_tensor,
    broadcast_row,
    concat,
    conv1d_dilated_nlc,
    matmul,
    mean,
    mul_scalar,
    ordered_row_sum,
    relu,
    reshape,
    softmax,
    softplus,
)
from .errors import ContractError
from .params import ParameterSet


@dataclass(frozen=True)
class CriticFeatureFlags:
    use_predictions: bool = True
    use_params: bool = False
    use_task_embedding: bool = False

    def __post_init__(self):
        if not (self.use_predictions or self.use_params or self.use_task_embedding):
            raise ContractError("at least one critic feature must be enabled")

    def width(self, n_classes: int, n_params: int, embed_dim: int) -> int:
        return (
            (n_classes if self.use_predictions else 0)
            + (n_params if self.use_params else 0)
            + (embed_dim if self.use_task_embedding else 0)
        )


@dataclass
class CriticFeatures:
    """Feature matrix ``[n_target, D]``; the first ``n_pred`` columns are probabilities."""

    matrix: Tensor
    n_pred: int = 0

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def width(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class CriticSpec:
    channels: int = 8
    n_layers: int = 5
    hidden: int = 32
    min_length: int = 32

    def __post_init__(self):
        if min(self.channels, self.n_layers, self.hidden, self.min_length) <= 0:
            raise ContractError(f"critic sizes must be positive: {self}")

    @property
    def receptive_field(self) -> int:
        return 2 ** self.n_layers

    @property
    def pooled_channels(self) -> int:
        return 1 + self.channels * self.n_layers

    def padded_length(self, width: int) -> int:
        return max(int(width), self.min_length)

    @property
    def layout(self) -> tuple:
        out = []
        for i in range(self.n_layers):
            out.append((f"conv{i}.weight", (self.channels, 1 + self.channels * i, 2)))
            out.append((f"conv{i}.bias", (self.channels,)))
        widths = (self.pooled_channels, self.hidden, self.hidden, 1)
        names = ("fc0", "fc1", "out")
        for name, a, b in zip(names, widths[:-1], widths[1:]):
            out.append((f"{name}.weight", (a, b)))
            out.append((f"{name}.bias", (b,)))
        return tuple(out)

    @property
    def n_params(self) -> int:
        return int(sum(np.prod(s) for _, s in self.layout))


def dilation_for_layer(i: int, n_layers: int = 5) -> int:
    if not 0 <= int(i) < n_layers:
        raise ContractError(f"layer index {i} outside [0, {n_layers})")
    return 2 ** int(i)


def assemble_features(logits_T: Tensor, theta: ParameterSet | None, task_emb: Tensor | None,
                      flags: CriticFeatureFlags) -> CriticFeatures:
    """Row-wise ``[softmax(logits) | flatten(theta) | task_emb]`` per the enabled flags."""
    logits_T = as_tensor(logits_T)
    n = logits_T.shape[0]
    if n == 0:
        raise ContractError("critic features need a non-empty target set")
    blocks, n_pred = [], 0
    if flags.use_predictions:
        blocks.append(softmax(logits_T, axis=1))
        n_pred = logits_T.shape[1]
    if flags.use_params:
        if theta is None:
            raise ContractError("use_params is set but no parameters were given")
        blocks.append(broadcast_row(theta.flatten(), n))
    if flags.use_task_embedding:
        if task_emb is None:
            raise ContractError("use_task_embedding is set but no task embedding was given")
        blocks.append(broadcast_row(reshape(as_tensor(task_emb), (1, -1)), n))
    matrix = blocks[0] if len(blocks) == 1 else concat(blocks, axis=1)
    return CriticFeatures(matrix, n_pred)


def init_critic(input_dim: int, seed: int, spec: CriticSpec = CriticSpec()) -> ParameterSet:
    """Glorot-uniform critic weights with zero biases.

    The layout does not depend on ``input_dim``; it is validated against
    the padding policy only.
    """
    if spec.padded_length(input_dim) < spec.receptive_field:
        raise ContractError(
            f"feature width {input_dim} pads to {spec.padded_length(input_dim)} < {spec.receptive_field}"
        )
    rng = np.random.default_rng(seed)
    items = []
    for name, shape in spec.layout:
        if name.endswith(".bias"):
            items.append((name, Tensor(np.zeros(shape))))
            continue
        if len(shape) == 3:
            fan_in, fan_out = shape[1] * shape[2], shape[0] * shape[2]
        else:
            fan_in, fan_out = shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        items.append((name, Tensor(rng.uniform(-limit, limit, size=shape))))
    return ParameterSet(items)


def critic_spec_of(W: ParameterSet, min_length: int = 32) -> CriticSpec:
    n_layers = sum(1 for n in W.names if n.startswith("conv") and n.endswith(".weight"))
    if n_layers == 0 or "fc0.weight" not in W:
        raise ContractError(f"not a critic parameter layout: {W.names}")
    spec = CriticSpec(
        channels=W["conv0.weight"].shape[0],
        n_layers=n_layers,
        hidden=W["fc0.weight"].shape[1],
        min_length=min_length,
    )
    W.check_layout(spec.layout)
    return spec


def critic_rows(F: CriticFeatures, W: ParameterSet, min_length: int = 32) -> Tensor:
    """Per-row critic values ``[n, 1]``; each row is computed independently."""
    spec = critic_spec_of(W, min_length)
    matrix = F.matrix if isinstance(F, CriticFeatures) else as_tensor(F)
    n, width = matrix.shape
    if n == 0:
        raise ContractError("critic needs at least one feature row")
    length = spec.padded_length(width)
    if length < spec.receptive_field:
        raise ContractError(
            f"feature length {length} is shorter than the receptive field {spec.receptive_field}"
        )
    if length > width:
        matrix = concat([matrix, Tensor(np.zeros((n, length - width)))], axis=1)

    features = [reshape(matrix, (n, length, 1))]
    current = length
    for i in range(spec.n_layers):
        d = dilation_for_layer(i, spec.n_layers)
        # dense connectivity: earlier outputs are cropped to their trailing positions
        inputs = [f if f.shape[1] == current else f[:, f.shape[1] - current:, :] for f in features]
        x = inputs[0] if len(inputs) == 1 else concat(inputs, axis=2)
        out = conv1d_dilated_nlc(x, W[f"conv{i}.weight"], d, rowwise=True)
        features.append(softplus(add(out, W[f"conv{i}.bias"])))
        current -= d

    stacked = concat([f[:, f.shape[1] - current:, :] for f in features], axis=2)
    pooled = mean(stacked, axis=1)
    h = relu(add(matmul(pooled, W["fc0.weight"], rowwise=True), W["fc0.bias"]))
    h = relu(add(matmul(h, W["fc1.weight"], rowwise=True), W["fc1.bias"]))
    return add(matmul(h, W["out.weight"], rowwise=True), W["out.bias"])


def critic_forward(F: CriticFeatures, W: ParameterSet, min_length: int = 32) -> Tensor:
    """Scalar critic loss: mean of the per-row values, invariant to row order."""
    rows = critic_rows(F, W, min_length)
    return mul_scalar(reshape(ordered_row_sum(rows), ()), 1.0 / rows.shape[0])
