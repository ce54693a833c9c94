"""Dense float64 tensors recorded onto a reverse-mode tape.

Every backward rule is written in terms of the same differentiable
operations it differentiates, so gradients computed while recording is
enabled are themselves tape nodes and can be differentiated again.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import DimensionError, LabelIndexError, NonFiniteError

_state = threading.local()
_node_ids = itertools.count()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def is_debug() -> bool:
    return getattr(_state, "debug", False)


@contextmanager
def grad_mode(enabled: bool):
    """Enable or disable tape recording for the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = enabled
    try:
        yield
    finally:
        _state.grad_enabled = previous


def no_grad():
    return grad_mode(False)


@contextmanager
def debug_mode(enabled: bool = True):
    """Check every op output for NaN/Inf while active."""
    previous = is_debug()
    _state.debug = enabled
    try:
        yield
    finally:
        _state.debug = previous


class Node:
    """One tape entry: the producing op, its parents and its backward rule.

    Ids are drawn from a global monotone counter, so sorting a graph's
    nodes by id is a valid topological order.
    """

    __slots__ = ("id", "op", "parents", "backward")

    def __init__(self, op: str, parents: tuple, backward: Optional[Callable]):
        self.id = next(_node_ids)
        self.op = op
        self.parents = parents
        self.backward = backward

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r})"


class Tensor:
    __slots__ = ("data", "node")
    __array_priority__ = 100.0

    def __init__(self, data, node: Optional[Node] = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.node is not None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", tracked" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{flag})\n{self.data}"

    def __len__(self):
        return len(self.data)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)
    __getitem__ = lambda self, idx: getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    @property
    def T(self):
        return transpose(self)


def variable(data) -> Tensor:
    """A fresh leaf tensor that gradients can be taken with respect to."""
    return Tensor(np.array(data, dtype=np.float64), Node("leaf", (), None))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: tuple, backward: Callable) -> Tensor:
    if is_debug() and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise NonFiniteError(f"{op} produced non-finite values from finite inputs")
    if is_grad_enabled():
        for p in parents:
            if p.node is not None:
                return Tensor(data, Node(op, parents, backward))
    return Tensor(data)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (sum_to(g, sa), sum_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (sum_to(g, sa), neg(sum_to(g, sb))))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        ga = sum_to(mul(g, b), a.shape) if a.node is not None else None
        gb = sum_to(mul(g, a), b.shape) if b.node is not None else None
        return ga, gb

    return _make(a.data * b.data, "mul", (a, b), backward)


def mul_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, "mul_scalar", (a,), lambda g: (mul_scalar(g, s),))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", (a,), lambda g: (neg(g),))


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(np.float64)
    return _make(a.data * mask, "relu", (a,), lambda g: (mul(g, Tensor(mask)),))


def texp(a: Tensor) -> Tensor:
    return _make(np.exp(a.data), "exp", (a,), lambda g: (mul(g, texp(a)),))


def sigmoid(a: Tensor) -> Tensor:
    data = np.exp(-np.logaddexp(0.0, -a.data))

    def backward(g):
        s = sigmoid(a)
        return (mul(g, mul(s, sub(1.0, s))),)

    return _make(data, "sigmoid", (a,), backward)


def softplus(a: Tensor) -> Tensor:
    """``log(1 + exp(a))`` evaluated without overflow."""
    return _make(np.logaddexp(0.0, a.data), "softplus", (a,), lambda g: (mul(g, sigmoid(a)),))


def square(a: Tensor) -> Tensor:
    return mul(a, a)


# -- shape ------------------------------------------------------------------


def sum_to(a: Tensor, shape: tuple) -> Tensor:
    """Sum out broadcast dimensions so ``a`` takes ``shape``."""
    shape = tuple(shape)
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and a.shape[i + lead] != 1
    )
    data = a.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    src = a.shape
    return _make(data, "sum_to", (a,), lambda g: (broadcast_to(g, src),))


def broadcast_to(a: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    if a.shape == shape:
        return a
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    src = a.shape
    return _make(data, "broadcast_to", (a,), lambda g: (sum_to(g, src),))


def broadcast_row(a: Tensor, n: int) -> Tensor:
    """Replicate a ``[1, D]`` row ``n`` times into ``[n, D]``."""
    if a.ndim != 2 or a.shape[0] != 1:
        raise DimensionError(f"broadcast_row expects shape [1, D], got {a.shape}")
    return broadcast_to(a, (n, a.shape[1]))


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {src} into {tuple(shape)}") from None
    return _make(data, "reshape", (a,), lambda g: (reshape(g, src),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), "transpose", (a,),
                 lambda g: (transpose(g, inverse),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if axis is None:
        kept = (1,) * a.ndim
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = {ax % a.ndim for ax in axes}
        kept = tuple(1 if i in axes else n for i, n in enumerate(src))
    return _make(np.asarray(data), "sum", (a,),
                 lambda g: (broadcast_to(reshape(g, kept), src),))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    total = tsum(a, axis, keepdims)
    count = a.size // max(total.size, 1) if a.size else 1
    return mul_scalar(total, 1.0 / count)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise DimensionError(
                f"concat axis {axis}: incompatible shapes {tensors[0].shape} and {t.shape}"
            )
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * ndim
            idx[axis] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    return _make(data, "concat", tuple(tensors), backward)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing."""
    src = a.shape
    return _make(np.asarray(a.data[idx]), "getitem", (a,),
                 lambda g: (_scatter(g, idx, src),))


def _scatter(g: Tensor, idx, shape: tuple) -> Tensor:
    data = np.zeros(shape)
    data[idx] = g.data
    return _make(data, "scatter", (g,), lambda gg: (getitem(gg, idx),))


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows ``a[indices]``; repeated indices are allowed."""
    indices = np.asarray(indices, dtype=np.intp)
    src = a.shape
    return _make(a.data[indices], "take_rows", (a,),
                 lambda g: (_index_add(g, indices, src),))


def _index_add(g: Tensor, indices: np.ndarray, shape: tuple) -> Tensor:
    data = np.zeros(shape)
    np.add.at(data, indices, g.data)
    return _make(data, "index_add", (g,), lambda gg: (take_rows(gg, indices),))


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor, rowwise: bool = False) -> Tensor:
    """``a[..., k] @ b[k, n]``.

    ``rowwise`` evaluates with a fixed per-row accumulation order, so each
    output row is bitwise independent of the other rows of ``a`` (BLAS
    kernels do not guarantee this).
    """
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    k, n = b.shape

    def backward(g):
        ga = matmul(g, transpose(b), rowwise) if a.node is not None else None
        gb = None
        if b.node is not None:
            if a.ndim == 2:
                gb = matmul(transpose(a), g)
            else:
                gb = matmul(transpose(reshape(a, (-1, k))), reshape(g, (-1, n)))
        return ga, gb

    data = np.einsum("...k,kn->...n", a.data, b.data) if rowwise else a.data @ b.data
    return _make(data, "matmul", (a, b), backward)


def ordered_row_sum(a: Tensor) -> Tensor:
    """Sum of the rows of ``a[n, k]`` taken in lexicographic row order.

    The result is bitwise invariant to any permutation of the rows.
    """
    if a.ndim != 2:
        raise DimensionError(f"ordered_row_sum expects [n, k], got {a.shape}")
    order = np.lexsort(a.data.T[::-1]) if a.shape[1] else np.arange(a.shape[0])
    return tsum(take_rows(a, order), axis=0, keepdims=True)


# -- losses and normalisers -------------------------------------------------


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted log-sum-exp along ``axis`` with the axis kept."""
    m = a.data.max(axis=axis, keepdims=True)
    data = m + np.log(np.exp(a.data - m).sum(axis=axis, keepdims=True))
    src = a.shape
    # the gradient is softmax(a), built from differentiable ops
    return _make(data, "logsumexp", (a,),
                 lambda g: (mul(broadcast_to(g, src), texp(sub(a, logsumexp(a, axis)))),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    return sub(a, logsumexp(a, axis))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    return texp(log_softmax(a, axis))


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise LabelIndexError("labels must be a 1-D integer vector")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelIndexError(
            f"label out of range [0, {n_classes}): found {labels.min()}..{labels.max()}"
        )
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under row softmax."""
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects [n, c] logits, got {logits.shape}")
    n, c = logits.shape
    target = one_hot(labels, c)
    if target.shape[0] != n:
        raise DimensionError(f"{target.shape[0]} labels for {n} logit rows")
    picked = tsum(mul(log_softmax(logits, axis=1), Tensor(target)))
    return mul_scalar(picked, -1.0 / n)


# -- convolution ------------------------------------------------------------


def conv1d_dilated_nlc(x: Tensor, kernels: Tensor, dilation: int, rowwise: bool = False) -> Tensor:
    """Kernel-size-2 dilated convolution on channels-last ``[n, len, ch_in]``.

    Returns ``[n, len - dilation, ch_out]``; output ``t`` combines taps at
    ``t`` and ``t + dilation``. No padding, stride 1.
    """
    if dilation < 1:
        raise DimensionError(f"dilation must be positive, got {dilation}")
    if x.ndim != 3 or kernels.ndim != 3 or kernels.shape[2] != 2:
        raise DimensionError(
            f"conv1d: expected input [n, len, ch] and kernels [out, in, 2], got {x.shape}, {kernels.shape}"
        )
    n, length, ch_in = x.shape
    if kernels.shape[1] != ch_in:
        raise DimensionError(f"conv1d: input has {ch_in} channels, kernels expect {kernels.shape[1]}")
    if length <= dilation:
        raise DimensionError(f"conv1d: length {length} must exceed dilation {dilation}")
    out_len = length - dilation
    first = x[:, 0:out_len, :]
    second = x[:, dilation:length, :]
    k0 = transpose(kernels[:, :, 0])
    k1 = transpose(kernels[:, :, 1])
    return add(matmul(first, k0, rowwise), matmul(second, k1, rowwise))


def conv1d_dilated(x: Tensor, kernels: Tensor, dilation: int) -> Tensor:
    """Dilated convolution on ``[n, ch_in, len]`` input with ``[ch_out, ch_in, 2]`` kernels."""
    if x.ndim != 3:
        raise DimensionError(f"conv1d: expected input [n, ch, len], got {x.shape}")
    out = conv1d_dilated_nlc(transpose(x, (0, 2, 1)), kernels, dilation)
    return transpose(out, (0, 2, 1))
