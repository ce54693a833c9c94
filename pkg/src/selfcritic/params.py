"""Ordered, named parameter collections threaded explicitly through models."""

from __future__ import annotations

from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .autodiff.tensor import Node, Tensor, concat, getitem, reshape, variable
from .errors import ContractError, DimensionError

Layout = tuple  # tuple[tuple[str, tuple[int, ...]], ...]


def layout_size(layout: Layout) -> int:
    return int(sum(int(np.prod(shape)) for _, shape in layout))


class ParameterSet:
    """Named tensors in a fixed order.

    The order is part of the layout: two sets sharing a layout iterate
    identically, and ``flatten`` concatenates in that order.
    """

    __slots__ = ("_names", "_tensors")

    def __init__(self, items: Iterable[tuple[str, Tensor]] = ()):
        names, tensors = [], []
        for name, t in items:
            if not isinstance(t, Tensor):
                t = Tensor(t)
            names.append(name)
            tensors.append(t)
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate parameter names in {names}")
        self._names = tuple(names)
        self._tensors = tuple(tensors)

    @classmethod
    def from_arrays(cls, arrays: dict, tracked: bool = False) -> "ParameterSet":
        wrap = variable if tracked else Tensor
        return cls((k, wrap(np.array(v, dtype=np.float64))) for k, v in arrays.items())

    @property
    def layout(self) -> Layout:
        return tuple((n, tuple(t.shape)) for n, t in zip(self._names, self._tensors))

    @property
    def names(self) -> tuple:
        return self._names

    @property
    def size(self) -> int:
        return layout_size(self.layout)

    def tensors(self) -> tuple:
        return self._tensors

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return zip(self._names, self._tensors)

    def __iter__(self):
        return iter(self._names)

    def __len__(self):
        return len(self._names)

    def __contains__(self, name):
        return name in self._names

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[self._names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def __repr__(self):
        body = ", ".join(f"{n}{list(s)}" for n, s in self.layout)
        return f"ParameterSet({body})"

    def map(self, fn: Callable[[Tensor], Tensor]) -> "ParameterSet":
        return ParameterSet((n, fn(t)) for n, t in self.items())

    def zip_map(self, other: "ParameterSet", fn: Callable) -> "ParameterSet":
        self.check_layout(other.layout)
        return ParameterSet(
            (n, fn(a, b)) for n, a, b in zip(self._names, self._tensors, other._tensors)
        )

    def check_layout(self, layout: Layout) -> None:
        if self.layout != tuple(layout):
            raise ContractError(f"parameter layout mismatch: {self.layout} vs {tuple(layout)}")

    def detach(self) -> "ParameterSet":
        return self.map(lambda t: Tensor(t.data))

    def as_leaves(self) -> "ParameterSet":
        """Fresh leaf tensors over copies of the current values."""
        return self.map(lambda t: variable(t.data.copy()))

    def ensure_tracked(self) -> "ParameterSet":
        """Wrap untracked entries as leaves so gradients can reach them."""
        if all(t.node is not None for t in self._tensors):
            return self
        return self.map(lambda t: t if t.node is not None else Tensor(t.data, Node("leaf", (), None)))

    def arrays(self) -> dict:
        return {n: t.data for n, t in self.items()}

    def equal(self, other: "ParameterSet") -> bool:
        """Bitwise equality of layouts and values."""
        return self.layout == other.layout and all(
            a.data.shape == b.data.shape and a.data.tobytes() == b.data.tobytes()
            for a, b in zip(self._tensors, other._tensors)
        )

    def flatten(self) -> Tensor:
        """All entries concatenated in layout order as a ``[1, P]`` row."""
        if not self._tensors:
            return Tensor(np.zeros((1, 0)))
        return concat([reshape(t, (1, -1)) for t in self._tensors], axis=1)

    def flat_numpy(self) -> np.ndarray:
        if not self._tensors:
            return np.zeros(0)
        return np.concatenate([t.data.reshape(-1) for t in self._tensors])

    @classmethod
    def unflatten(cls, vector, layout: Layout) -> "ParameterSet":
        v = vector if isinstance(vector, Tensor) else Tensor(vector)
        v = reshape(v, (1, -1)) if v.ndim != 2 else v
        total = layout_size(layout)
        if v.shape[1] != total:
            raise DimensionError(f"unflatten: vector of length {v.shape[1]} for layout of size {total}")
        items, offset = [], 0
        for name, shape in layout:
            count = int(np.prod(shape))
            items.append((name, reshape(getitem(v, (0, slice(offset, offset + count))), shape)))
            offset += count
        return cls(items)


def global_norm(params: ParameterSet) -> float:
    return float(np.sqrt(sum(float(np.sum(t.data ** 2)) for t in params.tensors())))


def stack_names(sets: Sequence[ParameterSet], prefixes: Sequence[str]) -> ParameterSet:
    """Merge several sets into one, prefixing names to keep them unique."""
    return ParameterSet(
        (f"{p}/{n}", t) for p, s in zip(prefixes, sets) for n, t in s.items()
    )
