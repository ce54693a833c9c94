"""Reverse-mode gradients over the recorded tape and a finite-difference oracle."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ContractError
from .tensor import Node, Tensor, grad_mode


def _as_list(wrt):
    if isinstance(wrt, Tensor):
        return [wrt]
    if hasattr(wrt, "layout"):
        return list(wrt.tensors())
    return list(wrt)


def _rewrap(wrt, grads):
    if isinstance(wrt, Tensor):
        return grads[0]
    if hasattr(wrt, "layout"):
        return type(wrt)(zip(wrt.names, grads))
    return grads


def tape_of(output: Tensor, since: int = -1) -> list:
    """Nodes reachable from ``output`` (with id > ``since``) in tape order."""
    if output.node is None:
        return []
    seen: dict[int, Node] = {}
    stack = [output.node]
    while stack:
        node = stack.pop()
        if node.id in seen:
            continue
        seen[node.id] = node
        for p in node.parents:
            pn = p.node
            if pn is not None and pn.id > since and pn.id not in seen:
                stack.append(pn)
    return [seen[i] for i in sorted(seen)]


def grad(output: Tensor, wrt, create_graph: bool = False):
    """Gradient of scalar ``output`` with respect to each tensor in ``wrt``.

    ``wrt`` may be a Tensor, a ParameterSet or a sequence of tensors; the
    result has the same form. Unreachable entries get zero gradients. With
    ``create_graph`` the backward pass is itself recorded, so the returned
    gradients can be differentiated again.
    """
    if output.size != 1:
        raise ContractError(f"grad needs a scalar output, got shape {output.shape}")
    tensors = _as_list(wrt)
    results: list = [None] * len(tensors)
    targets: dict[int, list] = {}
    for i, t in enumerate(tensors):
        if t.node is not None:
            targets.setdefault(t.node.id, []).append(i)

    if output.node is not None and targets:
        order = tape_of(output, since=min(targets) - 1)
        relevant = set(targets)
        for node in order:
            if node.id not in relevant and any(
                p.node is not None and p.node.id in relevant for p in node.parents
            ):
                relevant.add(node.id)
        if output.node.id in relevant:
            pending = {output.node.id: Tensor(np.ones(output.shape))}
            with grad_mode(create_graph):
                for node in reversed(order):
                    g = pending.pop(node.id, None)
                    if g is None:
                        continue
                    for i in targets.get(node.id, ()):
                        results[i] = g
                    if node.backward is None:
                        continue
                    for parent, pg in zip(node.parents, node.backward(g)):
                        if pg is None or parent.node is None:
                            continue
                        pid = parent.node.id
                        if pid not in relevant:
                            continue
                        prev = pending.get(pid)
                        pending[pid] = pg if prev is None else prev + pg

    grads = [
        r if r is not None else Tensor(np.zeros(t.shape)) for r, t in zip(results, tensors)
    ]
    if not create_graph:
        grads = [Tensor(g.data) for g in grads]
    return _rewrap(wrt, grads)


def finite_diff_oracle(f: Callable, params, eps: float = 1e-5):
    """Central-difference gradient of ``f(params) -> scalar``.

    ``f`` receives a ParameterSet of untracked tensors and may take inner
    gradients itself. Cost is two evaluations per coordinate.
    """
    if not eps > 0:
        raise ContractError(f"finite difference step must be positive, got {eps}")
    base = [t.data.copy() for t in _as_list(params)]
    names = list(params.names) if hasattr(params, "layout") else None

    def evaluate(arrays):
        ts = [Tensor(a) for a in arrays]
        if names is not None:
            arg = type(params)(zip(names, ts))
        elif isinstance(params, Tensor):
            arg = ts[0]
        else:
            arg = ts
        out = f(arg)
        return float(out.data.reshape(-1)[0]) if isinstance(out, Tensor) else float(out)

    grads = []
    for k, arr in enumerate(base):
        g = np.zeros_like(arr)
        flat = g.reshape(-1)
        for j in range(arr.size):
            plus = [a if i != k else a.copy() for i, a in enumerate(base)]
            minus = [a if i != k else a.copy() for i, a in enumerate(base)]
            plus[k].reshape(-1)[j] += eps
            minus[k].reshape(-1)[j] -= eps
            flat[j] = (evaluate(plus) - evaluate(minus)) / (2.0 * eps)
        grads.append(Tensor(g))
    return _rewrap(params, grads)


def relative_error(a, b, floor: float = 1e-8) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)`` over all entries."""
    va = np.concatenate([t.data.reshape(-1) for t in _as_list(a)]) if not isinstance(a, np.ndarray) else a.reshape(-1)
    vb = np.concatenate([t.data.reshape(-1) for t in _as_list(b)]) if not isinstance(b, np.ndarray) else b.reshape(-1)
    denom = max(np.linalg.norm(va), np.linalg.norm(vb), floor)
    return float(np.linalg.norm(va - vb) / denom)
