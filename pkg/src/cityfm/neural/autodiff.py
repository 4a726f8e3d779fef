"""A small reverse-mode automatic differentiation tape over float64 numpy arrays.

Only the operations the encoders need are provided. Every op records its
parents together with a closure mapping the output gradient to one gradient
per parent; :meth:`Tensor.backward` walks the graph in reverse topological
order and accumulates.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 parents: Sequence["Tensor"] = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.data + b.data, parents=(a, b),
                  backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.data * b.data, parents=(a, b),
                  backward=lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor(a.data * c, parents=(a,), backward=lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data @ b.data, parents=(a, b), backward=lambda g: (g @ b.data.T, a.data.T @ g))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return Tensor(y, parents=(a,), backward=lambda g: (g * (1.0 - y * y),))


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor(a.data.reshape(shape), parents=(a,), backward=lambda g: (g.reshape(a.shape),))


def mean(a: Tensor, axis) -> Tensor:
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    n = int(np.prod([a.shape[ax] for ax in axes]))

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axes), a.shape) / n,)

    return Tensor(a.data.mean(axis=axes), parents=(a,), backward=back)


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(a.data[idx], parents=(a,), backward=back)


def embedding_bag(table: Tensor, ids: np.ndarray, offsets: np.ndarray) -> Tensor:
    """Mean of ``table`` rows per bag; bag i spans ``ids[offsets[i]:offsets[i+1]]``."""
    ids = np.asarray(ids, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    lengths = np.diff(offsets)
    if np.any(lengths <= 0):
        raise ValueError("empty bag")
    bag_of = np.repeat(np.arange(len(lengths)), lengths)
    rows = table.data[ids] / lengths[bag_of][:, None]
    out = np.zeros((len(lengths), table.shape[1]))
    np.add.at(out, bag_of, rows)

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g[bag_of] / lengths[bag_of][:, None])
        return (gt,)

    return Tensor(out, parents=(table,), backward=back)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 2, pad: int = 1) -> Tensor:
    """Cross-correlation of x (N, C, H, W) with w (O, C, K, K) plus bias b (O,)."""
    n, c, h, wd = x.shape
    o, c2, k, k2 = w.shape
    if c != c2 or k != k2:
        raise ValueError(f"conv shape mismatch: x {x.shape}, w {w.shape}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    offsets = [(i, j) for i in range(k) for j in range(k)]
    patches = [xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] for i, j in offsets]
    cols = np.stack(patches, axis=2)  # (N, C, K*K, Ho, Wo)
    cols = cols.transpose(0, 3, 4, 1, 2).reshape(n * ho * wo, c * k * k)
    wmat = w.data.reshape(o, c * k * k)
    out = (cols @ wmat.T + b.data).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (gmat.T @ cols).reshape(w.shape)
        gb = gmat.sum(axis=0)
        gcols = (gmat @ wmat).reshape(n, ho, wo, c, k * k).transpose(0, 3, 4, 1, 2)
        gxp = np.zeros_like(xp)
        for t, (i, j) in enumerate(offsets):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, t]
        gx = gxp[:, :, pad:pad + h, pad:pad + wd]
        return gx, gw, gb

    return Tensor(out, parents=(x, w, b), backward=back)


def custom(value: float | np.ndarray, parents: Sequence[Tensor], grads: Sequence[np.ndarray]) -> Tensor:
    """Scalar node whose parent gradients were computed in closed form."""

    def back(g):
        return tuple(g * gp for gp in grads)

    return Tensor(value, parents=parents, backward=back)
