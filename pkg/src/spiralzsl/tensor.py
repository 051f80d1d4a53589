"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float32 ndarray (float64 is allowed explicitly, used by the
finite-difference oracle) and records a dynamic compute graph while gradients
are enabled. ``backward()`` walks the graph in reverse topological order and
accumulates gradients into every node with ``requires_grad``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

from .errors import ShapeError

_GRAD_ENABLED = True


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation / rollouts)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, dtype=np.float32):
        self.values = np.asarray(values, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return self.values.item()

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.values, dtype=self.values.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.values.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar output."""
        if self.values.size != 1:
            raise ShapeError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.values))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(values, dtype=np.float32) -> Tensor:
    """A graph constant (no gradient)."""
    return Tensor(values, requires_grad=False, dtype=dtype)


def make_node(values: np.ndarray, parents: Iterable[Tensor],
              backward: Callable[[np.ndarray], None]) -> Tensor:
    """Create an op output, recording the graph only when gradients are on."""
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out._parents = ()
    out._backward = None
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; also supports adding a (m,) bias to a (B, m) matrix."""
    b = _as_tensor(b)
    av, bv = a.values, b.values
    if av.shape != bv.shape and not (av.ndim == bv.ndim + 1 and av.shape[1:] == bv.shape):
        raise ShapeError(f"add: incompatible shapes {av.shape} vs {bv.shape}")
    out_v = av + bv

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g if g.shape == bv.shape else g.sum(axis=0))

    return make_node(out_v, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors (or broadcast of (m,) into (B, m))."""
    av, bv = a.values, b.values
    if av.shape != bv.shape and not (av.ndim == bv.ndim + 1 and av.shape[1:] == bv.shape):
        raise ShapeError(f"mul: incompatible shapes {av.shape} vs {bv.shape}")
    out_v = av * bv

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * bv)
        if b.requires_grad:
            gb = g * av
            b._accumulate(gb if gb.shape == bv.shape else gb.sum(axis=0))

    return make_node(out_v, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    out_v = a.values * c

    def backward(g: np.ndarray) -> None:
        a._accumulate(g * c)

    return make_node(out_v, (a,), backward)


def tsum(a: Tensor) -> Tensor:
    """Sum of all entries, as a 0-d tensor."""
    out_v = np.asarray(a.values.sum(), dtype=a.values.dtype)

    def backward(g: np.ndarray) -> None:
        a._accumulate(np.broadcast_to(g, a.values.shape))

    return make_node(out_v, (a,), backward)


def tmean(a: Tensor) -> Tensor:
    """Mean of all entries, as a 0-d tensor."""
    n = a.values.size
    out_v = np.asarray(a.values.mean(), dtype=a.values.dtype)

    def backward(g: np.ndarray) -> None:
        a._accumulate(np.broadcast_to(g / n, a.values.shape))

    return make_node(out_v, (a,), backward)


def sum_last(a: Tensor) -> Tensor:
    """Sum over the last axis: (B, m) -> (B,), (m,) -> scalar."""
    out_v = a.values.sum(axis=-1)

    def backward(g: np.ndarray) -> None:
        a._accumulate(np.broadcast_to(np.expand_dims(g, -1), a.values.shape))

    return make_node(out_v, (a,), backward)
