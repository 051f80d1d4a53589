"""Small trainable building blocks: dense layers and a GRU cell."""

from __future__ import annotations

import numpy as np

from .optim import Parameter
from .tensor import Tensor
from . import ops


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Dense:
    """Fully connected layer y = W x (+ b)."""

    def __init__(self, in_dim: int, out_dim: int, name: str,
                 rng: np.random.Generator, bias: bool = True):
        self.w = Parameter(_uniform(rng, (out_dim, in_dim), in_dim), f"{name}.w")
        self.b = Parameter(_uniform(rng, (out_dim,), in_dim), f"{name}.b") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.w.tensor, None if self.b is None else self.b.tensor)

    def parameters(self) -> list[Parameter]:
        return [self.w] if self.b is None else [self.w, self.b]


class GRUCell:
    """Standard GRU update.

    z = sigmoid(Wz x + Uz h + bz)
    r = sigmoid(Wr x + Ur h + br)
    n = tanh(Wn x + r * (Un h) + bn)
    h' = (1 - z) * n + z * h
    """

    def __init__(self, in_dim: int, hidden_dim: int, name: str, rng: np.random.Generator):
        self.hidden_dim = hidden_dim
        self.wz = Parameter(_uniform(rng, (hidden_dim, in_dim), in_dim), f"{name}.wz")
        self.wr = Parameter(_uniform(rng, (hidden_dim, in_dim), in_dim), f"{name}.wr")
        self.wn = Parameter(_uniform(rng, (hidden_dim, in_dim), in_dim), f"{name}.wn")
        self.uz = Parameter(_uniform(rng, (hidden_dim, hidden_dim), hidden_dim), f"{name}.uz")
        self.ur = Parameter(_uniform(rng, (hidden_dim, hidden_dim), hidden_dim), f"{name}.ur")
        self.un = Parameter(_uniform(rng, (hidden_dim, hidden_dim), hidden_dim), f"{name}.un")
        self.bz = Parameter(np.zeros(hidden_dim, dtype=np.float32), f"{name}.bz")
        self.br = Parameter(np.zeros(hidden_dim, dtype=np.float32), f"{name}.br")
        self.bn = Parameter(np.zeros(hidden_dim, dtype=np.float32), f"{name}.bn")

    def gates(self, x: Tensor, h: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        z = ops.sigmoid(ops.linear(x, self.wz.tensor, self.bz.tensor)
                        + ops.linear(h, self.uz.tensor))
        r = ops.sigmoid(ops.linear(x, self.wr.tensor, self.br.tensor)
                        + ops.linear(h, self.ur.tensor))
        n = ops.tanh(ops.linear(x, self.wn.tensor, self.bn.tensor)
                     + ops.mul(r, ops.linear(h, self.un.tensor)))
        return z, r, n

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        z, _, n = self.gates(x, h)
        one = Tensor(np.ones_like(z.values), dtype=z.values.dtype)
        return ops.mul(one - z, n) + ops.mul(z, h)

    def initial_state(self, batch: int | None = None) -> Tensor:
        shape = (self.hidden_dim,) if batch is None else (batch, self.hidden_dim)
        return Tensor(np.zeros(shape, dtype=np.float32))

    def parameters(self) -> list[Parameter]:
        return [self.wz, self.wr, self.wn, self.uz, self.ur, self.un,
                self.bz, self.br, self.bn]


def gru_cell(x: Tensor, h: Tensor, cell: GRUCell) -> Tensor:
    """Functional form of the GRU update."""
    return cell(x, h)
