"""Parameters and the momentum-SGD update."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigError, DivergenceError, OptimizerStateError
from .tensor import Tensor


class Parameter:
    """A named learnable tensor with its momentum buffer."""

    __slots__ = ("tensor", "momentum_buffer", "name")

    def __init__(self, values: np.ndarray, name: str):
        self.tensor = Tensor(values, requires_grad=True)
        self.momentum_buffer = np.zeros_like(self.tensor.values)
        self.name = name

    @property
    def values(self) -> np.ndarray:
        return self.tensor.values

    def __repr__(self) -> str:  # pragma: no cover
        return f"Parameter({self.name}, shape={self.tensor.shape})"


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


def sgd_step(params: Iterable[Parameter], config: OptimizerConfig) -> None:
    """buf <- momentum*buf + (grad + wd*w); w <- w - lr*buf; grads cleared.

    The step is atomic: all gradients are validated before any parameter is
    touched, so a non-finite gradient aborts without partial updates.
    """
    params = list(params)
    for p in params:
        g = p.tensor.grad
        if g is None:
            raise OptimizerStateError(f"parameter {p.name!r} has no gradient")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter {p.name!r}")
    for p in params:
        g = p.tensor.grad.astype(np.float32, copy=False)
        w = p.tensor.values
        buf = p.momentum_buffer
        buf *= config.momentum
        buf += g + config.weight_decay * w
        w -= config.learning_rate * buf
        p.tensor.grad = None


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.tensor.grad = None
