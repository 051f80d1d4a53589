"""Finite-difference verification of analytic gradients.

The analytic pass runs at the model's native float32; the central-difference
oracle evaluates the same function at float64 points so truncation, not
rounding, dominates the comparison.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def grad_check(f: Callable[[Tensor], Tensor], point: np.ndarray,
               step: float = 1e-3) -> float:
    """Worst relative error between analytic and central-difference gradients.

    The error is measured relative to the largest gradient entry so that
    exactly-zero components do not blow up the ratio.
    """
    point = np.asarray(point, dtype=np.float64)
    t = Tensor(point, requires_grad=True)  # float32 by default
    out = f(t)
    out.backward()
    analytic = t.grad.astype(np.float64)

    numeric = np.zeros_like(point)
    flat = point.reshape(-1)
    for i in range(flat.size):
        hi = flat.copy()
        lo = flat.copy()
        hi[i] += step
        lo[i] -= step
        f_hi = float(f(Tensor(hi.reshape(point.shape), dtype=np.float64)).values)
        f_lo = float(f(Tensor(lo.reshape(point.shape), dtype=np.float64)).values)
        numeric.reshape(-1)[i] = (f_hi - f_lo) / (2.0 * step)

    denom = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / denom)
