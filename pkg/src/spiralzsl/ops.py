"""Differentiable operations used by the learned modules.

All ops accept 1-d (single instance) and 2-d (batch of rows) tensors unless
noted. Softmax-family ops are max-shifted for stability.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateVectorError, ShapeError
from .tensor import Tensor, make_node, mul, sum_last


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w.T (+ b). ``w`` has shape (out, in); x is (in,) or (B, in)."""
    xv, wv = x.values, w.values
    if xv.shape[-1] != wv.shape[1]:
        raise ShapeError(f"linear: input dim {xv.shape[-1]} != weight fan-in {wv.shape[1]}")
    out_v = xv @ wv.T
    if b is not None:
        out_v = out_v + b.values

    parents = (x, w) if b is None else (x, w, b)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g @ wv)
        if w.requires_grad:
            if xv.ndim == 1:
                w._accumulate(np.outer(g, xv))
            else:
                w._accumulate(g.T @ xv)
        if b is not None and b.requires_grad:
            b._accumulate(g if g.ndim == 1 else g.sum(axis=0))

    return make_node(out_v, parents, backward)


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    out_v = np.concatenate([p.values for p in parts], axis=axis)
    sizes = [p.values.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return make_node(out_v, parts, backward)


def relu(x: Tensor) -> Tensor:
    out_v = np.maximum(x.values, 0)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * (x.values > 0))

    return make_node(out_v, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out_v = 1.0 / (1.0 + np.exp(-x.values))

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * out_v * (1.0 - out_v))

    return make_node(out_v, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out_v = np.tanh(x.values)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * (1.0 - out_v * out_v))

    return make_node(out_v, (x,), backward)


def texp(x: Tensor) -> Tensor:
    out_v = np.exp(x.values)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * out_v)

    return make_node(out_v, (x,), backward)


def tlog(x: Tensor) -> Tensor:
    out_v = np.log(x.values)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g / x.values)

    return make_node(out_v, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes only through the interior."""
    out_v = np.clip(x.values, lo, hi)
    inside = (x.values >= lo) & (x.values <= hi)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * inside)

    return make_node(out_v, (x,), backward)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; the gradient follows the smaller branch (ties -> a)."""
    take_a = a.values <= b.values
    out_v = np.where(take_a, a.values, b.values)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * take_a)
        if b.requires_grad:
            b._accumulate(g * ~take_a)

    return make_node(out_v, (a, b), backward)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, max-shifted for stability."""
    if x.values.shape[-1] < 1:
        raise ShapeError("softmax over an empty axis")
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_v = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        dot = (g * out_v).sum(axis=-1, keepdims=True)
        x._accumulate(out_v * (g - dot))

    return make_node(out_v, (x,), backward)


def logsumexp(x: Tensor) -> Tensor:
    """Row-wise log(sum(exp)) over the last axis: (B, m) -> (B,), (m,) -> scalar."""
    m = x.values.max(axis=-1, keepdims=True)
    e = np.exp(x.values - m)
    s = e.sum(axis=-1, keepdims=True)
    out_v = (m + np.log(s)).squeeze(-1)
    soft = e / s

    def backward(g: np.ndarray) -> None:
        x._accumulate(np.expand_dims(g, -1) * soft)

    return make_node(out_v, (x,), backward)


def gather_cols(x: Tensor, idx) -> Tensor:
    """Pick one column per row: (B, C)[i, idx[i]] -> (B,); (C,)[idx] -> scalar."""
    xv = x.values
    if xv.ndim == 1:
        i = int(idx)
        if not 0 <= i < xv.shape[0]:
            raise ShapeError(f"gather_cols: index {i} out of range {xv.shape[0]}")
        out_v = xv[i].copy()

        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(xv)
            full[i] = g
            x._accumulate(full)

        return make_node(out_v, (x,), backward)

    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != (xv.shape[0],):
        raise ShapeError("gather_cols: need one index per row")
    if idx.min() < 0 or idx.max() >= xv.shape[1]:
        raise ShapeError("gather_cols: index out of range")
    rows = np.arange(xv.shape[0])
    out_v = xv[rows, idx].copy()

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(xv)
        full[rows, idx] = g
        x._accumulate(full)

    return make_node(out_v, (x,), backward)


def cross_entropy(scores: Tensor, target) -> Tensor:
    """-log softmax(scores)[target]; row-wise for batched scores."""
    return logsumexp(scores) - gather_cols(scores, target)


def unit_rows(x: Tensor) -> Tensor:
    """x / ||x|| per row (whole vector for 1-d input). Zero rows are an error."""
    norms = np.linalg.norm(x.values, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateVectorError("cannot normalize a zero-norm vector")
    out_v = x.values / norms

    def backward(g: np.ndarray) -> None:
        proj = (g * out_v).sum(axis=-1, keepdims=True)
        x._accumulate((g - out_v * proj) / norms)

    return make_node(out_v, (x,), backward)


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """(u . v) / (||u|| ||v||), row-wise; raises on zero-norm inputs."""
    return sum_last(mul(unit_rows(u), unit_rows(v)))


def take_block(x: Tensor, idx, block: int) -> Tensor:
    """Slice one length-``block`` segment per row of a (B, k*block) tensor.

    Row i yields x[i, idx[i]*block : (idx[i]+1)*block]. 1-d input with an int
    index returns a (block,) tensor.
    """
    xv = x.values
    single = xv.ndim == 1
    xv2 = xv[None, :] if single else xv
    idx2 = np.atleast_1d(np.asarray(idx, dtype=np.int64))
    k = xv2.shape[1] // block
    if xv2.shape[1] != k * block:
        raise ShapeError("take_block: width is not a multiple of block")
    if idx2.min() < 0 or idx2.max() >= k:
        raise ShapeError("take_block: block index out of range")
    rows = np.arange(xv2.shape[0])[:, None]
    cols = idx2[:, None] * block + np.arange(block)[None, :]
    out_v = xv2[rows, cols]
    if single:
        out_v = out_v[0]

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(xv2)
        full[rows, cols] = g[None, :] if single else g
        x._accumulate(full[0] if single else full)

    return make_node(out_v.copy(), (x,), backward)


def masked_log_softmax(logits: Tensor, valid: np.ndarray) -> Tensor:
    """Log-softmax over the entries where ``valid`` is True.

    Invalid entries come out as exactly 0 with zero gradient; their
    probability mass is exactly 0 by construction.
    """
    lv = logits.values
    valid = np.broadcast_to(np.asarray(valid, dtype=bool), lv.shape)
    if not valid.any(axis=-1).all():
        raise ShapeError("masked_log_softmax: a row has no valid action")
    neg = np.where(valid, lv, -np.inf)
    m = neg.max(axis=-1, keepdims=True)
    e = np.where(valid, np.exp(lv - m), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    out_v = np.where(valid, lv - m - np.log(s), 0.0).astype(lv.dtype)
    soft = e / s

    def backward(g: np.ndarray) -> None:
        g = g * valid
        dot = g.sum(axis=-1, keepdims=True)
        logits._accumulate((g - soft * dot) * valid)

    return make_node(out_v, (logits,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out_v = x.values.reshape(shape)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g.reshape(x.values.shape))

    return make_node(out_v, (x,), backward)


def dropout(x: Tensor, keep: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: active only while training, identity otherwise."""
    if not training or keep >= 1.0:
        return x
    mask = (rng.random(x.values.shape) < keep).astype(x.values.dtype) / keep
    return mul(x, Tensor(mask, dtype=x.values.dtype))
