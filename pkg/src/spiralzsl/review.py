"""Review machinery: revisit, revise, the review losses, confidence, episodes.

A review episode iterates rethink (select a group), revisit (extract a masked
revision from the visual representation) and revise (fold the revision into
the running prediction) until the confidence parameter clears its threshold
or every group has been used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import ops
from .errors import (ConfigError, ContractViolationError,
                     DegenerateVectorError, ShapeError)
from .layers import Dense
from .optim import Parameter
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class ReviewConfig:
    k: int = 5
    eta_threshold: float = 0.4
    alpha: float = 0.9

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        # 0 is accepted as the degenerate always-halt bound
        if not 0 <= self.eta_threshold <= 1:
            raise ConfigError("eta_threshold must be in [0, 1]")


def beta_weight(t: int) -> float:
    """Auto-weighted revision factor: revising prediction t uses 1/(t+1)."""
    return 1.0 / (t + 1)


class RevisionModel:
    """f_v: dense stack over (group-masked a0, embedded h), masked on output.

    Entries outside the selected group's support come out exactly zero, so the
    local loss can only shape the highlighted criteria.
    """

    def __init__(self, feat_dim: int, m: int, rng: np.random.Generator,
                 vis_dim: int = 32, hidden: int | None = None,
                 bias: bool = True, dropout_keep: float = 0.5,
                 prefix: str = "revision"):
        self.m = m
        self.dropout_keep = dropout_keep
        self.vis = Dense(feat_dim, vis_dim, f"{prefix}.vis", rng)
        if hidden is None:
            self.fc = [Dense(vis_dim + m, m, f"{prefix}.fc", rng, bias=bias)]
        else:
            self.fc = [Dense(vis_dim + m, hidden, f"{prefix}.fc0", rng, bias=bias),
                       Dense(hidden, m, f"{prefix}.fc1", rng, bias=bias)]

    def __call__(self, a0: Tensor, h: Tensor, g_row: Tensor,
                 training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        z = ops.concat([ops.mul(g_row, a0), ops.relu(self.vis(h))], axis=-1)
        out = z
        for layer in self.fc:
            out = layer(out)
        out = ops.dropout(out, self.dropout_keep, rng, training)
        return ops.mul(out, g_row)

    def parameters(self) -> list[Parameter]:
        params = self.vis.parameters()
        for layer in self.fc:
            params = params + layer.parameters()
        return params


def revisit(a0: Tensor, h: Tensor, g_row: Tensor, model: RevisionModel,
            training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Masked revision for one selected attribute group row."""
    return model(a0, h, g_row, training=training, rng=rng)


def revise(a_t: Tensor, a_r: Tensor, t: int) -> Tensor:
    """a_{t+1} = a_t/||a_t|| + beta * a_r/||a_r|| with beta = 1/(t+1)."""
    return ops.unit_rows(a_t) + beta_weight(t) * ops.unit_rows(a_r)


def verify_revision_identity(a_t: np.ndarray, a_r: np.ndarray, t: int,
                             phi_unit: np.ndarray) -> float:
    """Residual of the weighted-similarity decomposition of the revised cosine.

    cos(a_{t+1}, phi) must equal [cos(a_t, phi) + beta*cos(a_r, phi)] / ||a_{t+1}||
    for unit phi. Evaluated in float64; the return value is the absolute gap.
    """
    a_t = np.asarray(a_t, dtype=np.float64)
    a_r = np.asarray(a_r, dtype=np.float64)
    phi = np.asarray(phi_unit, dtype=np.float64)
    if not np.isclose(np.linalg.norm(phi), 1.0, atol=1e-5):
        raise ShapeError("phi must be a unit vector")
    beta = beta_weight(t)
    nt, nr = np.linalg.norm(a_t), np.linalg.norm(a_r)
    if nt == 0 or nr == 0:
        raise DegenerateVectorError("zero-norm input to the revision identity")
    a_next = a_t / nt + beta * a_r / nr
    nn = np.linalg.norm(a_next)
    lhs = float(a_next @ phi / nn)
    cos_t = float(a_t @ phi / nt)
    cos_r = float(a_r @ phi / nr)
    rhs = (cos_t + beta * cos_r) / nn
    return abs(lhs - rhs)


# ------------------------------------------------------------------- losses
def loss_loc(a_r: Tensor, target_idx, phi_seen: Tensor) -> Tensor:
    """Local cross entropy over the masked revision's compatibility scores."""
    return ops.cross_entropy(ops.linear(a_r, phi_seen), target_idx)


def loss_oa(a_next: Tensor, target_idx, phi_seen: Tensor) -> Tensor:
    """Overall cross entropy over the revised prediction."""
    return ops.cross_entropy(ops.linear(a_next, phi_seen), target_idx)


def loss_jnt(a0: Tensor, a_next: Tensor, target_idx, phi_seen: Tensor) -> Tensor:
    """Joint regularizer coupling the preview and the revised prediction.

    -log of the per-criterion joint numerator sum_i exp(a0_i*phi_i + a_i*phi_i)
    over the product of the two full compatibility partition sums, computed
    with log-sum-exp stabilization.
    """
    phi_vals = phi_seen.values
    idx = np.atleast_1d(np.asarray(target_idx, dtype=np.int64))
    if idx.min() < 0 or idx.max() >= phi_vals.shape[0]:
        raise ShapeError("target index out of range")
    phi_y = Tensor(phi_vals[idx[0]] if a0.ndim == 1 else phi_vals[idx])
    z = ops.mul(a0, phi_y) + ops.mul(a_next, phi_y)
    numerator = ops.logsumexp(z)
    log_z0 = ops.logsumexp(ops.linear(a0, phi_seen))
    log_z1 = ops.logsumexp(ops.linear(a_next, phi_seen))
    return log_z0 + log_z1 - numerator


def loss_rev(trajectory: "ReviewTrajectory", target_idx: int, alpha: float,
             phi_seen: Tensor) -> float:
    """Discounted sum of the three step losses over a recorded trajectory."""
    if not trajectory.steps:
        raise ShapeError("empty trajectory")
    a0 = Tensor(trajectory.a0)
    total = 0.0
    with no_grad():
        for t, step in enumerate(trajectory.steps, start=1):
            a_r = Tensor(step.revision)
            a_next = Tensor(step.revised)
            term = (loss_loc(a_r, target_idx, phi_seen).item()
                    + loss_oa(a_next, target_idx, phi_seen).item()
                    + loss_jnt(a0, a_next, target_idx, phi_seen).item())
            total += alpha ** (t - 1) * term
    return total


# ------------------------------------------------ probabilities, confidence
def class_probabilities(a: Tensor, phi_unit: Tensor, phi_raw: Tensor,
                        mode: str = "cosine") -> Tensor:
    """Per-class probability of a prediction vector.

    ``cosine`` (default): softmax over cosine similarities to the class
    attributes; ``dot``: softmax over raw compatibility scores.
    """
    if mode == "cosine":
        return ops.softmax(ops.linear(ops.unit_rows(a), phi_unit))
    if mode == "dot":
        return ops.softmax(ops.linear(a, phi_raw))
    raise ConfigError(f"unknown probability mode {mode!r}")


def union_probability(p_a0: np.ndarray, p_revisions: list[np.ndarray]) -> np.ndarray:
    """p(UNI) = p(a0) + sum_t p(a_r^t)/(1+t) with revisions indexed from 1."""
    out = np.asarray(p_a0, dtype=np.float64).copy()
    for t, p_r in enumerate(p_revisions, start=1):
        out += np.asarray(p_r, dtype=np.float64) / (1.0 + t)
    return out


def confidence(p_a0: np.ndarray, p_revisions: list[np.ndarray]) -> float:
    """eta: the largest class mass of the union probability (may exceed 1)."""
    return float(union_probability(p_a0, p_revisions).max(axis=-1))


# ----------------------------------------------------------------- episodes
class Selector(Protocol):
    def begin(self, h_vis: np.ndarray, a0: np.ndarray) -> None: ...

    def select(self, a_t: np.ndarray, used: np.ndarray) -> int: ...


class RandomSelector:
    """Uniform selection over the not-yet-used groups."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def begin(self, h_vis: np.ndarray, a0: np.ndarray) -> None:
        pass

    def select(self, a_t: np.ndarray, used: np.ndarray) -> int:
        free = np.nonzero(~used)[0]
        return int(self.rng.choice(free))


class ScriptedSelector:
    """Replays a fixed index sequence (tests and traces)."""

    def __init__(self, indices: list[int]):
        self.indices = list(indices)
        self._pos = 0

    def begin(self, h_vis: np.ndarray, a0: np.ndarray) -> None:
        self._pos = 0

    def select(self, a_t: np.ndarray, used: np.ndarray) -> int:
        idx = self.indices[self._pos]
        self._pos += 1
        return int(idx)


@dataclass
class ReviewStep:
    group_index: int
    revision: np.ndarray
    revised: np.ndarray
    eta: float
    halted: bool
    term_probs: tuple[float, float, float] | None = None
    p_uni_y: float | None = None


@dataclass
class ReviewTrajectory:
    a0: np.ndarray
    steps: list[ReviewStep] = field(default_factory=list)
    max_steps: int = 0

    def group_indices(self) -> list[int]:
        return [s.group_index for s in self.steps]

    def final_prediction(self) -> np.ndarray:
        return self.steps[-1].revised if self.steps else self.a0


def review_episode(h_vis: Tensor, a0: Tensor, g_flat: Tensor,
                   revision_model: RevisionModel, selector: Selector,
                   config: ReviewConfig, phi_unit: Tensor, phi_raw: Tensor,
                   *, early_stop: bool = True, prob_mode: str = "cosine",
                   target_idx: int | None = None,
                   phi_loss: Tensor | None = None) -> ReviewTrajectory:
    """Run one instance's review episode and record every step.

    With ``target_idx`` and ``phi_loss`` given, each step also records the
    correct-class probabilities of the three review loss terms and the union
    probability of the true class (reward ingredients for the selector
    policy). Forward passes run without gradients.
    """
    m = revision_model.m
    k = config.k
    if g_flat.values.shape[-1] != k * m:
        raise ShapeError("group tensor width must be k*m")
    traj = ReviewTrajectory(a0=a0.values.copy(), max_steps=k)
    used = np.zeros(k, dtype=bool)
    with no_grad():
        p0 = class_probabilities(a0, phi_unit, phi_raw, prob_mode).values
        p_revs: list[np.ndarray] = []
        a_t = a0
        selector.begin(h_vis.values, a0.values)
        for t in range(k):
            choice = int(selector.select(a_t.values, used.copy()))
            if not 0 <= choice < k:
                raise ContractViolationError(f"selector returned {choice}, not a group index")
            if used[choice]:
                raise ContractViolationError(f"selector reselected group {choice}")
            used[choice] = True
            g_row = ops.take_block(g_flat, choice, m)
            a_r = revisit(a0, h_vis, g_row, revision_model)
            a_next = revise(a_t, a_r, t)
            p_revs.append(class_probabilities(a_r, phi_unit, phi_raw, prob_mode).values)
            uni = union_probability(p0, p_revs)
            eta = float(uni.max())

            term_probs = None
            p_uni_y = None
            if target_idx is not None and phi_loss is not None:
                l_loc = loss_loc(a_r, target_idx, phi_loss).item()
                l_oa = loss_oa(a_next, target_idx, phi_loss).item()
                l_jnt = loss_jnt(a0, a_next, target_idx, phi_loss).item()
                term_probs = (float(np.exp(-l_loc)), float(np.exp(-l_oa)),
                              float(min(1.0, np.exp(-l_jnt))))
                p_uni_y = float(uni[target_idx])

            stop = (early_stop and eta > config.eta_threshold) or t == k - 1
            traj.steps.append(ReviewStep(
                group_index=choice, revision=a_r.values.copy(),
                revised=a_next.values.copy(), eta=eta, halted=stop,
                term_probs=term_probs, p_uni_y=p_uni_y))
            a_t = a_next
            if stop:
                break
    return traj
