"""Recurrent actor-critic group selection and its PPO optimization.

The policy consumes the episode state (visual representation, preview
prediction, current revised prediction) through a GRU so selections can
condition on earlier choices. Already-used groups are masked out of the
actor distribution with exactly zero probability. Optimization follows the
clipped-surrogate recipe with a value regression term and an entropy bonus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ContractViolationError, DivergenceError, ShapeError
from .layers import Dense, GRUCell
from .optim import OptimizerConfig, Parameter, sgd_step
from .tensor import Tensor, no_grad, tsum

CLIP_LO, CLIP_HI = 0.8, 1.2
VALUE_LOSS_WEIGHT = 0.5
ENTROPY_BONUS_WEIGHT = 0.01


@dataclass(frozen=True)
class PolicyConfig:
    k: int = 5
    enc_vis_dim: int = 48
    enc_at_hidden: int = 32
    enc_at_dim: int = 32
    actor_hidden: int = 48
    critic_hidden: int = 48


class PolicyNet:
    """GRU core with an actor head over groups and a critic value head.

    The (h_vis, a0) context is constant within an episode and encoded once;
    the per-step input is the current prediction a_t. The critic additionally
    sees the used-group mask.
    """

    def __init__(self, feat_dim: int, m: int, config: PolicyConfig,
                 rng: np.random.Generator, prefix: str = "policy"):
        self.k = config.k
        self.hidden_dim = config.enc_vis_dim + config.enc_at_dim
        self.enc_ctx = Dense(feat_dim + m, config.enc_vis_dim, f"{prefix}.ctx", rng)
        self.enc_at0 = Dense(m, config.enc_at_hidden, f"{prefix}.at0", rng)
        self.enc_at1 = Dense(config.enc_at_hidden, config.enc_at_dim, f"{prefix}.at1", rng)
        self.gru = GRUCell(self.hidden_dim, self.hidden_dim, f"{prefix}.gru", rng)
        self.actor0 = Dense(self.hidden_dim, config.actor_hidden, f"{prefix}.actor0", rng)
        self.actor1 = Dense(config.actor_hidden, config.k, f"{prefix}.actor1", rng)
        self.critic0 = Dense(self.hidden_dim + config.k, config.critic_hidden,
                             f"{prefix}.critic0", rng)
        self.critic1 = Dense(config.critic_hidden, 1, f"{prefix}.critic1", rng)

    def encode_context(self, h_vis: Tensor, a0: Tensor) -> Tensor:
        return ops.relu(self.enc_ctx(ops.concat([h_vis, a0], axis=-1)))

    def step(self, ctx: Tensor, a_t: Tensor, h: Tensor, used: np.ndarray
             ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """One recurrent step: (masked log-probs, logits, value, next hidden)."""
        at = ops.relu(self.enc_at1(ops.relu(self.enc_at0(a_t))))
        h_next = self.gru(ops.concat([ctx, at], axis=-1), h)
        logits = self.actor1(ops.relu(self.actor0(h_next)))
        log_probs = ops.masked_log_softmax(logits, ~np.asarray(used, dtype=bool))
        mask_const = Tensor(np.asarray(used, dtype=np.float32))
        value = self.critic1(ops.relu(self.critic0(ops.concat([h_next, mask_const],
                                                              axis=-1))))
        return log_probs, logits, value, h_next

    def initial_hidden(self, batch: int | None = None) -> Tensor:
        return self.gru.initial_state(batch)

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for layer in (self.enc_ctx, self.enc_at0, self.enc_at1, self.gru,
                      self.actor0, self.actor1, self.critic0, self.critic1):
            params += layer.parameters()
        return params


def select(policy: PolicyNet, ctx: Tensor, a_t: Tensor, h: Tensor,
           used: np.ndarray, rng: np.random.Generator | None = None,
           sample: bool = True) -> tuple[int, float, float, Tensor]:
    """Draw (or argmax) an unused group: (action, log_prob, value, next hidden)."""
    used = np.asarray(used, dtype=bool)
    if used.all():
        raise ContractViolationError("all groups already used")
    with no_grad():
        log_probs, _, value, h_next = policy.step(ctx, a_t, h, used)
    probs = np.where(~used, np.exp(log_probs.values), 0.0)
    probs = probs / probs.sum()
    if sample:
        action = int(rng.choice(policy.k, p=probs))
    else:
        action = int(np.argmax(probs))
    return action, float(log_probs.values[action]), float(value.values[0]), h_next


class PolicySelector:
    """Selector protocol adapter; records per-step data for rollouts."""

    def __init__(self, policy: PolicyNet, sample: bool = False,
                 rng: np.random.Generator | None = None):
        self.policy = policy
        self.sample = sample
        self.rng = rng
        self.record: list[dict] = []
        self._ctx: Tensor | None = None
        self._h: Tensor | None = None
        self._h_vis: np.ndarray | None = None
        self._a0: np.ndarray | None = None

    def begin(self, h_vis: np.ndarray, a0: np.ndarray) -> None:
        with no_grad():
            self._ctx = self.policy.encode_context(Tensor(h_vis), Tensor(a0))
        self._h = self.policy.initial_hidden()
        self._h_vis = np.asarray(h_vis, dtype=np.float32).copy()
        self._a0 = np.asarray(a0, dtype=np.float32).copy()
        self.record = []

    def select(self, a_t: np.ndarray, used: np.ndarray) -> int:
        action, log_prob, value, h_next = select(
            self.policy, self._ctx, Tensor(a_t), self._h, used,
            rng=self.rng, sample=self.sample)
        self.record.append({"a_t": np.asarray(a_t, dtype=np.float32).copy(),
                            "used": np.asarray(used, dtype=bool).copy(),
                            "action": action, "log_prob": log_prob,
                            "value": value})
        self._h = h_next
        return action

    def context(self) -> tuple[np.ndarray, np.ndarray]:
        return self._h_vis, self._a0


# ------------------------------------------------------------------ rewards
def reward_rsr(term_probs, p_uni_y: float) -> float:
    """Mean correct probability of the review loss terms plus p(UNI) of y."""
    return float(np.mean(term_probs) + p_uni_y)


# ------------------------------------------------------------------ rollout
@dataclass
class EpisodeRollout:
    h_vis: np.ndarray
    a0: np.ndarray
    a_ts: np.ndarray          # (T, m) policy inputs per step
    actions: np.ndarray       # (T,)
    log_probs: np.ndarray     # (T,) behavior log-probs
    values: np.ndarray        # (T,) critic estimates at collection time
    rewards: np.ndarray       # (T,)
    used: np.ndarray          # (T, k) bool, mask before each selection
    returns: np.ndarray | None = None
    advantages: np.ndarray | None = None

    @property
    def length(self) -> int:
        return len(self.actions)


def episode_from_record(record: list[dict], rewards, h_vis, a0) -> EpisodeRollout:
    return EpisodeRollout(
        h_vis=np.asarray(h_vis, dtype=np.float32),
        a0=np.asarray(a0, dtype=np.float32),
        a_ts=np.stack([r["a_t"] for r in record]),
        actions=np.asarray([r["action"] for r in record], dtype=np.int64),
        log_probs=np.asarray([r["log_prob"] for r in record], dtype=np.float64),
        values=np.asarray([r["value"] for r in record], dtype=np.float64),
        rewards=np.asarray(rewards, dtype=np.float64),
        used=np.stack([r["used"] for r in record]),
    )


class RolloutBuffer:
    def __init__(self, gamma: float = 0.99):
        self.gamma = gamma
        self.episodes: list[EpisodeRollout] = []
        self._ready = False

    def add(self, episode: EpisodeRollout) -> None:
        if episode.length == 0:
            raise ShapeError("cannot add an empty episode")
        self.episodes.append(episode)
        self._ready = False

    @property
    def n_transitions(self) -> int:
        return sum(e.length for e in self.episodes)

    def compute_advantages(self) -> None:
        """Returns-to-go and advantages; must run before ppo_update."""
        for ep in self.episodes:
            returns = np.zeros(ep.length, dtype=np.float64)
            acc = 0.0
            for i in range(ep.length - 1, -1, -1):
                acc = ep.rewards[i] + self.gamma * acc
                returns[i] = acc
            ep.returns = returns
            ep.advantages = returns - ep.values
        self._ready = True

    def clear(self) -> None:
        self.episodes = []
        self._ready = False


def discounted_returns_bruteforce(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """O(T^2) oracle for the discounted return-to-go."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(rewards)
    for i in range(len(rewards)):
        for j in range(i, len(rewards)):
            out[i] += gamma ** (j - i) * rewards[j]
    return out


# --------------------------------------------------------------------- PPO
def ppo_update(policy: PolicyNet, buffer: RolloutBuffer,
               opt: OptimizerConfig, epochs: int = 4,
               clip_lo: float = CLIP_LO, clip_hi: float = CLIP_HI,
               value_weight: float = VALUE_LOSS_WEIGHT,
               entropy_weight: float = ENTROPY_BONUS_WEIGHT) -> dict:
    """Clipped-surrogate update over full episode sequences.

    Episodes are replayed in order from their initial hidden state (padded to
    the longest episode; padded steps carry zero weight), so the recurrent
    states seen by the new policy are exact.
    """
    if not buffer.episodes:
        raise ShapeError("ppo_update on an empty buffer")
    if not buffer._ready:
        raise ContractViolationError("compute_advantages must run before ppo_update")

    eps = buffer.episodes
    E = len(eps)
    k = policy.k
    m = eps[0].a0.shape[0]
    t_max = max(ep.length for ep in eps)

    h_vis = np.stack([ep.h_vis for ep in eps])
    a0 = np.stack([ep.a0 for ep in eps])
    a_ts = np.zeros((E, t_max, m), dtype=np.float32)
    actions = np.zeros((E, t_max), dtype=np.int64)
    old_logp = np.zeros((E, t_max), dtype=np.float32)
    adv = np.zeros((E, t_max), dtype=np.float32)
    ret = np.zeros((E, t_max), dtype=np.float32)
    used = np.zeros((E, t_max, k), dtype=bool)
    active = np.zeros((E, t_max), dtype=np.float32)
    for i, ep in enumerate(eps):
        T = ep.length
        a_ts[i, :T] = ep.a_ts
        actions[i, :T] = ep.actions
        old_logp[i, :T] = ep.log_probs
        adv[i, :T] = ep.advantages
        ret[i, :T] = ep.returns
        used[i, :T] = ep.used
        active[i, :T] = 1.0
        # padded steps keep every action valid so the masked softmax is defined
    n_trans = float(active.sum())

    stats = {"surrogate": 0.0, "value_loss": 0.0, "entropy": 0.0}
    for _ in range(epochs):
        ctx = policy.encode_context(Tensor(h_vis), Tensor(a0))
        h = policy.initial_hidden(E)
        total = None
        for t in range(t_max):
            valid_t = ~used[:, t, :]
            log_probs, _, value, h = policy.step(ctx, Tensor(a_ts[:, t]), h,
                                                 used[:, t, :])
            logp = ops.gather_cols(log_probs, actions[:, t])
            ratio = ops.texp(logp - Tensor(old_logp[:, t]))
            if not np.all(np.isfinite(ratio.values)):
                raise DivergenceError("non-finite PPO probability ratio")
            adv_t = Tensor(adv[:, t])
            surr = ops.minimum(ops.mul(ratio, adv_t),
                               ops.mul(ops.clamp(ratio, clip_lo, clip_hi), adv_t))
            v = ops.reshape(value, (E,))
            verr = v - Tensor(ret[:, t])
            vloss = ops.mul(verr, verr)
            p_logp = ops.mul(ops.mul(ops.texp(log_probs), log_probs),
                             Tensor(valid_t.astype(np.float32)))
            entropy = -1.0 * ops.sum_last(p_logp)
            obj = surr - value_weight * vloss + entropy_weight * entropy
            weighted = ops.mul(obj, Tensor(active[:, t]))
            total = tsum(weighted) if total is None else total + tsum(weighted)
            stats["surrogate"] += float((surr.values * active[:, t]).sum())
            stats["value_loss"] += float((vloss.values * active[:, t]).sum())
            stats["entropy"] += float((entropy.values * active[:, t]).sum())
        loss = -1.0 / n_trans * total
        loss.backward()
        sgd_step(policy.parameters(), opt)
    for key in stats:
        stats[key] /= epochs * n_trans
    return stats
