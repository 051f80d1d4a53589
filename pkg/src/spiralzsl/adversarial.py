"""Adversarial extension: attribute discriminator, losses, split rewards.

The discriminator scores revised predictions against ground-truth class
attributes. Generator phases push the spiral modules to fool it (plus their
auxiliary classification losses); discriminator phases train it on detached
predictions. Logs are epsilon-clamped so both losses stay finite.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .layers import Dense
from .optim import Parameter
from .tensor import Tensor, tmean

LOG_EPS = 1e-7


class Discriminator:
    """Two dense layers with a sigmoid head mapping attributes to [0, 1]."""

    def __init__(self, m: int, rng: np.random.Generator, hidden: int = 256,
                 prefix: str = "adv"):
        self.fc0 = Dense(m, hidden, f"{prefix}.fc0", rng)
        self.fc1 = Dense(hidden, 1, f"{prefix}.fc1", rng)

    def __call__(self, a: Tensor) -> Tensor:
        """Realness score per input row, in (0, 1)."""
        return ops.sigmoid(self.fc1(ops.relu(self.fc0(a))))

    def parameters(self) -> list[Parameter]:
        return self.fc0.parameters() + self.fc1.parameters()


def discriminate(disc: Discriminator, a: Tensor) -> Tensor:
    return disc(a)


def _safe_log(x: Tensor) -> Tensor:
    return ops.tlog(ops.clamp(x, LOG_EPS, 1.0 - LOG_EPS))


def adversarial_value(disc: Discriminator, fake_steps: list[Tensor],
                      real_steps: list[Tensor], alpha: float) -> Tensor:
    """sum_t alpha^(t-1) [log d(real_t) + log(1 - d(fake_t))], batch-meaned."""
    total = None
    one = None
    for t, (fake, real) in enumerate(zip(fake_steps, real_steps), start=1):
        d_real = disc(real)
        d_fake = disc(fake)
        if one is None:
            one = Tensor(np.ones_like(d_fake.values))
        term = tmean(_safe_log(d_real)) + tmean(_safe_log(one - d_fake))
        term = alpha ** (t - 1) * term
        total = term if total is None else total + term
    return total


def loss_arsr(disc: Discriminator, fake_steps: list[Tensor],
              real_steps: list[Tensor], alpha: float,
              l_rsr: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """(generator_loss, discriminator_loss) for one trajectory batch.

    The generator minimizes the adversarial value plus its auxiliary
    classification loss; the discriminator maximizes the value over detached
    predictions, so each side's gradient only reaches its own phase.
    """
    gen = adversarial_value(disc, fake_steps, real_steps, alpha)
    if l_rsr is not None:
        gen = gen + l_rsr
    detached = [f.detach() for f in fake_steps]
    disc_loss = -1.0 * adversarial_value(disc, detached, real_steps, alpha)
    return gen, disc_loss


def rewards_adversarial(r_rsr: float, dis_score: float) -> tuple[float, float]:
    """R_DIS = 1 - score (assists the discriminator); the adversarial reward
    adds the score back onto the base selection reward."""
    return 1.0 - dis_score, r_rsr + dis_score
