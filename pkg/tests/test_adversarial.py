"""Discriminator behavior, adversarial losses, and reward identities."""

import math

import numpy as np
import pytest

from spiralzsl.adversarial import (Discriminator, adversarial_value,
                                   discriminate, loss_arsr,
                                   rewards_adversarial)
from spiralzsl.optim import OptimizerConfig, sgd_step, zero_grads
from spiralzsl.tensor import Tensor


def make_disc(seed=0, m=4, hidden=16):
    return Discriminator(m, np.random.default_rng(seed), hidden=hidden)


def test_zero_weight_discriminator_outputs_half():
    disc = make_disc()
    for p in disc.parameters():
        p.tensor.values[...] = 0.0
    rng = np.random.default_rng(1)
    for _ in range(5):
        s = discriminate(disc, Tensor(rng.normal(size=4).astype(np.float32)))
        np.testing.assert_allclose(s.values, [0.5])


def test_score_always_in_unit_interval():
    disc = make_disc(seed=2)
    rng = np.random.default_rng(3)
    for _ in range(20):
        s = discriminate(disc, Tensor(10 * rng.normal(size=4).astype(np.float32)))
        assert 0.0 <= s.item() <= 1.0


def test_training_separates_real_from_fake():
    rng = np.random.default_rng(4)
    disc = make_disc(seed=5)
    opt = OptimizerConfig(learning_rate=0.05, momentum=0.9, weight_decay=0.0)
    real = rng.normal(loc=2.0, size=(64, 4)).astype(np.float32)
    fake = rng.normal(loc=-2.0, size=(64, 4)).astype(np.float32)
    for _ in range(60):
        _, d_loss = loss_arsr(disc, [Tensor(fake)], [Tensor(real)], alpha=0.9)
        d_loss.backward()
        sgd_step(disc.parameters(), opt)
    s_real = discriminate(disc, Tensor(real)).values.mean()
    s_fake = discriminate(disc, Tensor(fake)).values.mean()
    assert s_real > s_fake


def test_equilibrium_value_per_step():
    disc = make_disc(seed=6)
    for p in disc.parameters():
        p.tensor.values[...] = 0.0  # d == 0.5 everywhere
    rng = np.random.default_rng(7)
    fake = [Tensor(rng.normal(size=4).astype(np.float32))]
    real = [Tensor(rng.normal(size=4).astype(np.float32))]
    val = adversarial_value(disc, fake, real, alpha=0.9)
    assert abs(val.item() - 2 * math.log(0.5)) < 1e-6


def test_geometric_weighting_two_identical_steps():
    disc = make_disc(seed=8)
    rng = np.random.default_rng(9)
    fake = Tensor(rng.normal(size=4).astype(np.float32))
    real = Tensor(rng.normal(size=4).astype(np.float32))
    one = adversarial_value(disc, [fake], [real], alpha=0.9).item()
    two = adversarial_value(disc, [fake, fake], [real, real], alpha=0.9).item()
    assert abs(two - one * 1.9) < 1e-5


def test_hand_step_value_with_forced_scores():
    # force d(x) = sigmoid(x): relu(x) - relu(-x) passes the logit through
    disc = make_disc(seed=10, m=1, hidden=2)
    disc.fc0.w.tensor.values[...] = np.array([[1.0], [-1.0]], dtype=np.float32)
    disc.fc0.b.tensor.values[...] = 0.0
    disc.fc1.w.tensor.values[...] = np.array([[1.0, -1.0]], dtype=np.float32)
    disc.fc1.b.tensor.values[...] = 0.0

    def logit(p):
        return math.log(p / (1 - p))
    real = Tensor(np.array([logit(0.8)], dtype=np.float32))
    fake = Tensor(np.array([logit(0.3)], dtype=np.float32))
    val = adversarial_value(disc, [fake], [real], alpha=0.9).item()
    assert abs(val - (math.log(0.8) + math.log(0.7))) < 1e-5


def test_losses_finite_for_extreme_scores():
    disc = make_disc(seed=11)
    disc.fc1.b.tensor.values[...] = 100.0  # saturates the sigmoid at 1
    fake = [Tensor(np.ones((3, 4), dtype=np.float32))]
    real = [Tensor(np.ones((3, 4), dtype=np.float32))]
    gen, d_loss = loss_arsr(disc, fake, real, alpha=0.9)
    assert math.isfinite(gen.item()) and math.isfinite(d_loss.item())


def test_discriminator_loss_detaches_generator_graph():
    disc = make_disc(seed=12)
    fake = Tensor(np.ones(4, dtype=np.float32), requires_grad=True)
    real = Tensor(np.zeros(4, dtype=np.float32) + 0.5)
    _, d_loss = loss_arsr(disc, [fake], [real], alpha=0.9)
    d_loss.backward()
    assert fake.grad is None  # discriminator phase never reaches the generator
    zero_grads(disc.parameters())
    gen, _ = loss_arsr(disc, [fake], [real], alpha=0.9)
    gen.backward()
    assert fake.grad is not None  # generator phase does


def test_reward_identities():
    r_dis, r_arsr = rewards_adversarial(r_rsr=2.5, dis_score=1.0)
    assert r_dis == pytest.approx(0.0)
    assert r_arsr == pytest.approx(3.5)
    r_dis0, _ = rewards_adversarial(0.0, 0.0)
    assert r_dis0 == pytest.approx(1.0)
    rng = np.random.default_rng(13)
    for _ in range(20):
        s = float(rng.random())
        r = float(rng.random() * 3)
        r_dis, r_arsr = rewards_adversarial(r, s)
        assert r_dis + s == pytest.approx(1.0)  # algebraic complement
        assert 0.0 <= r_dis <= 1.0
        assert r <= r_arsr <= r + 1.0
