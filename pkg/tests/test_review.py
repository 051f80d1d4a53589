"""Revisit/revise arithmetic, review losses, confidence, and episode contracts."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spiralzsl import ops
from spiralzsl.errors import ContractViolationError, DegenerateVectorError
from spiralzsl.review import (RandomSelector, ReviewConfig, ReviewTrajectory,
                              RevisionModel, ScriptedSelector, beta_weight,
                              class_probabilities, confidence, loss_jnt,
                              loss_loc, loss_oa, loss_rev, review_episode,
                              revise, revisit, union_probability,
                              verify_revision_identity)
from spiralzsl.tensor import Tensor


def t(x):
    return Tensor(np.asarray(x, dtype=np.float32))


def unit_phi(phi):
    phi = np.asarray(phi, dtype=np.float32)
    return phi / np.linalg.norm(phi, axis=-1, keepdims=True)


@pytest.fixture
def tiny_revision():
    rng = np.random.default_rng(0)
    return RevisionModel(feat_dim=6, m=4, rng=rng, vis_dim=3)


# ------------------------------------------------------------------ revisit
def test_revisit_zero_group_row_gives_zero(tiny_revision):
    rng = np.random.default_rng(1)
    a_r = revisit(t(rng.normal(size=4)), t(rng.normal(size=6)), t(np.zeros(4)),
                  tiny_revision)
    np.testing.assert_array_equal(a_r.values, np.zeros(4))


def test_revisit_support_subset_of_group_row(tiny_revision):
    rng = np.random.default_rng(2)
    for _ in range(20):
        g_row = (rng.random(4) < 0.5).astype(np.float32) * rng.random(4).astype(np.float32)
        a_r = revisit(t(rng.normal(size=4)), t(rng.normal(size=6)), t(g_row),
                      tiny_revision)
        assert np.all(a_r.values[g_row == 0.0] == 0.0)


def test_revisit_hand_arithmetic_identity_weights():
    # dense maps the masked a0 straight through: a_r = ((g*a0) + 0) * g
    rng = np.random.default_rng(3)
    model = RevisionModel(feat_dim=3, m=2, rng=rng, vis_dim=2)
    model.fc[0].w.tensor.values[...] = 0.0
    model.fc[0].w.tensor.values[:, :2] = np.eye(2)  # identity on the masked-a0 part
    model.fc[0].b.tensor.values[...] = 0.0
    a0 = t([0.5, -2.0])
    g_row = t([2.0, 0.0])
    a_r = revisit(a0, t(np.ones(3)), g_row, model)
    np.testing.assert_allclose(a_r.values, [2.0 * 0.5 * 2.0, 0.0])


# ------------------------------------------------------------------- revise
def test_revise_parallel_vectors_beta_one():
    a = t([3.0, 4.0])
    out = revise(a, a, t=0)
    np.testing.assert_allclose(out.values, 2 * np.array([0.6, 0.8]), rtol=1e-6)


def test_revise_hand_value_t1():
    out = revise(t([3.0, 4.0]), t([0.0, 1.0]), t=1)
    np.testing.assert_allclose(out.values, [0.6, 1.3], rtol=1e-6)


def test_revise_norm_bound():
    rng = np.random.default_rng(4)
    for step in range(4):
        a_t = t(rng.normal(size=5))
        a_r = t(rng.normal(size=5))
        out = revise(a_t, a_r, step)
        assert np.linalg.norm(out.values) <= 1 + beta_weight(step) + 1e-5


def test_revise_zero_norm_degenerate():
    with pytest.raises(DegenerateVectorError):
        revise(t([0.0, 0.0]), t([1.0, 0.0]), 0)


@settings(deadline=None, max_examples=30)
@given(st.floats(0.01, 50.0), st.floats(0.01, 50.0), st.integers(0, 4))
def test_revise_scale_invariance(c, d, step):
    a_t = np.array([1.0, -2.0, 0.5], dtype=np.float32)
    a_r = np.array([0.3, 0.9, -1.1], dtype=np.float32)
    base = revise(t(a_t), t(a_r), step).values
    scaled = revise(t(c * a_t), t(d * a_r), step).values
    np.testing.assert_allclose(base, scaled, atol=1e-5)


# -------------------------------------------------------- revision identity
def test_revision_identity_hand_case():
    res = verify_revision_identity([3.0, 4.0], [0.0, 1.0], 1, [0.0, 1.0])
    assert res < 1e-5
    # both sides evaluate to 1.3 / sqrt(2.05)
    a_next = np.array([0.6, 1.3])
    lhs = a_next[1] / np.linalg.norm(a_next)
    assert abs(lhs - 0.90787) < 1e-4


def test_revision_identity_collinear():
    a = np.array([2.0, 0.0])
    res = verify_revision_identity(a, 3 * a, 2, [1.0, 0.0])
    assert res < 1e-7
    # both sides equal (1 + beta)/||a_next|| = 1 for collinear vectors
    beta = beta_weight(2)
    a_next = a / 2 + beta * a / 2
    assert abs((1 + beta) / np.linalg.norm(a_next) - 1.0) < 1e-7


def test_revision_identity_thousand_random_triples():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        dim = int(rng.integers(2, 16))
        a_t = rng.normal(size=dim).astype(np.float32)
        a_r = rng.normal(size=dim).astype(np.float32)
        phi = unit_phi(rng.normal(size=dim))
        step = int(rng.integers(0, 5))
        worst = max(worst, verify_revision_identity(a_t, a_r, step, phi))
    assert worst < 1e-5


# ------------------------------------------------------------------- losses
def test_loss_loc_zero_revision_uniform():
    phi = t(np.random.default_rng(6).normal(size=(5, 3)))
    val = loss_loc(t([0.0, 0.0, 0.0]), 2, phi).item()
    assert abs(val - math.log(5)) < 1e-6


def test_loss_loc_single_class_zero():
    phi = t([[1.0, 2.0]])
    assert abs(loss_loc(t([0.3, 0.4]), 0, phi).item()) < 1e-7


def test_loss_loc_matches_cross_entropy_kernel():
    a_r = t([1.0, 0.0])
    phi = t([[math.log(2.0), 0.0], [0.0, 1.0]])
    expected = ops.cross_entropy(t([math.log(2.0), 0.0]), 0).item()
    assert abs(loss_loc(a_r, 0, phi).item() - expected) < 1e-6


def test_loss_oa_scale_monotone():
    phi = t(np.eye(3, dtype=np.float32))
    small = loss_oa(t([1.0, 0.0, 0.0]), 0, phi).item()
    big = loss_oa(t([3.0, 0.0, 0.0]), 0, phi).item()
    assert big < small


def test_loss_jnt_m1_reduces_to_loss_sum():
    # with one criterion the joint loss equals CE(a0) + CE(a1)
    phi = t([[0.7], [-0.4], [1.2]])
    a0, a1 = t([0.9]), t([-0.3])
    joint = loss_jnt(a0, a1, 1, phi).item()
    sum_ce = (ops.cross_entropy(ops.linear(a0, phi), 1).item()
              + ops.cross_entropy(ops.linear(a1, phi), 1).item())
    assert abs(joint - sum_ce) < 1e-5


def test_loss_jnt_single_class_direct_substitution():
    # picked so a . phi(y) = 0: the partition sums are exp(0) = 1 and the
    # value reduces to -log sum_i exp(2 a_i phi_i)
    a = t([1.0, -1.0])
    phi = t([[1.0, 1.0]])
    val = loss_jnt(a, a, 0, phi).item()
    expected = -math.log(math.exp(2.0) + math.exp(-2.0))
    assert abs(val - expected) < 1e-5


def test_loss_jnt_finite_for_extreme_inputs():
    phi = t(np.random.default_rng(7).normal(size=(4, 3)) * 30)
    val = loss_jnt(t([50.0, -50.0, 30.0]), t([-40.0, 45.0, -25.0]), 1, phi).item()
    assert math.isfinite(val)


def test_loss_rev_single_step_plain_sum():
    rng = np.random.default_rng(8)
    phi = t(rng.normal(size=(3, 4)))
    a0 = rng.normal(size=4).astype(np.float32)
    a_r = rng.normal(size=4).astype(np.float32)
    a1 = rng.normal(size=4).astype(np.float32)
    from spiralzsl.review import ReviewStep
    traj = ReviewTrajectory(a0=a0, steps=[
        ReviewStep(group_index=0, revision=a_r, revised=a1, eta=0.5, halted=True)],
        max_steps=2)
    got = loss_rev(traj, 1, alpha=0.37, phi_seen=phi)
    expected = (loss_loc(t(a_r), 1, phi).item() + loss_oa(t(a1), 1, phi).item()
                + loss_jnt(t(a0), t(a1), 1, phi).item())
    assert abs(got - expected) < 1e-5


def test_loss_rev_geometric_weighting_and_oracle():
    rng = np.random.default_rng(9)
    phi = t(rng.normal(size=(3, 4)))
    a0 = rng.normal(size=4).astype(np.float32)
    from spiralzsl.review import ReviewStep
    steps = []
    expected = 0.0
    for step_i in range(2):
        a_r = rng.normal(size=4).astype(np.float32)
        a1 = rng.normal(size=4).astype(np.float32)
        steps.append(ReviewStep(group_index=step_i, revision=a_r, revised=a1,
                                eta=0.1, halted=step_i == 1))
        term = (loss_loc(t(a_r), 2, phi).item() + loss_oa(t(a1), 2, phi).item()
                + loss_jnt(t(a0), t(a1), 2, phi).item())
        expected += 0.9 ** step_i * term
    traj = ReviewTrajectory(a0=a0, steps=steps, max_steps=2)
    assert abs(loss_rev(traj, 2, 0.9, phi) - expected) < 1e-5


# --------------------------------------------------------------- confidence
def test_confidence_no_revisions():
    p0 = np.array([0.2, 0.7, 0.1])
    assert confidence(p0, []) == pytest.approx(0.7)


def test_confidence_peaked_same_class_is_three_halves():
    p0 = np.array([1.0, 0.0])
    p_r = np.array([1.0, 0.0])
    assert confidence(p0, [p_r]) == pytest.approx(1.5)


def test_union_probability_monotone_in_revisions():
    rng = np.random.default_rng(10)
    p0 = rng.dirichlet(np.ones(4))
    revs = [rng.dirichlet(np.ones(4)) for _ in range(3)]
    prev = union_probability(p0, [])
    for i in range(1, 4):
        cur = union_probability(p0, revs[:i])
        assert np.all(cur >= prev - 1e-12)
        prev = cur


# ----------------------------------------------------------------- episodes
def _episode_fixture(seed=0, k=4, m=8, d=6, n_classes=5):
    rng = np.random.default_rng(seed)
    revision = RevisionModel(feat_dim=d, m=m, rng=rng, vis_dim=4)
    phi = rng.normal(size=(n_classes, m)).astype(np.float32)
    phi_unit = unit_phi(phi)
    h = Tensor(rng.normal(size=d).astype(np.float32))
    a0 = Tensor(rng.normal(size=m).astype(np.float32))
    g_flat = Tensor(np.abs(rng.normal(size=k * m)).astype(np.float32))
    return rng, revision, Tensor(phi), Tensor(phi_unit), h, a0, g_flat


def test_episode_eta_threshold_zero_single_step():
    rng, revision, phi, phi_unit, h, a0, g_flat = _episode_fixture()
    cfg = ReviewConfig(k=4, eta_threshold=0.0, alpha=0.9)
    traj = review_episode(h, a0, g_flat, revision, RandomSelector(rng), cfg,
                          phi_unit, phi)
    assert len(traj.steps) == 1 and traj.steps[0].halted


def test_episode_exhaustive_without_early_stop():
    rng, revision, phi, phi_unit, h, a0, g_flat = _episode_fixture(seed=1)
    cfg = ReviewConfig(k=4, eta_threshold=0.4, alpha=0.9)
    traj = review_episode(h, a0, g_flat, revision, RandomSelector(rng), cfg,
                          phi_unit, phi, early_stop=False)
    assert len(traj.steps) == 4
    assert sorted(traj.group_indices()) == [0, 1, 2, 3]


def test_episode_selector_reuse_is_contract_violation():
    rng, revision, phi, phi_unit, h, a0, g_flat = _episode_fixture(seed=2)
    cfg = ReviewConfig(k=4, eta_threshold=1.0, alpha=0.9)
    with pytest.raises(ContractViolationError):
        review_episode(h, a0, g_flat, revision, ScriptedSelector([1, 1, 2, 3]),
                       cfg, phi_unit, phi, early_stop=False)


def test_episode_invariants_over_many_runs():
    cfg = ReviewConfig(k=4, eta_threshold=0.4, alpha=0.9)
    rng = np.random.default_rng(11)
    for trial in range(200):
        _, revision, phi, phi_unit, h, a0, g_flat = _episode_fixture(seed=100 + trial)
        traj = review_episode(h, a0, g_flat, revision, RandomSelector(rng), cfg,
                              phi_unit, phi)
        idxs = traj.group_indices()
        assert len(idxs) == len(set(idxs))  # no repeats
        g = g_flat.values.reshape(4, -1)
        for step in traj.steps:
            assert np.all(step.revision[g[step.group_index] == 0.0] == 0.0)
        for step in traj.steps[:-1]:
            assert not step.halted and step.eta <= cfg.eta_threshold
        last = traj.steps[-1]
        assert last.halted
        assert last.eta > cfg.eta_threshold or len(idxs) == cfg.k


def test_scripted_two_step_trajectory_matches_composed_oracle():
    rng, revision, phi, phi_unit, h, a0, g_flat = _episode_fixture(seed=3)
    cfg = ReviewConfig(k=4, eta_threshold=1.0, alpha=0.9)
    traj = review_episode(h, a0, g_flat, revision, ScriptedSelector([2, 0, 1, 3]),
                          cfg, phi_unit, phi, early_stop=False, target_idx=1,
                          phi_loss=phi)
    # oracle: replay the published formulas step by step in plain numpy
    m = 8
    g = g_flat.values.reshape(4, m)
    a_cur = a0.values
    for step_t, (step, choice) in enumerate(zip(traj.steps[:2], [2, 0])):
        assert step.group_index == choice
        a_r = revisit(a0, h, Tensor(g[choice]), revision).values
        np.testing.assert_allclose(step.revision, a_r, atol=1e-6)
        expected = (a_cur / np.linalg.norm(a_cur)
                    + (1.0 / (step_t + 1)) * a_r / np.linalg.norm(a_r))
        np.testing.assert_allclose(step.revised, expected, atol=1e-5)
        a_cur = step.revised
        assert step.term_probs is not None and step.p_uni_y is not None
        assert all(0.0 <= p <= 1.0 for p in step.term_probs)


def test_class_probabilities_modes_differ():
    rng = np.random.default_rng(12)
    phi = rng.normal(size=(4, 6)).astype(np.float32)
    a = Tensor(3.0 * rng.normal(size=6).astype(np.float32))
    p_cos = class_probabilities(a, Tensor(unit_phi(phi)), Tensor(phi), "cosine").values
    p_dot = class_probabilities(a, Tensor(unit_phi(phi)), Tensor(phi), "dot").values
    assert abs(p_cos.sum() - 1) < 1e-5 and abs(p_dot.sum() - 1) < 1e-5
    assert not np.allclose(p_cos, p_dot)
