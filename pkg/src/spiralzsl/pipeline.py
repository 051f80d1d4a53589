"""Two-stage training, inference with calibrated stacking, evaluation, traces.

Stage 1 trains the preview classifier, freezes it, then trains grouping and
revision (plus the discriminator in adversarial mode) under random group
selection with full-length episodes. Stage 2 freezes everything except the
selection policy and optimizes it with PPO over early-stopping episodes.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .adversarial import Discriminator, loss_arsr, rewards_adversarial
from .checkpoint import apply_params, dump_params, parse_params
from .data import (AttributeMatrix, FeatureSet, Split, SynthConfig,
                   load_dataset, planted_group_masks, synth_dataset)
from .errors import (ConfigError, ContractViolationError,
                     DegenerateVectorError, DivergenceError)
from .grouping import AttributeGroups, GroupingConfig, GroupingModel
from .optim import OptimizerConfig, Parameter, sgd_step, zero_grads
from .policy import (PolicyConfig, PolicyNet, PolicySelector, RolloutBuffer,
                     episode_from_record, ppo_update, reward_rsr)
from .preview import PreviewConfig, PreviewModel, loss_pre, seen_target_indices
from .review import (RandomSelector, ReviewConfig, ReviewTrajectory,
                     RevisionModel, loss_jnt, loss_loc, loss_oa,
                     review_episode, revise)
from .tensor import Tensor, no_grad, tmean

logger = logging.getLogger("spiralzsl")


def log_kv(phase: str, **kv) -> None:
    parts = [f"phase={phase}"] + [f"{k}={v}" for k, v in kv.items()]
    logger.info(" ".join(parts))


# ------------------------------------------------------------------- config
_MODE_CHOICES = {"rsr", "arsr"}
_SELECTION_CHOICES = {"reinforced", "random"}
_SCORE_CHOICES = {"dot", "cosine"}
_SIGN_CHOICES = {"penalize_unseen", "favor_unseen"}
_GROUPING_CHOICES = {"learned", "oracle"}
_JNT_CHOICES = {"product", "cosine"}
_REWARD_CHOICES = {"per_step", "episode_mean"}


@dataclass(frozen=True)
class RunConfig:
    # data: file paths, or the synthetic generator when absent
    features: str | None = None
    attributes: str | None = None
    split: str | None = None
    synth_n_seen_classes: int = 20
    synth_n_unseen_classes: int = 5
    synth_m: int = 16
    synth_instances_per_class: int = 25
    synth_planted_group_count: int = 4
    synth_noise_scale: float = 0.1
    synth_feature_dim: int = 64
    synth_pair_contrast: float = 0.12
    synth_informative_block: int | None = None
    # review / selection hyper-parameters
    k: int = 5
    eta_threshold: float = 0.4
    alpha: float = 0.9
    gamma: float = 0.99
    # module shapes
    embed_dim: int | None = None
    fc_hidden: int | None = None
    preview_pool: bool = True
    classifier_bias: bool = True
    dropout_keep: float = 0.5
    # output dropout on a 4-entry group support is destructive at m=16, so
    # the revision stack defaults to no dropout at desk scale
    revision_dropout_keep: float = 1.0
    group_vis_dim: int = 32
    group_hidden: int = 48
    revision_vis_dim: int = 32
    revision_hidden: int | None = None
    policy_enc_vis: int = 48
    policy_enc_at_hidden: int = 32
    policy_enc_at: int = 32
    policy_actor_hidden: int = 48
    policy_critic_hidden: int = 48
    disc_hidden: int = 256
    # optimization
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 64
    preview_epochs: int = 15
    review_epochs: int = 15
    adversarial_epochs: int = 10
    ppo_updates: int = 40
    ppo_transitions: int = 512
    ppo_epochs: int = 4
    # inference and evaluation
    calibration_epsilon: float = 0.0
    calibration_sign: str = "penalize_unseen"
    predict_score: str = "dot"
    prob_mode: str = "cosine"
    jnt_term: str = "product"
    reward_scheme: str = "per_step"
    seen_holdout_fraction: float = 0.2
    # mode flags
    mode: str = "rsr"
    selection: str = "reinforced"
    early_stop: bool = True
    stage2_early_stop: bool = True
    grouping_mode: str = "learned"
    arsr_warm_start: bool = True
    # run
    seed: int = 272
    out_dir: str = "runs"

    def __post_init__(self):
        checks = [
            ("mode", _MODE_CHOICES), ("selection", _SELECTION_CHOICES),
            ("predict_score", _SCORE_CHOICES), ("prob_mode", _SCORE_CHOICES),
            ("calibration_sign", _SIGN_CHOICES),
            ("grouping_mode", _GROUPING_CHOICES), ("jnt_term", _JNT_CHOICES),
            ("reward_scheme", _REWARD_CHOICES),
        ]
        for key, choices in checks:
            if getattr(self, key) not in choices:
                raise ConfigError(f"{key} must be one of {sorted(choices)}")
        for key in ("k", "batch_size", "ppo_transitions", "ppo_epochs"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        for key in ("preview_epochs", "review_epochs", "adversarial_epochs",
                    "ppo_updates"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must be in (0, 1)")
        if not 0 <= self.eta_threshold <= 1:
            raise ConfigError("eta_threshold must be in [0, 1]")
        if not 0 <= self.seen_holdout_fraction < 1:
            raise ConfigError("seen_holdout_fraction must be in [0, 1)")
        if self.grouping_mode == "oracle" and self.features is not None:
            raise ConfigError("oracle grouping needs the synthetic generator")

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_seen_classes=self.synth_n_seen_classes,
            n_unseen_classes=self.synth_n_unseen_classes,
            m=self.synth_m,
            instances_per_class=self.synth_instances_per_class,
            planted_group_count=self.synth_planted_group_count,
            noise_scale=self.synth_noise_scale,
            seed=self.seed,
            feature_dim=self.synth_feature_dim,
            pair_contrast=self.synth_pair_contrast,
            informative_block=self.synth_informative_block,
        )

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(obj)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


# --------------------------------------------------------------------- data
@dataclass
class RunData:
    features: FeatureSet
    attrs: AttributeMatrix
    split: Split
    train_idx: np.ndarray
    seen_test_idx: np.ndarray
    unseen_idx: np.ndarray

    def __post_init__(self):
        self.flat = self.features.flat()
        self.seen_ids = list(self.split.seen)
        self.unseen_ids = list(self.split.unseen)
        self.phi_seen = self.attrs.submatrix(self.seen_ids)
        self.all_ids = self.seen_ids + self.unseen_ids
        self.phi_all = self.attrs.submatrix(self.all_ids)

    @property
    def feat_dim(self) -> int:
        return self.flat.shape[1]

    @property
    def m(self) -> int:
        return self.attrs.m


def prepare_data(config: RunConfig) -> RunData:
    if config.features is not None:
        if config.attributes is None or config.split is None:
            raise ConfigError("features, attributes and split must be given together")
        fs, attrs, split = load_dataset(config.features, config.attributes,
                                        config.split)
    else:
        fs, attrs, split = synth_dataset(config.synth_config())

    seen = set(split.seen)
    train_parts, test_parts = [], []
    for cid in split.seen:
        idx = np.nonzero(fs.labels == cid)[0]
        n_hold = int(np.ceil(config.seen_holdout_fraction * len(idx))) if len(idx) > 1 else 0
        if n_hold:
            train_parts.append(idx[:-n_hold])
            test_parts.append(idx[-n_hold:])
        else:
            train_parts.append(idx)
    train_idx = np.concatenate(train_parts) if train_parts else np.zeros(0, np.int64)
    seen_test_idx = np.concatenate(test_parts) if test_parts else np.zeros(0, np.int64)
    unseen_idx = np.nonzero(~np.isin(fs.labels, list(seen)))[0]
    return RunData(features=fs, attrs=attrs, split=split, train_idx=train_idx,
                   seen_test_idx=seen_test_idx, unseen_idx=unseen_idx)


# ------------------------------------------------------------------- models
@dataclass
class Models:
    preview: PreviewModel
    grouping: GroupingModel
    revision: RevisionModel
    policy: PolicyNet
    discriminator: Discriminator
    oracle_groups: np.ndarray | None = None  # (k, m) planted masks, if used

    def all_parameters(self) -> list[Parameter]:
        return (self.preview.parameters() + self.grouping.parameters()
                + self.revision.parameters() + self.policy.parameters()
                + self.discriminator.parameters())

    def spiral_parameters(self, grouping_mode: str) -> list[Parameter]:
        """Parameters trained in stage-1 phase B (grouping + revision)."""
        params = self.revision.parameters()
        if grouping_mode == "learned":
            params = self.grouping.parameters() + params
        return params


def build_models(config: RunConfig, feature_shape: tuple[int, int, int], m: int,
                 rng: np.random.Generator) -> Models:
    preview = PreviewModel(feature_shape, m, PreviewConfig(
        embed_dim=config.embed_dim, fc_hidden=config.fc_hidden,
        bias=config.classifier_bias, dropout_keep=config.dropout_keep,
        pool=config.preview_pool), rng)
    grouping = GroupingModel(preview.out_dim, m, GroupingConfig(
        k=config.k, vis_dim=config.group_vis_dim, hidden=config.group_hidden), rng)
    revision = RevisionModel(preview.out_dim, m, rng,
                             vis_dim=config.revision_vis_dim,
                             hidden=config.revision_hidden,
                             bias=config.classifier_bias,
                             dropout_keep=config.revision_dropout_keep)
    policy = PolicyNet(preview.out_dim, m, PolicyConfig(
        k=config.k, enc_vis_dim=config.policy_enc_vis,
        enc_at_hidden=config.policy_enc_at_hidden,
        enc_at_dim=config.policy_enc_at,
        actor_hidden=config.policy_actor_hidden,
        critic_hidden=config.policy_critic_hidden), rng)
    disc = Discriminator(m, rng, hidden=config.disc_hidden)
    oracle = None
    if config.grouping_mode == "oracle":
        masks = planted_group_masks(config.synth_config())
        if masks.shape[0] != config.k:
            raise ConfigError("oracle grouping requires k == planted_group_count")
        oracle = masks
    return Models(preview=preview, grouping=grouping, revision=revision,
                  policy=policy, discriminator=disc, oracle_groups=oracle)


def save_checkpoint(models: Models, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_params(models.all_parameters()))


def load_checkpoint(models: Models, path) -> None:
    with open(path, "rb") as fh:
        apply_params(models.all_parameters(), parse_params(fh.read()))


# ------------------------------------------------------------------ helpers
def unit_matrix(phi: np.ndarray) -> np.ndarray:
    return phi / np.linalg.norm(phi, axis=1, keepdims=True)


def group_flat(models: Models, h: Tensor, a0: Tensor, batch: int | None = None) -> Tensor:
    """Flat (k*m) group weights: learned network or planted oracle masks."""
    if models.oracle_groups is None:
        return models.grouping(h, a0)
    flat = models.oracle_groups.reshape(-1)
    if batch is None and h.ndim == 1:
        return Tensor(flat)
    n = h.shape[0]
    return Tensor(np.tile(flat, (n, 1)))


def _check_finite(value: float, what: str) -> None:
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite {what}")


class _DivergenceGuard:
    """Keeps the last healthy parameter snapshot; restores it on divergence."""

    def __init__(self, models: Models):
        self.models = models
        self.snapshot = dump_params(models.all_parameters())

    def commit(self) -> None:
        self.snapshot = dump_params(self.models.all_parameters())

    def restore(self) -> None:
        apply_params(self.models.all_parameters(), parse_params(self.snapshot))


# ------------------------------------------------------------- stage 1
def _preview_phase(config: RunConfig, data: RunData, models: Models,
                   rng: np.random.Generator, opt: OptimizerConfig) -> None:
    phi_seen_t = Tensor(data.phi_seen)
    targets = seen_target_indices(data.features.labels[data.train_idx],
                                  data.seen_ids)
    guard = _DivergenceGuard(models)
    params = models.preview.parameters()
    for epoch in range(config.preview_epochs):
        order = rng.permutation(len(data.train_idx))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            sel = order[start:start + config.batch_size]
            x = Tensor(data.flat[data.train_idx[sel]])
            h = models.preview.extract(x)
            a0 = models.preview.predict(h, training=True, rng=rng)
            loss = tmean(loss_pre(a0, targets[sel], phi_seen_t))
            value = loss.item()
            try:
                _check_finite(value, "preview loss")
                loss.backward()
                sgd_step(params, opt)
            except DivergenceError:
                guard.restore()
                raise
            total += value * len(sel)
            count += len(sel)
        guard.commit()
        log_kv("preview", epoch=epoch, loss=f"{total / count:.4f}")


def _review_step_losses(config: RunConfig, a0: Tensor, a_t: Tensor, a_r: Tensor,
                        a_next: Tensor, targets, phi_seen_t: Tensor) -> Tensor:
    """(B,) combined L_LOC + L_OA + L_JNT for one review step."""
    terms = loss_loc(a_r, targets, phi_seen_t) + loss_oa(a_next, targets, phi_seen_t)
    if config.jnt_term == "product":
        terms = terms + loss_jnt(a0, a_next, targets, phi_seen_t)
    else:
        a0u = ops.unit_rows(a0)
        a1u = ops.unit_rows(a_next)
        phi_unit_t = Tensor(unit_matrix(phi_seen_t.values))
        terms = terms + loss_jnt(a0u, a1u, targets, phi_unit_t)
    return terms


def _batched_review_forward(config: RunConfig, models: Models, x: np.ndarray,
                            targets: np.ndarray, phi_seen_t: Tensor,
                            rng: np.random.Generator,
                            train_revision: bool = True
                            ) -> tuple[Tensor, list[Tensor]]:
    """Full-length random-selection review pass; returns (L_REV mean, a^t list)."""
    B = x.shape[0]
    k, m = config.k, phi_seen_t.shape[1]
    with no_grad():
        h_const = models.preview.extract(Tensor(x))
        a0_const = models.preview.predict(h_const)
    h = Tensor(h_const.values)
    a0 = Tensor(a0_const.values)
    g_flat = group_flat(models, h, a0, batch=B)
    perms = np.stack([rng.permutation(k) for _ in range(B)])
    a_t = a0
    total = None
    revised_steps: list[Tensor] = []
    for t in range(k):
        g_row = ops.take_block(g_flat, perms[:, t], m)
        a_r = models.revision(a0, h, g_row, training=train_revision, rng=rng)
        a_next = revise(a_t, a_r, t)
        terms = _review_step_losses(config, a0, a_t, a_r, a_next, targets, phi_seen_t)
        step_loss = (config.alpha ** t) * tmean(terms)
        total = step_loss if total is None else total + step_loss
        revised_steps.append(a_next)
        a_t = a_next
    return total, revised_steps


def _review_phase(config: RunConfig, data: RunData, models: Models,
                  rng: np.random.Generator, opt: OptimizerConfig,
                  epochs: int, adversarial: bool) -> None:
    phi_seen_t = Tensor(data.phi_seen)
    targets_all = seen_target_indices(data.features.labels[data.train_idx],
                                      data.seen_ids)
    guard = _DivergenceGuard(models)
    gen_params = models.spiral_parameters(config.grouping_mode)
    disc_params = models.discriminator.parameters()
    skipped = 0
    phase = "review-adv" if adversarial else "review"
    for epoch in range(epochs):
        order = rng.permutation(len(data.train_idx))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            sel = order[start:start + config.batch_size]
            x = data.flat[data.train_idx[sel]]
            targets = targets_all[sel]
            try:
                l_rev, revised_steps = _batched_review_forward(
                    config, models, x, targets, phi_seen_t, rng)
                if adversarial:
                    real = Tensor(data.phi_seen[targets])
                    real_steps = [real] * len(revised_steps)
                    gen_loss, disc_loss = loss_arsr(
                        models.discriminator, revised_steps, real_steps,
                        config.alpha, l_rsr=l_rev)
                    value = gen_loss.item()
                    _check_finite(value, "adversarial generator loss")
                    gen_loss.backward()
                    sgd_step(gen_params, opt)
                    zero_grads(disc_params)
                    disc_loss.backward()
                    sgd_step(disc_params, opt)
                    zero_grads(gen_params)
                else:
                    value = l_rev.item()
                    _check_finite(value, "review loss")
                    l_rev.backward()
                    sgd_step(gen_params, opt)
            except DivergenceError:
                guard.restore()
                raise
            except DegenerateVectorError:
                # an all-zero revision row poisons one batch; skip and count it
                skipped += 1
                zero_grads(models.all_parameters())
                continue
            total += value * len(sel)
            count += len(sel)
        guard.commit()
        log_kv(phase, epoch=epoch, loss=f"{total / max(count, 1):.4f}",
               skipped_batches=skipped)


def train_stage1(config: RunConfig, data: RunData, models: Models,
                 rng: np.random.Generator) -> None:
    """Preview training, freeze, then grouping/revision (and discriminator)."""
    opt = OptimizerConfig(learning_rate=config.learning_rate,
                          momentum=config.momentum,
                          weight_decay=config.weight_decay)
    _preview_phase(config, data, models, rng, opt)
    if config.mode == "rsr":
        _review_phase(config, data, models, rng, opt,
                      epochs=config.review_epochs, adversarial=False)
    else:
        if config.arsr_warm_start:
            _review_phase(config, data, models, rng, opt,
                          epochs=config.review_epochs, adversarial=False)
            _review_phase(config, data, models, rng, opt,
                          epochs=config.adversarial_epochs, adversarial=True)
        else:
            _review_phase(config, data, models, rng, opt,
                          epochs=config.review_epochs + config.adversarial_epochs,
                          adversarial=True)


# ------------------------------------------------------------- stage 2
def _episode_inputs(models: Models, x_row: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
    with no_grad():
        h = models.preview.extract(Tensor(x_row))
        a0 = models.preview.predict(h)
        g_flat = group_flat(models, h, a0)
    return Tensor(h.values), Tensor(a0.values), Tensor(g_flat.values)


def _episode_rewards(config: RunConfig, models: Models,
                     traj: ReviewTrajectory) -> list[float]:
    rewards = []
    for step in traj.steps:
        base = reward_rsr(step.term_probs, step.p_uni_y)
        rewards.append(base)
    if config.mode == "arsr":
        with no_grad():
            scores = [models.discriminator(Tensor(s.revised)).item()
                      for s in traj.steps]
        split_rewards = [rewards_adversarial(r, s) for r, s in zip(rewards, scores)]
        return split_rewards  # caller picks the phase's component
    if config.reward_scheme == "episode_mean":
        mean = float(np.mean(rewards))
        return [mean] * len(rewards)
    return rewards


def train_stage2(config: RunConfig, data: RunData, models: Models,
                 rng: np.random.Generator) -> None:
    """PPO over the frozen spiral modules; only the policy trains."""
    if config.selection != "reinforced":
        log_kv("stage2", skipped="selection=random")
        return
    opt = OptimizerConfig(learning_rate=config.learning_rate,
                          momentum=config.momentum,
                          weight_decay=config.weight_decay)
    review_cfg = ReviewConfig(k=config.k, eta_threshold=config.eta_threshold,
                              alpha=config.alpha)
    phi_seen_t = Tensor(data.phi_seen)
    phi_unit_t = Tensor(unit_matrix(data.phi_seen))
    targets_all = seen_target_indices(data.features.labels[data.train_idx],
                                      data.seen_ids)
    cursor = 0
    order = rng.permutation(len(data.train_idx))
    guard = _DivergenceGuard(models)
    for update in range(config.ppo_updates):
        buffer = RolloutBuffer(gamma=config.gamma)
        reward_sum, reward_steps = 0.0, 0
        generator_phase = update % 2 == 0
        while buffer.n_transitions < config.ppo_transitions:
            if cursor >= len(order):
                order = rng.permutation(len(data.train_idx))
                cursor = 0
            row = data.train_idx[order[cursor]]
            target = int(targets_all[order[cursor]])
            cursor += 1
            h, a0, g_flat = _episode_inputs(models, data.flat[row])
            selector = PolicySelector(models.policy, sample=True, rng=rng)
            traj = review_episode(
                h, a0, g_flat, models.revision, selector, review_cfg,
                phi_unit_t, phi_seen_t, early_stop=config.stage2_early_stop,
                prob_mode=config.prob_mode, target_idx=target,
                phi_loss=phi_seen_t)
            rewards = _episode_rewards(config, models, traj)
            if config.mode == "arsr":
                rewards = [r[1] if generator_phase else r[0] for r in rewards]
            reward_sum += sum(rewards)
            reward_steps += len(rewards)
            buffer.add(episode_from_record(selector.record, rewards,
                                           *selector.context()))
        buffer.compute_advantages()
        try:
            stats = ppo_update(models.policy, buffer, opt,
                               epochs=config.ppo_epochs)
        except DivergenceError:
            guard.restore()
            raise
        guard.commit()
        buffer.clear()
        log_kv("stage2", update=update,
               mean_reward=f"{reward_sum / max(reward_steps, 1):.4f}",
               surrogate=f"{stats['surrogate']:.4f}",
               entropy=f"{stats['entropy']:.4f}")


# ---------------------------------------------------------------- inference
def _candidate_ids(data: RunData, mode: str) -> list[int]:
    return data.unseen_ids if mode == "zsl" else data.all_ids


def _prediction_scores(config: RunConfig, data: RunData, a: np.ndarray,
                       mode: str) -> np.ndarray:
    """Class scores for one prediction vector over the mode's candidates."""
    ids = _candidate_ids(data, mode)
    phi = data.attrs.submatrix(ids).astype(np.float64)
    a = np.asarray(a, dtype=np.float64)
    if config.predict_score == "cosine":
        scores = (phi @ a) / (np.linalg.norm(phi, axis=1) * np.linalg.norm(a))
    else:
        scores = phi @ a
    if mode == "gzsl" and config.calibration_epsilon != 0.0:
        delta = np.asarray([cid in set(data.unseen_ids) for cid in ids], dtype=np.float64)
        sign = -1.0 if config.calibration_sign == "penalize_unseen" else 1.0
        scores = scores + sign * config.calibration_epsilon * delta
    return scores


def _eval_selector(config: RunConfig, models: Models, rng: np.random.Generator):
    if config.selection == "reinforced":
        return PolicySelector(models.policy, sample=False)
    return RandomSelector(rng)


def infer(config: RunConfig, data: RunData, models: Models, x_row: np.ndarray,
          mode: str, rng: np.random.Generator) -> tuple[int, ReviewTrajectory]:
    """Run one review episode and predict a class id for the instance."""
    review_cfg = ReviewConfig(k=config.k, eta_threshold=config.eta_threshold,
                              alpha=config.alpha)
    ids = _candidate_ids(data, mode)
    phi = data.attrs.submatrix(ids)
    h, a0, g_flat = _episode_inputs(models, x_row)
    traj = review_episode(h, a0, g_flat, models.revision,
                          _eval_selector(config, models, rng), review_cfg,
                          Tensor(unit_matrix(phi)), Tensor(phi),
                          early_stop=config.early_stop,
                          prob_mode=config.prob_mode)
    scores = _prediction_scores(config, data, traj.final_prediction(), mode)
    return ids[int(np.argmax(scores))], traj


# --------------------------------------------------------------- evaluation
@dataclass
class EvalReport:
    mode: str
    t1: float
    u: float | None
    s: float | None
    h: float | None
    per_step: list[float]
    best_step: int
    best_value: float
    n_instances: int
    skipped_classes: int

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def harmonic_mean(u: float, s: float) -> float:
    """H = 2us/(u+s); 0 when both accuracies vanish."""
    return 0.0 if u + s == 0 else 2.0 * u * s / (u + s)


def per_class_accuracy(labels: np.ndarray, correct: np.ndarray,
                       class_ids: list[int]) -> tuple[float, int]:
    """Mean over classes of in-class accuracy; classes without instances are
    skipped (counted)."""
    accs = []
    skipped = 0
    for cid in class_ids:
        mask = labels == cid
        if not mask.any():
            skipped += 1
            continue
        accs.append(float(correct[mask].mean()))
    return (float(np.mean(accs)) if accs else 0.0), skipped


def evaluate(config: RunConfig, data: RunData, models: Models, mode: str,
             rng: np.random.Generator) -> EvalReport:
    """Per-class Top-1 (and u/s/H for the generalized setting) plus the
    accuracy-per-step curve with halted predictions carried forward."""
    mode = mode.lower()
    if mode not in ("zsl", "gzsl"):
        raise ConfigError("mode must be zsl or gzsl")
    review_cfg = ReviewConfig(k=config.k, eta_threshold=config.eta_threshold,
                              alpha=config.alpha)
    if mode == "zsl":
        test_idx = data.unseen_idx
    else:
        test_idx = np.concatenate([data.unseen_idx, data.seen_test_idx])
    ids = _candidate_ids(data, mode)
    phi = data.attrs.submatrix(ids)
    phi_unit_t, phi_t = Tensor(unit_matrix(phi)), Tensor(phi)

    labels = data.features.labels[test_idx]
    n_steps = config.k + 1
    pred = np.zeros((len(test_idx), n_steps), dtype=np.int64)
    for pos, row in enumerate(test_idx):
        h, a0, g_flat = _episode_inputs(models, data.flat[row])
        traj = review_episode(h, a0, g_flat, models.revision,
                              _eval_selector(config, models, rng), review_cfg,
                              phi_unit_t, phi_t, early_stop=config.early_stop,
                              prob_mode=config.prob_mode)
        current = traj.a0
        for step in range(n_steps):
            if 0 < step <= len(traj.steps):
                current = traj.steps[step - 1].revised
            scores = _prediction_scores(config, data, current, mode)
            pred[pos, step] = ids[int(np.argmax(scores))]

    correct = pred == labels[:, None]
    unseen_set = set(data.unseen_ids)
    per_step: list[float] = []
    skipped = 0
    for step in range(n_steps):
        if mode == "zsl":
            acc, skipped = per_class_accuracy(labels, correct[:, step],
                                              data.unseen_ids)
            per_step.append(acc)
        else:
            u_mask = np.isin(labels, list(unseen_set))
            u_acc, sk_u = per_class_accuracy(labels[u_mask], correct[u_mask, step],
                                             data.unseen_ids)
            s_acc, sk_s = per_class_accuracy(labels[~u_mask], correct[~u_mask, step],
                                             data.seen_ids)
            skipped = sk_u + sk_s
            per_step.append(harmonic_mean(u_acc, s_acc))

    final = n_steps - 1
    if mode == "zsl":
        t1, _ = per_class_accuracy(labels, correct[:, final], data.unseen_ids)
        u = s = h = None
    else:
        u_mask = np.isin(labels, list(unseen_set))
        u, _ = per_class_accuracy(labels[u_mask], correct[u_mask, final],
                                  data.unseen_ids)
        s, _ = per_class_accuracy(labels[~u_mask], correct[~u_mask, final],
                                  data.seen_ids)
        h = harmonic_mean(u, s)
        t1, _ = per_class_accuracy(labels, correct[:, final], ids)
    best_step = int(np.argmax(per_step))
    return EvalReport(mode=mode, t1=t1, u=u, s=s, h=h, per_step=per_step,
                      best_step=best_step, best_value=float(per_step[best_step]),
                      n_instances=len(test_idx), skipped_classes=skipped)


# -------------------------------------------------------------- trace export
def _top_entries(vec: np.ndarray, count: int) -> list[list]:
    order = np.lexsort((np.arange(len(vec)), -vec))[:count]
    return [[int(i), float(vec[i])] for i in np.sort(order)]


def _top_classes(config: RunConfig, data: RunData, a: np.ndarray, mode: str,
                 count: int = 3) -> list[list]:
    ids = _candidate_ids(data, mode)
    scores = _prediction_scores(config, data, a, mode)
    order = np.argsort(-scores)[:count]
    return [[int(ids[i]), float(scores[i])] for i in order]


def export_trace(config: RunConfig, data: RunData, models: Models,
                 instance_rows: np.ndarray, path, mode: str = "gzsl",
                 rng: np.random.Generator | None = None) -> None:
    """JSON-lines decision traces: preview top-3, then per step the selected
    group, its strongest criteria, the revised top-3, eta, and the halt flag."""
    rng = rng or np.random.default_rng(config.seed)
    review_cfg = ReviewConfig(k=config.k, eta_threshold=config.eta_threshold,
                              alpha=config.alpha)
    ids = _candidate_ids(data, mode)
    phi = data.attrs.submatrix(ids)
    phi_unit_t, phi_t = Tensor(unit_matrix(phi)), Tensor(phi)
    top_n = max(1, math.ceil(0.1 * data.m))
    with open(path, "w", encoding="utf-8") as fh:
        for row in instance_rows:
            h, a0, g_flat = _episode_inputs(models, data.flat[int(row)])
            traj = review_episode(h, a0, g_flat, models.revision,
                                  _eval_selector(config, models, rng), review_cfg,
                                  phi_unit_t, phi_t, early_stop=config.early_stop,
                                  prob_mode=config.prob_mode)
            g = g_flat.values.reshape(config.k, data.m)
            steps = []
            for step in traj.steps:
                steps.append({
                    "group": step.group_index,
                    "top_criteria": _top_entries(g[step.group_index], top_n),
                    "top3": _top_classes(config, data, step.revised, mode),
                    "eta": float(step.eta),
                    "halted": bool(step.halted),
                })
            record = {
                "instance": int(row),
                "label": int(data.features.labels[int(row)]),
                "preview_top3": _top_classes(config, data, traj.a0, mode),
                "steps": steps,
            }
            fh.write(json.dumps(record) + "\n")


# ------------------------------------------------------------------ run all
def run_all(config: RunConfig, data: RunData | None = None,
            models: Models | None = None) -> tuple[Models, RunData]:
    """Stage 1 + stage 2 from scratch under the run seed."""
    seq = np.random.SeedSequence(config.seed)
    init_ss, s1_ss, s2_ss = seq.spawn(3)
    data = data or prepare_data(config)
    if models is None:
        models = build_models(config, data.features.feature_shape, data.m,
                              np.random.default_rng(init_ss))
    train_stage1(config, data, models, np.random.default_rng(s1_ss))
    train_stage2(config, data, models, np.random.default_rng(s2_ss))
    return models, data


def eval_rng(config: RunConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(config.seed).spawn(4)[3])
