"""Self-directed attribute grouping and the group analysis metrics.

The grouping network predicts k non-negative weight rows over the m
criteria per instance. The analysis half is pure numpy over frozen outputs:
top-10 shot accuracy, sparsity degree, semantic tendencies against manual
annotations, and the decile weight histogram.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import DegenerateVectorError, ShapeError
from .layers import Dense
from .optim import Parameter
from .tensor import Tensor


@dataclass(frozen=True)
class GroupingConfig:
    k: int = 5
    vis_dim: int = 32
    hidden: int = 48


class GroupingModel:
    """g = ReLU(dense stack over (embedded h, a0)), reshaped to k x m rows."""

    def __init__(self, feat_dim: int, m: int, config: GroupingConfig,
                 rng: np.random.Generator, prefix: str = "grouping"):
        self.k = config.k
        self.m = m
        self.vis = Dense(feat_dim, config.vis_dim, f"{prefix}.vis", rng)
        self.fc0 = Dense(config.vis_dim + m, config.hidden, f"{prefix}.fc0", rng)
        self.fc1 = Dense(config.hidden, config.k * m, f"{prefix}.fc1", rng)
        # nudge initial pre-activations positive so no group row starts dead
        self.fc1.b.tensor.values += 0.05

    def __call__(self, h: Tensor, a0: Tensor) -> Tensor:
        """Flat (B, k*m) non-negative group weights (k*m for one instance)."""
        z = ops.concat([ops.relu(self.vis(h)), a0], axis=-1)
        return ops.relu(self.fc1(ops.relu(self.fc0(z))))

    def parameters(self) -> list[Parameter]:
        return self.vis.parameters() + self.fc0.parameters() + self.fc1.parameters()


@dataclass
class AttributeGroups:
    """One instance's k x m non-negative group weight matrix."""
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)
        if self.weights.ndim != 2:
            raise ShapeError("attribute groups must be a k x m matrix")
        if np.any(self.weights < 0):
            raise ShapeError("attribute group weights must be non-negative")

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def m(self) -> int:
        return self.weights.shape[1]


def groups_from_flat(flat: np.ndarray, k: int) -> AttributeGroups:
    return AttributeGroups(weights=np.asarray(flat).reshape(k, -1))


# ------------------------------------------------------------------ metrics
def representative_set(row: np.ndarray, frac: float = 0.1) -> np.ndarray:
    """Indices of the top-``frac`` weighted criteria (ceil, ties to lower index)."""
    m = row.shape[0]
    q = max(1, math.ceil(frac * m))
    order = np.lexsort((np.arange(m), -row))
    return np.sort(order[:q])


def top10_shot_accuracy(groups_per_instance: list[AttributeGroups],
                        true_attrs: np.ndarray, per_group: bool = False) -> float:
    """Fraction of instances whose groups hit the class's 10 strongest criteria.

    The hit test uses the union of every group's top-10% criteria by default;
    ``per_group`` demands that each group hits individually.
    """
    if not groups_per_instance:
        raise ShapeError("need at least one instance")
    true_attrs = np.asarray(true_attrs)
    hits = 0
    for g, attr in zip(groups_per_instance, true_attrs):
        n_top = min(10, attr.shape[0])
        order = np.lexsort((np.arange(attr.shape[0]), -attr))
        top_true = set(order[:n_top].tolist())
        reps = [set(representative_set(row).tolist()) for row in g.weights]
        if per_group:
            ok = all(r & top_true for r in reps)
        else:
            union = set().union(*reps)
            ok = bool(union & top_true)
        hits += int(ok)
    return hits / len(groups_per_instance)


def sparsity_degree(g: AttributeGroups) -> float:
    """max(g) over the smallest non-zero entry; ReLU zeros are excluded."""
    nz = g.weights[g.weights > 0]
    if nz.size == 0:
        raise DegenerateVectorError("all group weights are zero")
    return float(g.weights.max() / nz.min())


def _semantic_ratio_chain(g: AttributeGroups,
                          manual_groups: dict[str, list[int]]) -> np.ndarray | None:
    """One instance's o -> no -> ro chain; None when a representative set
    has no annotated criteria."""
    names = list(manual_groups)
    annotated = set()
    for idxs in manual_groups.values():
        annotated |= set(idxs)
    o = np.zeros((g.k, len(names)), dtype=np.float64)
    for i, row in enumerate(g.weights):
        rep = set(representative_set(row).tolist()) & annotated
        if not rep:
            return None
        for j, name in enumerate(names):
            o[i, j] = len(rep & set(manual_groups[name])) / len(rep)
    denom = np.linalg.norm(o, axis=1).max()
    no = o / denom
    e = np.exp(no - no.max(axis=1, keepdims=True))
    ro = e / e.sum(axis=1, keepdims=True)
    return ro


def semantic_tendency(groups_per_instance: list[AttributeGroups],
                      manual_groups: dict[str, list[int]]) -> tuple[np.ndarray, int]:
    """Average relative semantic composition per learned group.

    Per instance: o = overlap ratios of each group's top-10% criteria with the
    manual groups (criteria outside every manual group are dropped from the
    denominator), no = o scaled by the largest L2 row norm across groups,
    ro = row-wise softmax of no. The result is the mean of ro over instances,
    plus a count of instances skipped for empty representative sets.
    """
    total = None
    skipped = 0
    kept = 0
    for g in groups_per_instance:
        ro = _semantic_ratio_chain(g, manual_groups)
        if ro is None:
            skipped += 1
            continue
        total = ro if total is None else total + ro
        kept += 1
    if total is None:
        raise DegenerateVectorError("no instance had annotated representative criteria")
    return total / kept, skipped


def weight_histogram(g: AttributeGroups) -> tuple[list[dict], bool]:
    """Sorted non-zero weights split into 10 equal-count buckets.

    With fewer than 10 non-zero entries the split is coarser and flagged.
    Each bucket records its count and weight range.
    """
    nz = np.sort(g.weights[g.weights > 0].astype(np.float64))
    if nz.size == 0:
        raise DegenerateVectorError("all group weights are zero")
    coarse = nz.size < 10
    chunks = np.array_split(nz, min(10, nz.size))
    buckets = [{"count": int(c.size), "low": float(c[0]), "high": float(c[-1])}
               for c in chunks if c.size]
    return buckets, coarse


@dataclass
class GroupAnalysisReport:
    top10_shot_accuracy: float
    sparsity_degree: float
    tendency_group_names: list[str]
    per_group_semantic_tendency: list[list[float]]
    tendency_skipped_instances: int
    weight_histogram: list[dict]
    histogram_coarse: bool

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2)


def analyze_groups(groups_per_instance: list[AttributeGroups],
                   true_attrs: np.ndarray,
                   manual_groups: dict[str, list[int]]) -> GroupAnalysisReport:
    stacked = AttributeGroups(
        weights=np.concatenate([g.weights for g in groups_per_instance], axis=0))
    do, skipped = semantic_tendency(groups_per_instance, manual_groups)
    buckets, coarse = weight_histogram(stacked)
    return GroupAnalysisReport(
        top10_shot_accuracy=top10_shot_accuracy(groups_per_instance, true_attrs),
        sparsity_degree=sparsity_degree(stacked),
        tendency_group_names=list(manual_groups),
        per_group_semantic_tendency=[[float(v) for v in row] for row in do],
        tendency_skipped_instances=skipped,
        weight_histogram=buckets,
        histogram_coarse=coarse,
    )
