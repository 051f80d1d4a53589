"""Dataset ingestion, on-disk formats, and the synthetic benchmark generator.

Formats
-------
Feature file ("RSRF"): magic, version u32, n u32, d1 d2 d3 u32, n labels as
u32, then n*d1*d2*d3 float32 payload, all little-endian.
Attribute matrix: UTF-8 CSV, one row per class: class_id, v1, ..., vm.
Split file: JSON {"seen": [ids], "unseen": [ids]}.
Manual semantic groups: JSON {group name: [criterion indices]}.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (DataFormatError, DuplicateClassError, LabelMismatchError,
                     SplitOverlapError, TruncatedPayloadError,
                     ZeroAttributeRowError, ConfigError)

FEATURE_MAGIC = b"RSRF"
FEATURE_VERSION = 1


# --------------------------------------------------------------------- types
@dataclass
class FeatureSet:
    features: np.ndarray  # (n, d1, d2, d3) float32
    labels: np.ndarray    # (n,) int64 class ids

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 4:
            raise DataFormatError("features must have shape (n, d1, d2, d3)")
        if self.labels.shape != (self.features.shape[0],):
            raise LabelMismatchError("label count differs from instance count")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        return self.features.shape[1:]

    def flat(self) -> np.ndarray:
        """(n, d1*d2*d3) view; every learned module consumes flat vectors."""
        return self.features.reshape(self.n, -1)


@dataclass
class AttributeMatrix:
    class_ids: list[int]
    matrix: np.ndarray  # (C, m) float32

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float32)
        if len(self.class_ids) != len(set(self.class_ids)):
            raise DuplicateClassError("duplicate class id in attribute matrix")
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.class_ids):
            raise DataFormatError("attribute matrix must be one row per class")
        norms = np.linalg.norm(self.matrix, axis=1)
        if np.any(norms == 0):
            dead = [self.class_ids[i] for i in np.nonzero(norms == 0)[0]]
            raise ZeroAttributeRowError(f"all-zero attribute rows for classes {dead}")
        self._index = {c: i for i, c in enumerate(self.class_ids)}

    @property
    def m(self) -> int:
        return self.matrix.shape[1]

    def row(self, class_id: int) -> np.ndarray:
        return self.matrix[self._index[class_id]]

    def submatrix(self, class_ids: list[int]) -> np.ndarray:
        return self.matrix[[self._index[c] for c in class_ids]]

    def __contains__(self, class_id: int) -> bool:
        return class_id in self._index


@dataclass
class Split:
    seen: list[int]
    unseen: list[int]

    def __post_init__(self):
        if len(self.seen) != len(set(self.seen)) or len(self.unseen) != len(set(self.unseen)):
            raise DuplicateClassError("duplicate class id inside a split list")
        overlap = set(self.seen) & set(self.unseen)
        if overlap:
            raise SplitOverlapError(f"classes in both seen and unseen: {sorted(overlap)}")


@dataclass(frozen=True)
class SynthConfig:
    n_seen_classes: int = 20
    n_unseen_classes: int = 5
    m: int = 16
    instances_per_class: int = 25
    planted_group_count: int = 4
    noise_scale: float = 0.1
    seed: int = 272
    # desk-scale extensions (defaults match the flat (1,1,64) feature shape)
    feature_dim: int = 64
    pair_contrast: float = 0.12
    informative_block: int | None = None

    def __post_init__(self):
        for name in ("n_seen_classes", "n_unseen_classes", "m",
                     "instances_per_class", "planted_group_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.planted_group_count > self.m:
            raise ConfigError("planted_group_count must be <= m")
        if self.informative_block is not None and not (
                0 <= self.informative_block < self.planted_group_count):
            raise ConfigError("informative_block out of range")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be >= 0")


# ------------------------------------------------------------- feature file
def _write_u32(fh, v: int) -> None:
    fh.write(struct.pack("<I", v))


def _read_u32(fh) -> int:
    raw = fh.read(4)
    if len(raw) != 4:
        raise TruncatedPayloadError("feature file ended inside the header")
    return struct.unpack("<I", raw)[0]


def save_features(fs: FeatureSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        _write_u32(fh, FEATURE_VERSION)
        _write_u32(fh, fs.n)
        for d in fs.feature_shape:
            _write_u32(fh, d)
        fh.write(np.asarray(fs.labels, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(fs.features, dtype="<f4").tobytes())


def load_features(path) -> FeatureSet:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise DataFormatError(f"bad feature-file magic {magic!r}")
        version = _read_u32(fh)
        if version != FEATURE_VERSION:
            raise DataFormatError(f"unsupported feature-file version {version}")
        n = _read_u32(fh)
        dims = tuple(_read_u32(fh) for _ in range(3))
        raw_labels = fh.read(4 * n)
        if len(raw_labels) != 4 * n:
            raise TruncatedPayloadError("feature file ended inside labels")
        labels = np.frombuffer(raw_labels, dtype="<u4").astype(np.int64)
        count = n * int(np.prod(dims))
        raw = fh.read(4 * count)
        if len(raw) != 4 * count:
            raise TruncatedPayloadError("feature file ended inside the payload")
        features = np.frombuffer(raw, dtype="<f4").reshape((n,) + dims).copy()
    return FeatureSet(features=features, labels=labels)


# --------------------------------------------------------------- attributes
def save_attributes(attrs: AttributeMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for cid, row in zip(attrs.class_ids, attrs.matrix):
            writer.writerow([cid] + [repr(float(v)) for v in row])


def load_attributes(path) -> AttributeMatrix:
    class_ids: list[int] = []
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec:
                continue
            try:
                class_ids.append(int(rec[0]))
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise DataFormatError(f"attribute CSV line {lineno}: {exc}") from exc
    if not rows:
        raise DataFormatError("attribute CSV is empty")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataFormatError("attribute CSV rows have differing criterion counts")
    return AttributeMatrix(class_ids=class_ids,
                           matrix=np.asarray(rows, dtype=np.float32))


# -------------------------------------------------------------------- split
def save_split(split: Split, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"seen": list(split.seen), "unseen": list(split.unseen)}, fh)


def load_split(path) -> Split:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"split file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or set(obj) != {"seen", "unseen"}:
        raise DataFormatError('split file must be {"seen": [...], "unseen": [...]}')
    return Split(seen=[int(c) for c in obj["seen"]],
                 unseen=[int(c) for c in obj["unseen"]])


def load_manual_groups(path) -> dict[str, list[int]]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"manual group file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataFormatError("manual group file must map names to index lists")
    out: dict[str, list[int]] = {}
    claimed: set[int] = set()
    for name, idxs in obj.items():
        idxs = [int(i) for i in idxs]
        if claimed & set(idxs):
            raise DataFormatError(f"criterion reused across manual groups at {name!r}")
        claimed |= set(idxs)
        out[name] = idxs
    return out


def save_manual_groups(groups: dict[str, list[int]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(groups, fh)


# ----------------------------------------------------------- cross checking
def validate_dataset(fs: FeatureSet, attrs: AttributeMatrix, split: Split) -> None:
    """Cross-file invariants: split covered by attributes, labels in split."""
    known = set(attrs.class_ids)
    missing = (set(split.seen) | set(split.unseen)) - known
    if missing:
        raise LabelMismatchError(f"split classes missing from attributes: {sorted(missing)}")
    allowed = set(split.seen) | set(split.unseen)
    bad = set(np.unique(fs.labels).tolist()) - allowed
    if bad:
        raise LabelMismatchError(f"feature labels outside the split: {sorted(bad)}")


def load_dataset(features_path, attributes_path, split_path):
    fs = load_features(features_path)
    attrs = load_attributes(attributes_path)
    split = load_split(split_path)
    validate_dataset(fs, attrs, split)
    return fs, attrs, split


# ---------------------------------------------------------------- synthesis
@dataclass
class SynthPlan:
    """Deterministic construction recipe behind a synthetic dataset.

    Features have two positions sharing ``feature_dim // 2`` channels. The
    pair-shared attribute content embeds symmetrically (identical at both
    positions); the within-pair contrast embeds antisymmetrically (opposite
    signs), so position-pooled views cancel it exactly and only unpooled
    readers can separate a confusable pair.
    """
    config: SynthConfig
    blocks: list[np.ndarray]            # criterion indices per planted block
    pairs: list[tuple[int, int]]        # confusable class-id pairs
    informative: dict[tuple[int, int], int]  # pair -> discriminative block
    attributes: np.ndarray              # (C, m) centered class attributes
    attributes_shared: np.ndarray       # (C, m) pair-mean part
    attributes_contrast: np.ndarray     # (C, m) within-pair deviation
    embedding_sym: np.ndarray           # (channels, m) block-aligned map
    embedding_asym: np.ndarray          # (channels, m) block-aligned map


def block_indices(m: int, planted_group_count: int) -> list[np.ndarray]:
    return [np.asarray(b) for b in np.array_split(np.arange(m), planted_group_count)]


def planted_group_masks(config: SynthConfig) -> np.ndarray:
    """(planted_group_count, m) indicator masks of the planted blocks."""
    masks = np.zeros((config.planted_group_count, config.m), dtype=np.float32)
    for j, idx in enumerate(block_indices(config.m, config.planted_group_count)):
        masks[j, idx] = 1.0
    return masks


def synth_plan(config: SynthConfig) -> SynthPlan:
    if config.feature_dim % 2 != 0:
        raise ConfigError("feature_dim must be even (two feature positions)")
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 0x5A17]))
    p = config.planted_group_count
    blocks = block_indices(config.m, p)
    n_total = config.n_seen_classes + config.n_unseen_classes

    def make_pairs(ids: list[int]) -> list[tuple[int, int]]:
        return [(ids[i], ids[i + 1]) for i in range(0, len(ids) - 1, 2)]

    seen_ids = list(range(config.n_seen_classes))
    unseen_ids = list(range(config.n_seen_classes, n_total))
    pairs = make_pairs(seen_ids) + make_pairs(unseen_ids)
    paired = {c for ab in pairs for c in ab}

    attrs = np.zeros((n_total, config.m), dtype=np.float64)
    contrast = np.zeros((n_total, config.m), dtype=np.float64)
    informative: dict[tuple[int, int], int] = {}
    for pair in pairs:
        b = (config.informative_block if config.informative_block is not None
             else int(rng.integers(p)))
        informative[pair] = b
        for j, idx in enumerate(blocks):
            if j == b:
                center = rng.uniform(0.35, 0.65, size=idx.size)
                direction = rng.choice([-1.0, 1.0], size=idx.size)
                attrs[pair[0], idx] = center + config.pair_contrast * direction
                attrs[pair[1], idx] = center - config.pair_contrast * direction
                contrast[pair[0], idx] = config.pair_contrast * direction
                contrast[pair[1], idx] = -config.pair_contrast * direction
            else:
                shared = rng.uniform(0.0, 1.0, size=idx.size)
                attrs[pair[0], idx] = shared
                attrs[pair[1], idx] = shared
    for cid in range(n_total):
        if cid not in paired:
            attrs[cid] = rng.uniform(0.0, 1.0, size=config.m)

    # mean-center each criterion across classes (deviations are preserved)
    attrs = attrs - attrs.mean(axis=0, keepdims=True)
    shared_part = attrs - contrast

    # block-aligned maps: each planted block owns a slice of the channels
    channels = config.feature_dim // 2
    emb_sym = np.zeros((channels, config.m), dtype=np.float64)
    emb_asym = np.zeros((channels, config.m), dtype=np.float64)
    chan_slices = np.array_split(np.arange(channels), p)
    for idx, rows in zip(blocks, chan_slices):
        emb_sym[np.ix_(rows, idx)] = rng.normal(
            0.0, 1.0 / np.sqrt(idx.size), size=(rows.size, idx.size))
        emb_asym[np.ix_(rows, idx)] = rng.normal(
            0.0, 1.0 / np.sqrt(idx.size), size=(rows.size, idx.size))

    return SynthPlan(config=config, blocks=blocks, pairs=pairs,
                     informative=informative,
                     attributes=attrs.astype(np.float32),
                     attributes_shared=shared_part.astype(np.float32),
                     attributes_contrast=contrast.astype(np.float32),
                     embedding_sym=emb_sym.astype(np.float32),
                     embedding_asym=emb_asym.astype(np.float32))


def synth_dataset(config: SynthConfig) -> tuple[FeatureSet, AttributeMatrix, Split]:
    """Fully seeded synthetic benchmark with planted attribute-block structure.

    Confusable class pairs share every block except one. Pair-shared content
    appears identically at both feature positions; the within-pair contrast
    appears with opposite signs, so a position-pooled reader conflates the
    pair while the full features keep it linearly separable.
    """
    plan = synth_plan(config)
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 0xFEA7]))
    n_total = config.n_seen_classes + config.n_unseen_classes
    n_inst = n_total * config.instances_per_class
    channels = config.feature_dim // 2

    labels = np.repeat(np.arange(n_total), config.instances_per_class)
    sym = plan.attributes_shared[labels] @ plan.embedding_sym.T
    asym = plan.attributes_contrast[labels] @ plan.embedding_asym.T
    noise = rng.normal(0.0, 1.0, size=(n_inst, 2, channels)).astype(np.float32)
    feats = np.stack([sym + asym, sym - asym], axis=1)
    feats = feats + np.float32(config.noise_scale) * noise
    features = feats.reshape(n_inst, 2, 1, channels).astype(np.float32)

    fs = FeatureSet(features=features, labels=labels)
    attrs = AttributeMatrix(class_ids=list(range(n_total)), matrix=plan.attributes)
    split = Split(seen=list(range(config.n_seen_classes)),
                  unseen=list(range(config.n_seen_classes, n_total)))
    return fs, attrs, split
