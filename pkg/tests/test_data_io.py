"""Format round-trips, loader validation, and synthetic-data properties."""

import numpy as np
import pytest

from spiralzsl.data import (AttributeMatrix, FeatureSet, Split, SynthConfig,
                            block_indices, load_attributes, load_dataset,
                            load_features, load_manual_groups, load_split,
                            planted_group_masks, save_attributes,
                            save_features, save_manual_groups, save_split,
                            synth_dataset, synth_plan, validate_dataset)
from spiralzsl.errors import (DataFormatError, DuplicateClassError,
                              LabelMismatchError, SplitOverlapError,
                              TruncatedPayloadError, ZeroAttributeRowError)


@pytest.fixture
def small_set(tmp_path):
    rng = np.random.default_rng(0)
    fs = FeatureSet(features=rng.normal(size=(6, 1, 1, 8)).astype(np.float32),
                    labels=np.array([0, 0, 1, 1, 2, 2]))
    attrs = AttributeMatrix(class_ids=[0, 1, 2],
                            matrix=rng.normal(size=(3, 4)).astype(np.float32))
    split = Split(seen=[0, 1], unseen=[2])
    return fs, attrs, split, tmp_path


# ----------------------------------------------------------- feature format
def test_feature_roundtrip_bit_exact(small_set):
    fs, _, _, tmp = small_set
    path = tmp / "f.rsrf"
    save_features(fs, path)
    back = load_features(path)
    assert back.features.tobytes() == fs.features.tobytes()
    assert np.array_equal(back.labels, fs.labels)


def test_feature_spatial_shape_roundtrip(tmp_path):
    fs = FeatureSet(features=np.zeros((2, 14, 14, 1024), dtype=np.float32),
                    labels=np.array([0, 1]))
    fs.features[0, 3, 7, 100] = 1.5
    path = tmp_path / "sun.rsrf"
    save_features(fs, path)
    back = load_features(path)
    assert back.feature_shape == (14, 14, 1024)
    assert back.features.tobytes() == fs.features.tobytes()


def test_feature_bad_magic(tmp_path):
    path = tmp_path / "bad.rsrf"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(DataFormatError):
        load_features(path)


def test_feature_truncated_payload(small_set):
    fs, _, _, tmp = small_set
    path = tmp / "f.rsrf"
    save_features(fs, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 10])
    with pytest.raises(TruncatedPayloadError):
        load_features(path)


def test_feature_header_declares_more_instances_than_payload(small_set):
    fs, _, _, tmp = small_set
    one = FeatureSet(features=fs.features[:1], labels=fs.labels[:1])
    path = tmp / "f.rsrf"
    save_features(one, path)
    raw = bytearray(path.read_bytes())
    raw[8:12] = (2).to_bytes(4, "little")  # claim n=2, payload holds 1
    path.write_bytes(bytes(raw))
    with pytest.raises(TruncatedPayloadError):
        load_features(path)


# ------------------------------------------------------------ attribute CSV
def test_attribute_roundtrip_bit_exact(small_set):
    _, attrs, _, tmp = small_set
    path = tmp / "a.csv"
    save_attributes(attrs, path)
    back = load_attributes(path)
    assert back.class_ids == attrs.class_ids
    assert back.matrix.tobytes() == attrs.matrix.tobytes()


def test_attribute_duplicate_class_rejected(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("1,0.5,0.5\n1,0.25,0.75\n")
    with pytest.raises(DuplicateClassError):
        load_attributes(path)


def test_attribute_zero_row_rejected(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("1,0.5,0.5\n2,0.0,0.0\n")
    with pytest.raises(ZeroAttributeRowError):
        load_attributes(path)


def test_attribute_ragged_rows_rejected(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("1,0.5,0.5\n2,0.25\n")
    with pytest.raises(DataFormatError):
        load_attributes(path)


def test_attribute_non_numeric_rejected(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("1,0.5,oops\n")
    with pytest.raises(DataFormatError):
        load_attributes(path)


# ------------------------------------------------------------------- splits
def test_split_roundtrip(small_set):
    _, _, split, tmp = small_set
    path = tmp / "s.json"
    save_split(split, path)
    back = load_split(path)
    assert back.seen == split.seen and back.unseen == split.unseen


def test_split_overlap_rejected(tmp_path):
    path = tmp_path / "s.json"
    path.write_text('{"seen": [1, 2], "unseen": [2, 3]}')
    with pytest.raises(SplitOverlapError):
        load_split(path)


def test_split_malformed_json(tmp_path):
    path = tmp_path / "s.json"
    path.write_text('{"seen": [1, 2]')
    with pytest.raises(DataFormatError):
        load_split(path)


def test_manual_groups_roundtrip_and_overlap(tmp_path):
    path = tmp_path / "g.json"
    save_manual_groups({"color": [0, 1], "shape": [2, 3]}, path)
    assert load_manual_groups(path) == {"color": [0, 1], "shape": [2, 3]}
    path.write_text('{"a": [0, 1], "b": [1, 2]}')
    with pytest.raises(DataFormatError):
        load_manual_groups(path)


# ----------------------------------------------------- paper-scale metadata
def test_sun_scale_metadata_parses(tmp_path):
    rng = np.random.default_rng(7)
    ids = list(range(717))
    attrs = AttributeMatrix(class_ids=ids,
                            matrix=rng.uniform(0.1, 1.0, size=(717, 102)).astype(np.float32))
    split = Split(seen=ids[:645], unseen=ids[645:])
    apath, spath = tmp_path / "a.csv", tmp_path / "s.json"
    save_attributes(attrs, apath)
    save_split(split, spath)
    a2, s2 = load_attributes(apath), load_split(spath)
    assert len(a2.class_ids) == 717 and a2.m == 102
    assert len(s2.seen) == 645 and len(s2.unseen) == 72


def test_apy_scale_metadata_parses(tmp_path):
    rng = np.random.default_rng(8)
    ids = list(range(32))
    attrs = AttributeMatrix(class_ids=ids,
                            matrix=rng.uniform(0.1, 1.0, size=(32, 64)).astype(np.float32))
    split = Split(seen=ids[:20], unseen=ids[20:])
    apath, spath = tmp_path / "a.csv", tmp_path / "s.json"
    save_attributes(attrs, apath)
    save_split(split, spath)
    a2, s2 = load_attributes(apath), load_split(spath)
    assert len(a2.class_ids) == 32 and a2.m == 64
    assert len(s2.seen) == 20 and len(s2.unseen) == 12


# --------------------------------------------------------- cross validation
def test_dataset_cross_checks(small_set, tmp_path):
    fs, attrs, split, _ = small_set
    # split class not in attributes
    with pytest.raises(LabelMismatchError):
        validate_dataset(fs, attrs, Split(seen=[0, 1], unseen=[9]))
    # label outside the split
    bad = FeatureSet(features=fs.features, labels=np.array([0, 0, 1, 1, 2, 7]))
    with pytest.raises(LabelMismatchError):
        validate_dataset(bad, attrs, split)


def test_load_dataset_end_to_end(small_set):
    fs, attrs, split, tmp = small_set
    save_features(fs, tmp / "f.rsrf")
    save_attributes(attrs, tmp / "a.csv")
    save_split(split, tmp / "s.json")
    fs2, attrs2, split2 = load_dataset(tmp / "f.rsrf", tmp / "a.csv", tmp / "s.json")
    assert fs2.n == fs.n and attrs2.m == attrs.m and split2.seen == split.seen


# ---------------------------------------------------------------- synthesis
def test_synth_deterministic_bitwise():
    cfg = SynthConfig(seed=11)
    a = synth_dataset(cfg)
    b = synth_dataset(cfg)
    assert a[0].features.tobytes() == b[0].features.tobytes()
    assert a[1].matrix.tobytes() == b[1].matrix.tobytes()
    assert a[2].seen == b[2].seen and a[2].unseen == b[2].unseen


def test_synth_zero_noise_same_class_identical():
    cfg = SynthConfig(n_seen_classes=4, n_unseen_classes=2, instances_per_class=3,
                      noise_scale=0.0, seed=5)
    fs, _, _ = synth_dataset(cfg)
    flat = fs.flat()
    for cid in range(6):
        rows = flat[fs.labels == cid]
        assert np.all(rows == rows[0])


def test_synth_pairs_share_all_blocks_except_one():
    cfg = SynthConfig(n_seen_classes=6, n_unseen_classes=2, seed=3)
    plan = synth_plan(cfg)
    _, attrs, _ = synth_dataset(cfg)
    for pair, b in plan.informative.items():
        diff = attrs.row(pair[0]) - attrs.row(pair[1])
        for j, idx in enumerate(plan.blocks):
            if j == b:
                assert np.any(np.abs(diff[idx]) > 1e-6)
            else:
                np.testing.assert_allclose(diff[idx], 0.0, atol=1e-6)


def test_planted_group_masks_partition_criteria():
    cfg = SynthConfig(m=10, planted_group_count=3)
    masks = planted_group_masks(cfg)
    assert masks.shape == (3, 10)
    np.testing.assert_array_equal(masks.sum(axis=0), np.ones(10))


def _lstsq_probe_accuracy(x_tr, y_tr, x_te, y_te):
    w, *_ = np.linalg.lstsq(
        np.hstack([x_tr, np.ones((len(x_tr), 1))]), y_tr, rcond=None)
    pred = np.sign(np.hstack([x_te, np.ones((len(x_te), 1))]) @ w)
    return float(np.mean(pred == y_te))


def test_confusable_pair_probe_oracle():
    # Full-feature least squares separates the pair; a probe restricted to the
    # shared blocks' feature slices cannot beat chance.
    cfg = SynthConfig(n_seen_classes=2, n_unseen_classes=1, m=16,
                      instances_per_class=80, planted_group_count=4,
                      noise_scale=0.05, seed=17, informative_block=0)
    fs, _, _ = synth_dataset(cfg)
    flat = fs.flat()
    mask = fs.labels < 2
    x = flat[mask]
    y = np.where(fs.labels[mask] == 0, 1.0, -1.0)
    order = np.random.default_rng(1).permutation(len(x))
    tr, te = order[: len(x) // 2], order[len(x) // 2:]

    channels = cfg.feature_dim // 2
    c_block = channels // cfg.planted_group_count
    in_block = np.arange(c_block)  # block 0 is informative
    shared_cols = np.array([c for c in range(cfg.feature_dim)
                            if (c % channels) not in in_block])

    acc_full = _lstsq_probe_accuracy(x[tr], y[tr], x[te], y[te])
    acc_shared = _lstsq_probe_accuracy(x[tr][:, shared_cols], y[tr],
                                       x[te][:, shared_cols], y[te])
    assert acc_full >= 0.95
    assert acc_shared <= 0.65


def test_block_indices_cover_m():
    idx = block_indices(16, 4)
    assert [len(b) for b in idx] == [4, 4, 4, 4]
    assert sorted(np.concatenate(idx).tolist()) == list(range(16))
