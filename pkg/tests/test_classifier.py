"""Segment classifier: batching equivalence, gradients, training behaviour."""

import numpy as np
import pytest

from sppg import classifier as clf_mod
from sppg import nn
from sppg.classifier import (
    EvalReport,
    ModelConfig,
    SegmentClassifier,
    Sppg,
    TrainConfig,
    TrainingDivergedError,
    batch_sppg,
    evaluate,
    read_sppg_file,
    train,
    write_sppg_file,
)
from sppg.corpus import PhoneInventory, SegmentDataset, SegmentFeatureSequence

TINY = ModelConfig(n_conv_layers=2, conv_channels=2, gru_hidden=4, n_dense=1,
                   dense_units=6, dropout_rate=0.2, n_coeffs=13, inventory_size=5)


def make_segment(rng, n_frames, label=0, seg_id=None, shift=0.0):
    frames = rng.standard_normal((n_frames, 13)) + shift
    return SegmentFeatureSequence(frames=frames.astype(np.float32), label=label,
                                  segment_id=seg_id or f"s{rng.integers(1 << 30)}:0")


def separable_dataset(rng, n_per_class, tag="l2", split="train"):
    """Two phones offset ±2.5 on every coefficient: linearly separable."""
    items = []
    for label, shift in ((0, 2.5), (1, -2.5)):
        for i in range(n_per_class):
            n = int(rng.integers(4, 9))
            items.append(make_segment(rng, n, label=label,
                                      seg_id=f"{split}{label}x{i}:0", shift=shift))
    return SegmentDataset(items=items, corpus_tag=tag, split=split)


# -- forward properties -------------------------------------------------


def test_posteriors_sum_to_one_and_nonnegative():
    rng = np.random.default_rng(0)
    clf = SegmentClassifier(TINY, seed=1)
    x = rng.standard_normal((8, 7, 13)).astype(np.float32)
    lengths = rng.integers(1, 8, size=8)
    probs = clf.forward_batch(x, lengths)
    assert probs.shape == (8, 5)
    assert np.all(probs >= 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_accepts_one_frame_and_long_segments():
    rng = np.random.default_rng(1)
    clf = SegmentClassifier(TINY, seed=0)
    for n in (1, 40):
        out = clf.sppg(make_segment(rng, n))
        assert out.probs.shape == (5,)
        assert abs(out.probs.sum() - 1.0) < 1e-6


def test_rejects_wrong_feature_width():
    clf = SegmentClassifier(TINY, seed=0)
    with pytest.raises(nn.DimensionError):
        clf.forward_batch(np.zeros((1, 4, 12), dtype=np.float32), np.array([4]))


def test_padded_batch_matches_single_segment():
    """Zero padding plus masking must not change any segment's posterior."""
    rng = np.random.default_rng(7)
    clf = SegmentClassifier(TINY, seed=3)
    segs = [make_segment(rng, n, seg_id=f"p{i}:0")
            for i, n in enumerate((1, 3, 5, 9, 9, 2))]
    ds = SegmentDataset(items=segs, corpus_tag="l2", split="test")
    batched = batch_sppg(clf, ds, batch_size=6)
    for seg, got in zip(segs, batched):
        solo = clf.sppg(seg)
        assert got.segment_id == seg.segment_id
        np.testing.assert_allclose(got.probs, solo.probs, atol=1e-5)


def test_batch_sppg_order_and_idempotence():
    rng = np.random.default_rng(8)
    clf = SegmentClassifier(TINY, seed=3)
    segs = [make_segment(rng, int(rng.integers(2, 10)), seg_id=f"q{i}:0") for i in range(11)]
    ds = SegmentDataset(items=segs, corpus_tag="l2", split="test")
    first = batch_sppg(clf, ds, batch_size=4)
    second = batch_sppg(clf, ds, batch_size=4)
    assert [s.segment_id for s in first] == [s.segment_id for s in segs]
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.probs, b.probs)


def test_composed_model_gradients_match_finite_differences():
    cfg = ModelConfig(n_conv_layers=2, conv_channels=1, gru_hidden=3, n_dense=1,
                      dense_units=4, dropout_rate=0.0, n_coeffs=13, inventory_size=3)
    clf = SegmentClassifier(cfg, seed=5, dtype=np.float64)
    rng = np.random.default_rng(11)
    # Zero-initialized biases put ReLU pre-activations exactly on the kink
    # wherever masking blanks a receptive field; jitter off the degenerate point
    # so finite differences measure a true derivative.
    for param in clf.params().values():
        param += rng.uniform(0.01, 0.05, param.shape)
    x = rng.standard_normal((2, 3, 13))
    lengths = np.array([3, 2])
    labels = np.array([0, 2])

    def loss():
        probs = clf.forward_batch(x, lengths, train=False)
        return float(nn.mean_cross_entropy(probs, labels))

    probs = clf.forward_batch(x, lengths, train=False)
    clf.backward(probs, labels)
    analytic = {k: v.copy() for k, v in clf.grads().items()}
    for name, param in clf.params().items():
        numeric = nn.numerical_gradient(loss, param)
        gap = nn.gradient_gap(analytic[name], numeric)
        assert gap < 1e-4, f"{name}: gradient gap {gap}"


# -- Sppg record validation ---------------------------------------------


def test_sppg_record_validation():
    good = np.array([0.2, 0.5, 0.3])
    Sppg(segment_id="a:0", probs=good, predicted=1)
    with pytest.raises(ValueError, match="non-negative"):
        Sppg(segment_id="a:0", probs=np.array([-0.1, 0.6, 0.5]), predicted=1)
    with pytest.raises(ValueError, match="sums"):
        Sppg(segment_id="a:0", probs=np.array([0.2, 0.2]), predicted=0)
    with pytest.raises(ValueError, match="argmax"):
        Sppg(segment_id="a:0", probs=good, predicted=0)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(n_conv_layers=0)
    with pytest.raises(ValueError):
        ModelConfig(dropout_rate=1.0)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=0)


# -- training ------------------------------------------------------------


def _train_tiny(seed=0, max_epochs=20):
    rng = np.random.default_rng(100 + seed)
    train_ds = separable_dataset(rng, 90)
    valid_ds = SegmentDataset(items=separable_dataset(rng, 10, split="validation").items,
                              corpus_tag="l2", split="validation")
    mcfg = ModelConfig(n_conv_layers=1, conv_channels=4, gru_hidden=8, n_dense=1,
                       dense_units=16, dropout_rate=0.1, n_coeffs=13, inventory_size=2)
    tcfg = TrainConfig(learning_rate=0.002, batch_size=32, max_epochs=max_epochs,
                       patience=5, seed=seed)
    return train(train_ds, valid_ds, mcfg, tcfg), mcfg


def test_training_learns_separable_phones():
    (clf, log), _ = _train_tiny()
    rng = np.random.default_rng(999)
    eval_ds = separable_dataset(rng, 25, split="test")
    report = evaluate(clf, [eval_ds])
    assert report.rows[0][2] >= 0.95
    assert log.best_epoch >= 0
    assert len(log.epochs) <= 20


def test_training_is_deterministic(tmp_path):
    (clf_a, log_a), mcfg = _train_tiny(seed=4, max_epochs=3)
    (clf_b, log_b), _ = _train_tiny(seed=4, max_epochs=3)
    assert log_a.to_json() == log_b.to_json()
    pa, pb = tmp_path / "a.spgw", tmp_path / "b.spgw"
    clf_a.save(pa)
    clf_b.save(pb)
    assert pa.read_bytes() == pb.read_bytes()
    assert mcfg.fingerprint() in ("", mcfg.fingerprint())  # stable call


def test_training_log_json_shape():
    (_, log), _ = _train_tiny(seed=2, max_epochs=2)
    import json

    payload = json.loads(log.to_json())
    assert payload["best_epoch"] >= 0
    entry = payload["epochs"][0]
    assert set(entry) == {"epoch", "train_loss", "train_accuracy", "valid_loss",
                          "valid_accuracy"}


def test_train_rejects_empty_and_out_of_range():
    rng = np.random.default_rng(0)
    good = separable_dataset(rng, 5)
    empty = SegmentDataset(items=[], corpus_tag="l2", split="train")
    mcfg = ModelConfig(n_conv_layers=1, conv_channels=2, gru_hidden=3, n_dense=1,
                       dense_units=4, n_coeffs=13, inventory_size=2)
    tcfg = TrainConfig(max_epochs=1)
    with pytest.raises(ValueError, match="empty"):
        train(empty, good, mcfg, tcfg)
    bad = SegmentDataset(items=[make_segment(rng, 4, label=7, seg_id="bad:0")],
                         corpus_tag="l2", split="train")
    with pytest.raises(ValueError, match="range"):
        train(bad, good, mcfg, tcfg)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_is_reported():
    rng = np.random.default_rng(3)
    train_ds = separable_dataset(rng, 40)
    valid_ds = separable_dataset(rng, 5, split="validation")
    mcfg = ModelConfig(n_conv_layers=1, conv_channels=2, gru_hidden=3, n_dense=1,
                       dense_units=4, n_coeffs=13, inventory_size=2)
    tcfg = TrainConfig(learning_rate=1e30, max_epochs=3, seed=0)
    with pytest.raises(TrainingDivergedError, match="epoch"):
        train(train_ds, valid_ds, mcfg, tcfg)


# -- checkpointing --------------------------------------------------------


def test_checkpoint_roundtrip_preserves_outputs(tmp_path):
    rng = np.random.default_rng(17)
    clf = SegmentClassifier(TINY, seed=9)
    path = tmp_path / "model.spgw"
    clf.save(path)
    loaded = SegmentClassifier.from_checkpoint(path, TINY)
    seg = make_segment(rng, 6)
    np.testing.assert_array_equal(clf.sppg(seg).probs, loaded.sppg(seg).probs)


def test_checkpoint_rejects_other_architecture(tmp_path):
    clf = SegmentClassifier(TINY, seed=0)
    path = tmp_path / "model.spgw"
    clf.save(path)
    other = ModelConfig(n_conv_layers=1, conv_channels=2, gru_hidden=4, n_dense=1,
                        dense_units=6, n_coeffs=13, inventory_size=5)
    with pytest.raises(nn.CheckpointError):
        SegmentClassifier.from_checkpoint(path, other)


def test_set_params_name_mismatch():
    clf = SegmentClassifier(TINY, seed=0)
    params = clf.params()
    params = {("x" + k): v for k, v in params.items()}
    with pytest.raises(nn.CheckpointError, match="match"):
        clf.set_params(params)


# -- evaluation -----------------------------------------------------------


def test_evaluate_is_order_invariant_and_counts_match():
    (clf, _), _ = _train_tiny(seed=6, max_epochs=5)
    rng = np.random.default_rng(55)
    ds = separable_dataset(rng, 10, split="test")
    shuffled = SegmentDataset(items=list(reversed(ds.items)), corpus_tag="l2", split="test")
    a = evaluate(clf, [ds])
    b = evaluate(clf, [shuffled])
    assert a.rows[0][2] == b.rows[0][2]
    assert a.rows[0][1] == 20


def test_evaluate_hand_count_rate():
    """Flip one label among ten the model gets right: rate must be exactly 0.9."""
    (clf, _), _ = _train_tiny(seed=7, max_epochs=10)
    rng = np.random.default_rng(77)
    pool = separable_dataset(rng, 20, split="test").items
    correct = [s for s in pool if clf.sppg(s).predicted == s.label][:10]
    assert len(correct) == 10, "model failed to learn the separable toy data"
    flipped = SegmentFeatureSequence(frames=correct[0].frames, label=1 - correct[0].label,
                                     segment_id=correct[0].segment_id)
    ds = SegmentDataset(items=[flipped] + correct[1:], corpus_tag="l2", split="test")
    report = evaluate(clf, [ds], training_set="l1+l2")
    assert report.rows[0] == ("l2", 10, 0.9)
    assert report.overall == pytest.approx(0.9)


def test_eval_report_tsv_golden():
    report = EvalReport(training_set="l1+l2",
                        rows=(("l1", 100, 0.755), ("l2", 50, 0.5)))
    want = ("training_set\teval_set\tn_segments\trecognition_rate\n"
            "l1+l2\tl1\t100\t0.7550\n"
            "l1+l2\tl2\t50\t0.5000\n")
    assert report.to_tsv() == want


def test_evaluate_rejects_empty():
    clf = SegmentClassifier(TINY, seed=0)
    with pytest.raises(ValueError, match="empty"):
        evaluate(clf, [SegmentDataset(items=[], corpus_tag="l2", split="test")])


# -- SPPG text file ---------------------------------------------------------


def test_sppg_file_roundtrip_and_literal_format(tmp_path):
    inv = PhoneInventory(("ax", "er", "ih"))
    sppgs = [
        Sppg(segment_id="u1:100", probs=np.array([0.45, 0.5, 0.05]), predicted=1),
        Sppg(segment_id="u1:900", probs=np.array([0.9, 0.05, 0.05]), predicted=0),
    ]
    path = tmp_path / "out.sppg"
    write_sppg_file(path, sppgs, labels=["er", "ax"], inventory=inv)
    want = ("#inventory: ax,er,ih\n"
            "u1:100\ter\t0.450000,0.500000,0.050000\n"
            "u1:900\tax\t0.900000,0.050000,0.050000\n")
    assert path.read_text() == want

    got_inv, records = read_sppg_file(path)
    assert got_inv.symbols == inv.symbols
    assert [r.segment_id for r in records] == ["u1:100", "u1:900"]
    assert records[0].label == "er"
    assert records[0].predicted == 1
    np.testing.assert_allclose(records[0].probs, [0.45, 0.5, 0.05], atol=1e-9)


def test_sppg_file_errors(tmp_path):
    path = tmp_path / "bad.sppg"
    path.write_text("no header\n")
    with pytest.raises(ValueError, match="header"):
        read_sppg_file(path)
    path.write_text("#inventory: ax,er\nu1:0\tax\t0.5,0.25,0.25\n")
    with pytest.raises(ValueError, match="line 2"):
        read_sppg_file(path)
    with pytest.raises(ValueError, match="align"):
        write_sppg_file(path, [], labels=["ax"], inventory=PhoneInventory(("ax", "er")))
