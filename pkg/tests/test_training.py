"""Training machinery: init, Adam, checkpoints, metrics, gradient checks."""

import os

import numpy as np
import numpy.testing as npt
import pytest

import helpers
from stn import decoder, glyphlang, training
from stn.config import ModelConfig
from stn.errors import NonFiniteLoss
from stn.params import build_store, load_checkpoint, save_checkpoint


def toy_config(variant="stnr"):
    return ModelConfig(variant=variant, canvas_w=8, canvas_h=4)


def test_glorot_bounds_64x64():
    store = build_store(ModelConfig(variant="stnr"), seed=5)
    w = store.groups["history"]["h_wh"]    # 64 x 192: per-matrix fan bound
    bound = np.sqrt(6.0 / (64 + 192))
    assert np.all(np.abs(w) <= bound)
    w2 = store.groups["head"]["d1_w"]      # 99 x 64
    assert np.all(np.abs(w2) <= np.sqrt(6.0 / (99 + 64)))
    # biases zero, norm scales one
    npt.assert_array_equal(store.groups["head"]["d1_b"], 0.0)
    npt.assert_array_equal(store.groups["encoder"]["c1_g"], 1.0)
    npt.assert_array_equal(store.groups["encoder"]["c1_o"], 0.0)


def test_glorot_deterministic_and_centered():
    a = build_store(ModelConfig(variant="stnr"), seed=7)
    b = build_store(ModelConfig(variant="stnr"), seed=7)
    for (ka, arr_a), (kb, arr_b) in zip(a._arrays(), b._arrays()):
        assert ka == kb
        npt.assert_array_equal(arr_a, arr_b)
    big = a.groups["value"]["v1_w"]        # 99 x 128 = 12672 entries
    bound = np.sqrt(6.0 / (99 + 128))
    se = bound / np.sqrt(3.0 * big.size)
    assert abs(big.mean()) <= 3 * se


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    store = build_store(toy_config(), seed=3)
    # dirty every moving part
    store.adam_step({("head", "d1_w"): np.ones_like(store.groups["head"]["d1_w"])},
                    lr=1e-3)
    store.freeze("encoder")
    store.stats["c1_mean"] += 0.25
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(path, store, extra_config={"note": "x"})
    loaded, config = load_checkpoint(path)
    assert config["note"] == "x"
    assert loaded.config == store.config
    assert loaded.frozen == store.frozen
    assert loaded.step == store.step
    for (k, a), (_, b) in zip(store._arrays(), loaded._arrays()):
        npt.assert_array_equal(a, b)
        npt.assert_array_equal(store.m[k], loaded.m[k])
        npt.assert_array_equal(store.v[k], loaded.v[k])
    for name in store.stats:
        npt.assert_array_equal(store.stats[name], loaded.stats[name])


def test_checkpoint_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE....")
    with pytest.raises(ValueError):
        load_checkpoint(str(path))


def test_edit_distance_and_token_accuracy():
    assert training.edit_distance([1, 2, 3], [1, 2, 3]) == 0
    assert training.edit_distance([], [1, 2]) == 2
    assert training.edit_distance([1, 2, 3, 4], [1, 3, 4]) == 1
    seq = list(range(10))
    sub = seq.copy()
    sub[4] = 99
    assert training.token_accuracy(sub, seq) == 0.9
    assert training.token_accuracy([], seq) == 0.0
    assert training.token_accuracy(seq, seq) == 1.0
    assert training.token_accuracy([], []) == 1.0


def small_pairs(n=24, seed=1):
    return helpers.tiny_dataset(n, seed=seed)


def test_train_determinism(tmp_path):
    pairs = small_pairs()
    cfg = training.TrainConfig(variant="stnm", epochs=2, seed=9, batch_size=8)
    runs = []
    for tag in ("a", "b"):
        path = str(tmp_path / ("m_%s.csv" % tag))
        store, rows = training.train_supervised(cfg, pairs, metrics_path=path)
        runs.append((store, rows, open(path).read()))
    assert runs[0][2] == runs[1][2]
    for (_, a), (_, b) in zip(runs[0][0]._arrays(), runs[1][0]._arrays()):
        npt.assert_array_equal(a, b)


def test_metrics_csv_header(tmp_path):
    pairs = small_pairs(12)
    cfg = training.TrainConfig(variant="stnm", epochs=1, seed=0, batch_size=8)
    path = str(tmp_path / "metrics.csv")
    training.train_supervised(cfg, pairs, metrics_path=path)
    lines = open(path).read().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_token_acc"
    assert len(lines) == 2


def test_regularizer_additive_and_weights_only():
    pairs = small_pairs(16)
    images = np.stack([p[0] for p in pairs])
    targets = [list(p[1]) + [glyphlang.END_ID] for p in pairs]

    totals, token_losses, stores = [], [], []
    for l2 in (0.0, 1e-5):
        store = build_store(ModelConfig(variant="stnm"), seed=4)
        weight_sq = sum(float((w * w).sum())
                        for g in training.PIPELINE_GROUPS
                        for w in store.groups[g].values() if w.ndim >= 2)
        cfg = training.TrainConfig(variant="stnm", l2=l2)
        total, token = training.supervised_batch_step(store, images, targets,
                                                      cfg)
        totals.append(total)
        token_losses.append(token)
        stores.append((store, weight_sq))
    assert token_losses[0] == token_losses[1]
    npt.assert_allclose(totals[1] - totals[0], 1e-5 * stores[1][1], rtol=1e-10)


def test_regularizer_never_touches_biases():
    # a pure-bias perturbation must leave the penalty unchanged for any l2
    store = build_store(ModelConfig(variant="stnm"), seed=4)
    tensors = decoder.model_tensors(store, train_groups=())
    grads = {}
    reg1 = training._regularize(store, tensors, grads, 1e-3)
    store.groups["head"]["d2_b"] += 5.0
    store.groups["encoder"]["c1_o"] += 3.0
    reg2 = training._regularize(store, tensors, grads, 1e-3)
    assert reg1 == reg2


def test_freezing_all_groups_is_a_no_op():
    pairs = small_pairs(16)
    store = build_store(ModelConfig(variant="stnr"), seed=8)
    for g in store.groups:
        store.freeze(g)
    before = {k: a.copy() for k, a in store._arrays()}
    cfg = training.TrainConfig(variant="stnr", epochs=1, batch_size=8)
    training.train_supervised(cfg, pairs, store=store)
    for k, arr in store._arrays():
        npt.assert_array_equal(arr, before[k])


def test_training_loss_decreases_on_memorizable_set():
    pairs = helpers.tiny_dataset(50, seed=3)
    cfg = training.TrainConfig(variant="stnm", epochs=5, seed=1)
    _, rows = training.train_supervised(cfg, pairs)
    losses = [r["train_loss"] for r in rows]
    assert losses[1] < losses[0] and losses[2] < losses[1]


def test_non_finite_loss_aborts_with_batch_index():
    pairs = small_pairs(16)
    store = build_store(ModelConfig(variant="stnm"), seed=2)
    store.groups["head"]["d2_b"][0] = np.nan   # nan logit -> nan loss
    before = store.groups["head"]["d1_w"].copy()
    cfg = training.TrainConfig(variant="stnm", epochs=1, batch_size=8)
    with pytest.raises(NonFiniteLoss) as err:
        training.train_supervised(cfg, pairs, store=store)
    assert err.value.batch_index == 0
    npt.assert_array_equal(store.groups["head"]["d1_w"], before)  # no update


def test_evaluate_accuracy_workers_match():
    pairs = small_pairs(20)
    store = build_store(ModelConfig(variant="stnm"), seed=6)
    seq1 = training.evaluate_accuracy(store, pairs, workers=1, chunk=8)
    seq2 = training.evaluate_accuracy(store, pairs, workers=3, chunk=8)
    assert seq1 == seq2


def test_gradient_check_passes():
    report = training.gradient_check(tolerance=1e-4, seed=0)
    names = {name for name, _, _ in report}
    assert {"stnm/encoder", "stnm/control", "stnr/control", "stnr/history",
            "stnr/head", "value"} <= names
    for name, max_rel, ok in report:
        assert ok, "%s failed at %.3e" % (name, max_rel)


def test_fd_compare_detects_sign_flip():
    rng = np.random.default_rng(0)
    arr = rng.standard_normal(8)
    coeff = rng.standard_normal(8)

    def evaluate():
        return float(arr @ coeff)

    wrong = -coeff    # sign-flipped analytic gradient
    max_rel, ok = training._fd_compare(wrong, arr, evaluate,
                                       np.random.default_rng(1), 1e-4)
    assert not ok and abs(max_rel - 2.0) < 1e-3


def test_fd_compare_zero_gradients_use_absolute_threshold():
    arr = np.zeros(5)

    def evaluate():
        return 1.0   # constant: every gradient is exactly zero

    max_rel, ok = training._fd_compare(np.zeros(5), arr, evaluate,
                                       np.random.default_rng(2), 1e-4)
    assert ok and max_rel == 0.0
