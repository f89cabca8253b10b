"""End-to-end smoke tests for the python bindings."""

import math

import numpy as np
import pytest

import ssnet


@pytest.fixture(scope="module")
def synth_pool():
    pool = ssnet.generate_synthetic(
        ["W", "N3", "REM"], n_per_class=12, n_channels=2, sample_rate_hz=100.0,
        noise_sigma=0.05, seed=7)
    return ssnet.map_labels(ssnet.zscore(pool), "three")


def test_synthetic_shapes_and_labels(synth_pool):
    assert len(synth_pool) == 36
    x = synth_pool.samples()
    assert x.shape == (36, 2, 3000)
    assert x.dtype == np.float32
    labels = synth_pool.labels()
    assert sorted(set(labels.tolist())) == [0, 1, 2]
    assert synth_pool.class_names == ["W", "NREM", "REM"]
    assert synth_pool.normalized


def test_zscore_contract(synth_pool):
    x = synth_pool.samples().astype(np.float64)
    means = x.mean(axis=2)
    stds = x.std(axis=2)
    assert np.abs(means).max() < 1e-6
    assert np.abs(stds - 1.0).max() < 1e-6


def test_split_partition(synth_pool):
    train, val, test = ssnet.split(synth_pool, seed=3)
    assert len(train) + len(val) + len(test) == len(synth_pool)
    ids = set(train.provenance()) | set(val.provenance()) | set(test.provenance())
    assert len(ids) == len(synth_pool)


def test_shard_round_trip(tmp_path, synth_pool):
    ssnet.export_shards(synth_pool, str(tmp_path / "pool"))
    back = ssnet.import_shards(str(tmp_path / "pool"))
    assert len(back) == len(synth_pool)
    np.testing.assert_array_equal(back.samples(), synth_pool.samples())
    np.testing.assert_array_equal(back.labels(), synth_pool.labels())


def test_model_shapes_and_training(synth_pool):
    cfg = ssnet.SSNetConfig(n_channels=2, epoch_len=3000, n_classes=3,
                            cnn_maps=[4, 3], cnn_kernels=[3, 3], lstm_sizes=[6, 4])
    model = ssnet.SSNet.build(cfg, init_seed=1)
    x = synth_pool.samples()[:5]
    logits = model.forward(x)
    assert logits.shape == (5, 3)
    classes, probs = model.predict(x)
    assert classes.shape == (5,)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    train, val, test = ssnet.split(synth_pool, seed=3)
    # final short batch of 1 would trip batchnorm; 25 train epochs -> batch 5
    hyper = ssnet.HyperParams(batch_size=5, max_epochs=2, seed=5)
    history = ssnet.train(model, train, val, hyper)
    assert len(history["train_loss"]) == 2
    result = ssnet.evaluate(model, test)
    assert 0.0 <= result["accuracy"] <= 1.0


def test_model_save_load_round_trip(tmp_path, synth_pool):
    cfg = ssnet.SSNetConfig(n_channels=2, epoch_len=3000, n_classes=3,
                            cnn_maps=[4, 3], cnn_kernels=[3, 3], lstm_sizes=[6, 4])
    model = ssnet.SSNet.build(cfg, init_seed=9)
    path = str(tmp_path / "model.ckpt")
    model.save(path)
    loaded = ssnet.SSNet.load(path)
    x = synth_pool.samples()[:3]
    np.testing.assert_array_equal(model.forward(x), loaded.forward(x))


def test_default_config_feature_widths():
    cfg = ssnet.SSNetConfig()
    assert cfg.shape_chain == [1000, 333, 111, 37, 12]
    assert cfg.flat_width == 120
    assert cfg.concat_width == 140


def test_metrics_worked_example():
    # TP=50 TN=30 FP=10 FN=10 arranged as a 2-class problem
    labels = [0] * 60 + [1] * 40
    preds = [0] * 50 + [1] * 10 + [0] * 10 + [1] * 30
    report = ssnet.classification_report(preds, labels, 2, ["pos", "neg"])
    row = report["rows"][0]
    assert math.isclose(row["kappa"], 175.0 / 3.0, abs_tol=1e-9)
    assert math.isclose(row["sensitivity"], 250.0 / 3.0, abs_tol=1e-9)
    assert math.isclose(row["accuracy"], 80.0, abs_tol=1e-9)


def test_edf_round_trip_via_synth(tmp_path, synth_pool):
    pool = ssnet.generate_synthetic(["W"], n_per_class=1, n_channels=1,
                                    sample_rate_hz=100.0, noise_sigma=0.0, seed=1)
    x = pool.samples()[0, 0]
    # wrap the trace in a recording via numpy -> EpochSet is already covered;
    # here check the gradcheck surface instead (cheap seeds)
    results = ssnet.run_gradchecks(seeds=2)
    assert all(r["pass"] for r in results)
    assert {r["layer"] for r in results} >= {"conv1d", "lstm_cell", "dense"}
    assert x.shape == (3000,)


def test_error_types():
    with pytest.raises(ssnet.DataError):
        ssnet.import_shards("/nonexistent/shards")
    with pytest.raises(Exception):
        ssnet.SSNetConfig(epoch_len=10)  # below the pooling minimum
