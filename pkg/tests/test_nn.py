import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from censhap.data import Dataset, FeatureSchema, FeatureSpec
from censhap.errors import ConfigError, DataError, NumericError
from censhap.nn import (
    Network,
    NetworkConfig,
    TrainConfig,
    _flat_params,
    _loss_rows,
    gradients,
    load,
    poisson_deviance,
    save,
    train,
    train_arrays,
)


def zeroed(config, seed=0):
    net = Network.init(config, seed)
    for w in net.weights:
        w[:] = 0.0
    for b in net.biases:
        b[:] = 0.0
    return net


class TestForward:
    def test_zero_weights_exp_gives_one(self):
        net = zeroed(NetworkConfig(2, (3,), (4,), output="exp"))
        assert net.forward(np.array([1.7, -2.0]), np.array([2])) == 1.0

    def test_zero_weights_identity_gives_zero(self):
        net = zeroed(NetworkConfig(2, (), (4,), output="identity"))
        assert net.forward(np.array([1.7, -2.0]), np.zeros(0, dtype=int)) == 0.0

    def test_hand_computed_tanh_chain(self):
        # tiny fixed net, expectation written out independently
        cfg = NetworkConfig(2, (), (2,), output="identity")
        net = zeroed(cfg)
        net.weights[0][:] = np.array([[0.5, -1.0], [0.25, 0.75]])
        net.biases[0][:] = np.array([0.1, -0.2])
        net.weights[1][:] = np.array([[2.0], [-3.0]])
        net.biases[1][:] = np.array([0.05])
        x = np.array([1.0, 2.0])
        h = np.tanh(np.array([0.5 * 1 + 0.25 * 2 + 0.1, -1.0 * 1 + 0.75 * 2 - 0.2]))
        want = 2.0 * h[0] - 3.0 * h[1] + 0.05
        assert net.forward(x, np.zeros(0, dtype=int)) == pytest.approx(want, rel=1e-15)

    def test_embedding_lookup_feeds_input(self):
        cfg = NetworkConfig(0, (2,), (2,), output="identity", embedding_dim=2)
        net = zeroed(cfg)
        net.embeddings[0][:] = np.array([[1.0, 2.0], [3.0, 4.0]])
        net.weights[0][:] = np.eye(2)
        net.weights[1][:] = np.array([[1.0], [1.0]])
        for level, want in ((0, np.tanh(1) + np.tanh(2)), (1, np.tanh(3) + np.tanh(4))):
            got = net.forward(np.zeros(0), np.array([level]))
            assert got == pytest.approx(want, rel=1e-15)

    def test_exp_output_strictly_positive(self):
        net = Network.init(NetworkConfig(3, (), (8, 8), output="exp"), seed=4)
        x = np.random.default_rng(0).normal(scale=20, size=(500, 3))
        assert np.all(net.predict(x, np.zeros((500, 0), dtype=int)) > 0)

    def test_invalid_level_index(self):
        net = Network.init(NetworkConfig(1, (3,), (4,)), seed=0)
        with pytest.raises(DataError, match="level index"):
            net.forward(np.array([0.0]), np.array([3]))

    def test_shape_mismatch(self):
        net = Network.init(NetworkConfig(2, (), (4,)), seed=0)
        with pytest.raises(DataError, match="continuous"):
            net.forward(np.array([0.0]), np.zeros(0, dtype=int))

    def test_mask_level_row_initialized_to_zero(self):
        cfg = NetworkConfig(1, (4, 2), (4,), extra_level=True)
        net = Network.init(cfg, seed=3)
        np.testing.assert_array_equal(net.embeddings[0][4], [0.0, 0.0])
        np.testing.assert_array_equal(net.embeddings[1][2], [0.0, 0.0])


class TestPoissonDeviance:
    def test_zero_count(self):
        assert poisson_deviance(0.0, 0.1, 1.0) == pytest.approx(0.2, abs=1e-15)

    def test_perfect_fit(self):
        assert poisson_deviance(3.0, 3.0, 5.0) == pytest.approx(0.0, abs=1e-15)

    def test_hand_value(self):
        want = 2 * (0.5 - 1 + math.log(2.0))
        assert poisson_deviance(1.0, 0.5, 1.0) == pytest.approx(want, rel=1e-15)

    def test_mu_must_be_positive(self):
        with pytest.raises(NumericError):
            poisson_deviance(1.0, 0.0, 1.0)

    @given(
        st.floats(min_value=0.0, max_value=50.0),
        st.floats(min_value=1e-3, max_value=50.0),
        st.floats(min_value=1e-3, max_value=10.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_nonnegative_and_zero_iff_equal(self, y, mu, v):
        d = float(poisson_deviance(y, mu, v))
        assert d >= 0.0
        # strict positivity is asserted only where the true deviance sits
        # clearly above float cancellation noise (~1e-16 * magnitude)
        if abs(y - mu) > 1e-6 * max(1.0, y, mu):
            assert d > 0.0
        if y == mu:
            assert d == 0.0

    def test_exposure_scales_linearly(self):
        assert poisson_deviance(1.0, 0.5, 3.0) == pytest.approx(
            3.0 * poisson_deviance(1.0, 0.5, 1.0), rel=1e-15
        )


class TestGradients:
    def test_zero_gradient_at_stationary_point(self):
        # constant net, squared error with targets equal to the output
        net = zeroed(NetworkConfig(2, (), (3,), output="identity"))
        x = np.random.default_rng(1).normal(size=(5, 2))
        g = gradients(net, x, np.zeros((5, 0), dtype=int), np.zeros(5), 1.0, "squared")
        for arr in [*g.weights, *g.biases]:
            np.testing.assert_allclose(arr, 0.0, atol=1e-15)

    def test_absent_level_has_zero_gradient(self):
        net = Network.init(NetworkConfig(1, (3,), (4,)), seed=2)
        x = np.array([[0.5], [1.0]])
        cat = np.array([[0], [2]])  # level 1 never appears
        g = gradients(net, x, cat, np.ones(2), 1.0, "squared")
        np.testing.assert_array_equal(g.embeddings[0][1], [0.0, 0.0])
        assert np.any(g.embeddings[0][0] != 0.0)

    @pytest.mark.parametrize("cfg,loss", [
        (NetworkConfig(2, (3, 2), (4, 3), output="exp", embedding_dim=2, extra_level=True), "squared"),
        (NetworkConfig(3, (), (4,), output="identity"), "squared"),
        (NetworkConfig(2, (4,), (4, 4), output="exp"), "poisson"),
    ])
    def test_matches_central_differences(self, cfg, loss):
        rng = np.random.default_rng(12)
        net = Network.init(cfg, seed=12)
        n = 6
        x = rng.normal(size=(n, cfg.n_continuous))
        if cfg.cat_levels:
            cat = np.column_stack([rng.integers(0, r, size=n) for r in cfg.table_rows])
        else:
            cat = np.zeros((n, 0), dtype=int)
        y = np.abs(rng.normal(size=n)) + 0.1
        w = np.abs(rng.normal(size=n)) + 0.5
        g = gradients(net, x, cat, y, w, loss)
        flat = [*g.embeddings, *g.weights, *g.biases]
        h = 1e-5
        for p, gp in zip(_flat_params(net), flat):
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + h
                up = float(np.mean(_loss_rows(loss, y, net.predict(x, cat), w)))
                p[idx] = orig - h
                dn = float(np.mean(_loss_rows(loss, y, net.predict(x, cat), w)))
                p[idx] = orig
                fd = (up - dn) / (2 * h)
                assert abs(gp[idx] - fd) <= 1e-5 * max(abs(gp[idx]), abs(fd), 1.0)

    def test_empty_batch_rejected(self):
        net = Network.init(NetworkConfig(1, (), (2,)), seed=0)
        with pytest.raises(NumericError):
            gradients(net, np.zeros((0, 1)), np.zeros((0, 0), dtype=int),
                      np.zeros(0), 1.0, "squared")


def linear_dataset(n=400, seed=3):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1))
    y = 2.0 + 1.5 * x[:, 0]
    schema = FeatureSchema((FeatureSpec("x1"),), response="y")
    return Dataset.from_raw(schema, x, np.zeros((n, 0), dtype=np.int64), y - y.min() + 0.1)


class TestTrain:
    def test_fits_linear_trend(self):
        ds = linear_dataset()
        cfg = TrainConfig(loss="squared", learning_rate=1e-2, batch_size=64,
                          max_epochs=500, patience=50, rng_seed=5)
        net = Network.init(NetworkConfig(1, (), (8,), output="identity"), seed=5)
        fitted, log = train(net, ds, cfg)
        rmse = float(np.sqrt(np.mean((fitted.predict_dataset(ds) - ds.response) ** 2)))
        assert rmse <= 0.05 * ds.response.std()
        assert log.best_epoch >= 0

    def test_deterministic_logs(self):
        ds = linear_dataset(n=200)
        cfg = TrainConfig(loss="squared", learning_rate=1e-2, batch_size=64,
                          max_epochs=20, patience=20, rng_seed=9)
        net = Network.init(NetworkConfig(1, (), (4,), output="identity"), seed=9)
        _, log1 = train(net, ds, cfg)
        _, log2 = train(net, ds, cfg)
        assert log1.train_loss == log2.train_loss
        assert log1.val_loss == log2.val_loss
        assert log1.best_epoch == log2.best_epoch

    def test_patience_one_returns_first_epoch_snapshot(self):
        # a huge learning rate makes the validation loss blow up after the
        # first epoch, so early stopping must hand back the epoch-1 weights
        ds = linear_dataset(n=200)
        net = Network.init(NetworkConfig(1, (), (4,), output="identity"), seed=9)
        one = TrainConfig(loss="squared", learning_rate=20.0, batch_size=32,
                          max_epochs=1, patience=1, rng_seed=9)
        many = TrainConfig(loss="squared", learning_rate=20.0, batch_size=32,
                           max_epochs=50, patience=1, rng_seed=9)
        net1, log1 = train(net, ds, one)
        net2, log2 = train(net, ds, many)
        assert log2.val_loss[1] >= log2.val_loss[0]  # rises on epoch 2
        assert log2.best_epoch == 0
        probe = np.linspace(-2, 2, 17)[:, None]
        np.testing.assert_array_equal(
            net1.predict(probe, np.zeros((17, 0), dtype=int)),
            net2.predict(probe, np.zeros((17, 0), dtype=int)),
        )

    def test_first_epoch_decreases_training_loss(self):
        ds = linear_dataset(n=300, seed=11)
        net = Network.init(NetworkConfig(1, (), (6,), output="identity"), seed=11)
        before = float(np.mean((net.predict_dataset(ds) - ds.response) ** 2))
        cfg = TrainConfig(loss="squared", learning_rate=1e-3, batch_size=32,
                          max_epochs=1, patience=1, rng_seed=11)
        _, log = train(net, ds, cfg)
        assert log.train_loss[0] < before

    def test_returned_network_matches_best_epoch(self):
        ds = linear_dataset(n=200)
        cfg = TrainConfig(loss="squared", learning_rate=3e-2, batch_size=32,
                          max_epochs=30, patience=30, rng_seed=2)
        net = Network.init(NetworkConfig(1, (), (4,), output="identity"), seed=2)
        fitted, log = train(net, ds, cfg)
        assert min(log.val_loss) == log.val_loss[log.best_epoch]

    def test_warm_start_shape_mismatch_is_error(self):
        ds = linear_dataset(n=50)
        cfg = TrainConfig(loss="squared", max_epochs=1, rng_seed=0)
        net = Network.init(NetworkConfig(1, (), (4,), output="identity"), seed=0)
        other = Network.init(NetworkConfig(1, (), (5,), output="identity"), seed=0)
        with pytest.raises(ConfigError):
            train(net, ds, cfg, init=other)

    def test_poisson_training_on_rates(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(3000, 1))
        rate = np.exp(0.2 + 0.5 * x[:, 0])
        y = rng.poisson(rate).astype(float)
        schema = FeatureSchema((FeatureSpec("x1"),), response="y")
        ds = Dataset.from_raw(schema, x, np.zeros((3000, 0), dtype=np.int64), y)
        net = Network.init(NetworkConfig(1, (), (8,), output="exp"), seed=8)
        cfg = TrainConfig(loss="poisson", learning_rate=5e-3, batch_size=128,
                          max_epochs=150, patience=15, rng_seed=8)
        fitted, _ = train(net, ds, cfg)
        pred = fitted.predict_dataset(ds)
        assert np.sqrt(np.mean((pred - rate) ** 2)) < 0.15

    def test_nonfinite_loss_names_epoch(self):
        ds = linear_dataset(n=100)
        big = Dataset.from_raw(ds.schema, ds.destandardize(ds.continuous) * 1e150,
                               ds.categorical, ds.response)
        cfg = TrainConfig(loss="squared", learning_rate=1e300, batch_size=16,
                          max_epochs=5, patience=5, rng_seed=0)
        net = Network.init(NetworkConfig(1, (), (4,), output="identity"), seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericError, match="epoch"):
                train_arrays(net, big.continuous * 1e160, big.categorical,
                             big.response * 1e160, np.ones(big.n), cfg)


class TestSaveLoad:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg = NetworkConfig(2, (3,), (6, 4), output="exp", embedding_dim=2, extra_level=True)
        net = Network.init(cfg, seed=6)
        p = tmp_path / "model.json"
        save(net, p, meta={"note": "fixture"})
        back, meta = load(p)
        assert meta["note"] == "fixture"
        assert back.config == cfg
        rng = np.random.default_rng(0)
        x = rng.normal(size=(100, 2))
        cat = rng.integers(0, 4, size=(100, 1))
        np.testing.assert_array_equal(net.predict(x, cat), back.predict(x, cat))

    def test_truncated_file(self, tmp_path):
        net = Network.init(NetworkConfig(1, (), (3,)), seed=0)
        p = tmp_path / "model.json"
        save(net, p)
        p.write_text(p.read_text()[: p.stat().st_size // 2])
        with pytest.raises(DataError, match="corrupt"):
            load(p)

    def test_future_version_rejected(self, tmp_path):
        import json

        net = Network.init(NetworkConfig(1, (), (3,)), seed=0)
        p = tmp_path / "model.json"
        save(net, p)
        doc = json.loads(p.read_text())
        doc["version"] = 99
        p.write_text(json.dumps(doc))
        with pytest.raises(DataError, match="version 99"):
            load(p)

    def test_wrong_format_rejected(self, tmp_path):
        p = tmp_path / "model.json"
        p.write_text('{"format": "something-else"}')
        with pytest.raises(DataError):
            load(p)
