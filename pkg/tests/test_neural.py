"""Neural machinery: activations, tied-weight autoencoders, gradients,
training behaviour, and checkpoint round trips."""

import numpy as np
import pytest

from routecast.errors import ConfigError, DivergenceError, FormatError, ShapeError
from routecast.neural import (
    DenseLayer,
    FeedForwardNet,
    TrainConfig,
    build_pnn,
    build_sdae,
    classify,
    corrupt,
    dae_apply,
    dae_loss_and_grads,
    dae_train,
    fine_tune,
    init_layer,
    load_network,
    mse_and_grads,
    new_dae,
    nll_and_grads,
    pnn3_predict,
    pnn3_train,
    save_network,
    sdae_pretrain,
    sigmoid,
    softmax,
)


def numeric_gradient(f, arr, h=1e-6):
    """Central finite differences of a scalar function over an array in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


class TestSigmoid:
    def test_reference_values(self):
        assert float(sigmoid(np.array(0.0))) == 0.5
        assert float(sigmoid(np.array(np.log(3.0)))) == pytest.approx(0.75, rel=1e-12)

    def test_complement_identity(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-50, 50, size=1000)
        np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-12)

    def test_extreme_inputs_stable(self):
        out = sigmoid(np.array([-700.0, 700.0]))
        assert np.all(np.isfinite(out))
        assert out[0] >= 0.0 and out[1] <= 1.0


class TestSoftmax:
    def test_uniform_on_zero_logits(self):
        p = softmax(np.zeros((1, 8)))
        np.testing.assert_allclose(p, 0.125)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        p = softmax(rng.normal(scale=50.0, size=(100, 8)))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p >= 0.0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(7)
        z = rng.normal(size=(50, 8))
        shifted = z + rng.uniform(-100, 100, size=(50, 1))
        np.testing.assert_allclose(softmax(z), softmax(shifted), atol=1e-12)
        assert np.array_equal(np.argmax(softmax(z), 1), np.argmax(softmax(shifted), 1))


class TestCorrupt:
    def test_zero_fraction_identity(self):
        rng = np.random.default_rng(9)
        x = rng.random((5, 10))
        assert np.array_equal(corrupt(x, 0.0, rng), x)

    def test_full_fraction_zeroes_everything(self):
        rng = np.random.default_rng(9)
        x = rng.random((5, 10)) + 1.0
        assert np.all(corrupt(x, 1.0, rng) == 0.0)

    def test_exact_count_per_row(self):
        rng = np.random.default_rng(11)
        x = rng.random((50, 10)) + 1.0
        out = corrupt(x, 0.3, rng)
        assert np.all((out == 0.0).sum(axis=1) == 3)

    def test_count_rounds_half_away_from_zero(self):
        rng = np.random.default_rng(13)
        x = rng.random((20, 10)) + 1.0
        assert np.all((corrupt(x, 0.25, rng) == 0.0).sum(axis=1) == 3)

    def test_untouched_entries_preserved(self):
        rng = np.random.default_rng(15)
        x = rng.random((5, 10)) + 1.0
        out = corrupt(x, 0.3, rng)
        mask = out != 0.0
        assert np.array_equal(out[mask], x[mask])


class TestDaeApply:
    def test_zero_weights_give_half(self):
        dae = new_dae(6, 4, 0.2, np.random.default_rng(0))
        dae.encoder.W[:] = 0.0
        hidden, recon = dae_apply(dae, np.zeros((3, 6)))
        np.testing.assert_allclose(hidden, 0.5)
        np.testing.assert_allclose(recon, 0.5)

    def test_output_dimensions(self):
        dae = new_dae(7, 4, 0.2, np.random.default_rng(1))
        hidden, recon = dae_apply(dae, np.zeros((5, 7)))
        assert hidden.shape == (5, 4) and recon.shape == (5, 7)

    def test_matches_literal_formulas(self):
        """Independent transcription: s(Wx+b) then s(W'h+b') with W'=W^T."""
        rng = np.random.default_rng(17)
        dae = new_dae(6, 4, 0.2, rng)
        x = rng.random(6)
        hidden, recon = dae_apply(dae, x)
        h_expected = 1.0 / (1.0 + np.exp(-(dae.encoder.W @ x + dae.encoder.b)))
        r_expected = 1.0 / (1.0 + np.exp(-(dae.encoder.W.T @ h_expected + dae.b_dec)))
        np.testing.assert_allclose(hidden, h_expected, atol=1e-12)
        np.testing.assert_allclose(recon, r_expected, atol=1e-12)

    def test_shape_mismatch_raises(self):
        dae = new_dae(6, 4, 0.2, np.random.default_rng(2))
        with pytest.raises(ShapeError):
            dae.encode(np.zeros((3, 5)))

    def test_tied_weights_follow_encoder(self):
        """The decoder has no storage of its own: mutating W moves both."""
        dae = new_dae(4, 3, 0.2, np.random.default_rng(3))
        x = np.random.default_rng(4).random(4)
        before = dae_apply(dae, x)[1]
        dae.encoder.W += 0.5
        after = dae_apply(dae, x)[1]
        assert not np.allclose(before, after)


class TestDaeGradients:
    def test_matches_finite_differences(self):
        """Tied-weight reconstruction gradients vs central differences."""
        rng = np.random.default_rng(19)
        for trial in range(20):
            d_in = int(rng.integers(3, 9))
            d_hidden = int(rng.integers(2, 10))
            dae = new_dae(d_in, d_hidden, 0.3, rng)
            x = rng.random((4, d_in))
            xc = corrupt(x, 0.3, rng)
            _, grads = dae_loss_and_grads(dae, x, xc)
            loss_fn = lambda: dae_loss_and_grads(dae, x, xc)[0]
            for name, arr in (("W", dae.encoder.W), ("b", dae.encoder.b),
                              ("b_dec", dae.b_dec)):
                numeric = numeric_gradient(loss_fn, arr)
                assert relative_error(grads[name], numeric) < 1e-5


class TestDaeTraining:
    def test_zero_learning_rate_freezes_parameters(self):
        rng = np.random.default_rng(21)
        dae = new_dae(6, 4, 0.2, rng)
        w0 = dae.encoder.W.copy()
        cfg = TrainConfig(learning_rate=0.0, epochs=3, batch_size=4, rng_seed=0)
        dae_train(dae, rng.random((12, 6)), cfg)
        assert np.array_equal(dae.encoder.W, w0)

    def test_loss_decreases_on_fixture(self):
        rng = np.random.default_rng(23)
        x = rng.random((20, 8))
        dae = new_dae(8, 5, 0.2, np.random.default_rng(1))
        cfg = TrainConfig(learning_rate=0.1, epochs=50, batch_size=5, rng_seed=2)
        trace = dae_train(dae, x, cfg)
        assert len(trace) == 50
        assert trace[-1] < trace[0]

    def test_needs_samples(self):
        dae = new_dae(4, 3, 0.2, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            dae_train(dae, np.zeros((0, 4)), TrainConfig(epochs=1))


class TestPretraining:
    def test_single_layer_stack_reduces_to_dae_train(self):
        rng = np.random.default_rng(25)
        x = rng.random((16, 6))
        cfg = TrainConfig(learning_rate=0.05, pretrain_lr=0.08, epochs=5,
                          pretrain_epochs=7, batch_size=4, corruption=0.2, rng_seed=9)
        stack = build_sdae(6, hidden=(4,), n_classes=3, corruption=0.2, seed=1)
        reference = build_sdae(6, hidden=(4,), n_classes=3, corruption=0.2, seed=1)
        sdae_pretrain(stack, x, cfg)
        from dataclasses import replace
        layer_cfg = replace(cfg, epochs=cfg.pretrain_epochs, learning_rate=cfg.pretrain_lr)
        dae_train(reference.daes[0], x, layer_cfg,
                  rng=np.random.default_rng(cfg.rng_seed))
        assert np.array_equal(stack.daes[0].encoder.W, reference.daes[0].encoder.W)
        assert np.array_equal(stack.daes[0].b_dec, reference.daes[0].b_dec)

    def test_layer_two_sees_clean_encodings(self, monkeypatch):
        """The second layer's training inputs are layer one's clean encodings."""
        import routecast.neural as neural
        seen = []
        original = neural.dae_train

        def recording(dae, x, cfg, rng=None):
            seen.append(np.array(x, copy=True))
            return original(dae, x, cfg, rng=rng)

        monkeypatch.setattr(neural, "dae_train", recording)
        rng = np.random.default_rng(27)
        x = rng.random((10, 6))
        stack = build_sdae(6, hidden=(5, 4), n_classes=3, corruption=0.2, seed=2)
        cfg = TrainConfig(epochs=2, pretrain_epochs=3, batch_size=4, rng_seed=3)
        neural.sdae_pretrain(stack, x, cfg)
        assert len(seen) == 2
        np.testing.assert_array_equal(seen[0], x)
        np.testing.assert_array_equal(seen[1], stack.daes[0].encode(x))

    def test_inference_pass_is_deterministic(self):
        rng = np.random.default_rng(29)
        x = rng.random((12, 6))
        stack = build_sdae(6, hidden=(5, 4), n_classes=3, corruption=0.5, seed=4)
        sdae_pretrain(stack, x, TrainConfig(epochs=1, pretrain_epochs=2, batch_size=4, rng_seed=5))
        assert np.array_equal(stack.encode(x), stack.encode(x))


class TestClassify:
    def test_zero_logits_uniform(self):
        layer = DenseLayer(W=np.zeros((8, 5)), b=np.zeros(8), activation="softmax")
        probs, pred = classify(layer, np.ones((3, 5)))
        np.testing.assert_allclose(probs, 0.125)
        assert np.all(pred == 0)  # ties break to the lowest index

    def test_probabilities_normalized(self):
        rng = np.random.default_rng(31)
        net = build_sdae(6, hidden=(5,), n_classes=8, seed=6).network()
        probs, _ = classify(net, rng.random((40, 6)))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_requires_softmax_head(self):
        net = build_pnn(4, hidden=3, seed=0)
        with pytest.raises(ConfigError):
            classify(net, np.zeros((1, 4)))


class TestSupervisedGradients:
    def test_nll_matches_finite_differences(self):
        """End-to-end stacked-classifier NLL gradients vs central differences."""
        rng = np.random.default_rng(33)
        for trial in range(20):
            d_in = int(rng.integers(3, 8))
            widths = tuple(int(rng.integers(2, 10)) for _ in range(int(rng.integers(1, 4))))
            net = build_sdae(d_in, hidden=widths, n_classes=4, seed=trial).network()
            x = rng.random((5, d_in))
            y = rng.integers(0, 4, size=5)
            _, grads = nll_and_grads(net, x, y)
            loss_fn = lambda: nll_and_grads(net, x, y)[0]
            for k, layer in enumerate(net.layers):
                assert relative_error(grads[k][0], numeric_gradient(loss_fn, layer.W)) < 1e-5
                assert relative_error(grads[k][1], numeric_gradient(loss_fn, layer.b)) < 1e-5

    def test_mse_matches_finite_differences(self):
        rng = np.random.default_rng(35)
        for trial in range(20):
            d_in = int(rng.integers(3, 8))
            net = build_pnn(d_in, hidden=int(rng.integers(2, 10)), seed=trial)
            x = rng.random((6, d_in))
            y = rng.uniform(0, 5, size=6)
            _, grads = mse_and_grads(net, x, y)
            loss_fn = lambda: mse_and_grads(net, x, y)[0]
            for k, layer in enumerate(net.layers):
                assert relative_error(grads[k][0], numeric_gradient(loss_fn, layer.W)) < 1e-5
                assert relative_error(grads[k][1], numeric_gradient(loss_fn, layer.b)) < 1e-5

    def test_perfect_prediction_zero_nll(self):
        layer = DenseLayer(W=np.zeros((3, 2)), b=np.array([500.0, 0.0, 0.0]),
                           activation="softmax")
        net = FeedForwardNet(layers=[layer])
        nll, _ = nll_and_grads(net, np.ones((4, 2)), np.zeros(4, dtype=int))
        assert nll == pytest.approx(0.0, abs=1e-9)

    def test_uniform_predictor_nll(self):
        layer = DenseLayer(W=np.zeros((8, 3)), b=np.zeros(8), activation="softmax")
        net = FeedForwardNet(layers=[layer])
        n = 10
        nll, _ = nll_and_grads(net, np.ones((n, 3)), np.zeros(n, dtype=int))
        assert nll == pytest.approx(n * np.log(8.0), rel=1e-12)


class TestFineTuning:
    def make_data(self, rng, n=120, d=6):
        x = rng.random((n, d))
        y = (x[:, 0] + x[:, 1] > 1.0).astype(int)
        return x, y

    def test_learns_simple_rule(self):
        rng = np.random.default_rng(37)
        x, y = self.make_data(rng)
        stack = build_sdae(6, hidden=(8, 8), n_classes=2, corruption=0.1, seed=7)
        cfg = TrainConfig(learning_rate=0.3, epochs=60, pretrain_epochs=5,
                          batch_size=16, corruption=0.1, rng_seed=8)
        sdae_pretrain(stack, x, cfg)
        net, trace = fine_tune(stack, x, y, x[:30], y[:30], cfg)
        _, pred = classify(net, x)
        assert np.mean(pred == y) > 0.9
        assert len(trace.train_loss) == 60

    def test_best_validation_epoch_restored(self):
        rng = np.random.default_rng(39)
        x, y = self.make_data(rng)
        stack = build_sdae(6, hidden=(4,), n_classes=2, seed=9)
        cfg = TrainConfig(learning_rate=0.2, epochs=25, pretrain_epochs=0,
                          batch_size=16, rng_seed=10)
        net, trace = fine_tune(stack, x[:80], y[:80], x[80:], y[80:], cfg)
        best_val, _ = nll_and_grads(net, x[80:], y[80:])
        assert best_val == pytest.approx(min(trace.val_loss), rel=1e-9)
        assert trace.best_epoch == int(np.argmin(trace.val_loss)) + 1

    def test_divergence_reports_epoch(self):
        """A runaway step on the identity-output regressor must be caught.

        The sigmoid/softmax classifier path saturates instead of
        overflowing, so the regressor is the surface where divergence can
        actually occur.
        """
        rng = np.random.default_rng(41)
        x = rng.random((40, 6))
        y = rng.uniform(0, 5, size=40)
        net = build_pnn(6, hidden=4, seed=11)
        cfg = TrainConfig(learning_rate=1e9, epochs=5, batch_size=8, rng_seed=12)
        with pytest.raises(DivergenceError) as err:
            pnn3_train(net, x, y, None, None, cfg)
        assert err.value.epoch is not None

    def test_seeded_training_bitwise_reproducible(self):
        rng = np.random.default_rng(43)
        x, y = self.make_data(rng)
        nets = []
        for _ in range(2):
            stack = build_sdae(6, hidden=(5, 4), n_classes=2, corruption=0.2, seed=13)
            cfg = TrainConfig(learning_rate=0.1, epochs=8, pretrain_epochs=4,
                              batch_size=16, corruption=0.2, rng_seed=14)
            sdae_pretrain(stack, x, cfg)
            net, _ = fine_tune(stack, x[:80], y[:80], x[80:], y[80:], cfg)
            nets.append(net)
        for la, lb in zip(nets[0].layers, nets[1].layers):
            assert np.array_equal(la.W, lb.W)
            assert np.array_equal(la.b, lb.b)


class TestPnn:
    def test_zero_weight_network_predicts_bias(self):
        net = build_pnn(5, hidden=4, seed=0)
        for layer in net.layers:
            layer.W[:] = 0.0
        net.layers[-1].b[:] = 3.5
        out = net.predict(np.random.default_rng(0).random((7, 5)))
        np.testing.assert_allclose(out[:, 0], 3.5)

    def test_prediction_clamped_at_zero(self):
        net = build_pnn(3, hidden=2, seed=1)
        net.layers[-1].b[:] = -50.0
        assert np.all(pnn3_predict(net, np.zeros((4, 3))) == 0.0)

    def test_fits_linear_target(self):
        """Test RMSE under 20% of the target spread on a linear response."""
        rng = np.random.default_rng(45)
        x = rng.random((400, 6))
        w = rng.uniform(1, 3, size=6)
        y = x @ w
        y_mean, y_std = y.mean(), y.std()
        net = build_pnn(6, hidden=12, seed=2)
        cfg = TrainConfig(learning_rate=0.1, epochs=150, batch_size=16, rng_seed=3)
        pnn3_train(net, x[:300], (y[:300] - y_mean) / y_std,
                   x[300:350], (y[300:350] - y_mean) / y_std, cfg)
        out = net.layers[-1]
        out.W *= y_std
        out.b = out.b * y_std + y_mean
        pred = pnn3_predict(net, x[350:])
        rmse = np.sqrt(np.mean((pred - y[350:]) ** 2))
        assert rmse < 0.2 * y.std()


class TestCheckpoint:
    def build(self):
        net = build_sdae(7, hidden=(5, 4), n_classes=3, seed=21).network()
        scaler = (np.random.default_rng(1).random(7), np.random.default_rng(2).random(7) + 0.5)
        return net, scaler

    def test_save_load_save_byte_identical(self, tmp_path):
        net, scaler = self.build()
        p1 = tmp_path / "model.ckpt"
        p2 = tmp_path / "model2.ckpt"
        save_network(p1, net, scaler)
        loaded, loaded_scaler = load_network(p1)
        save_network(p2, loaded, loaded_scaler)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_predictions_exact(self, tmp_path):
        net, scaler = self.build()
        path = tmp_path / "model.ckpt"
        save_network(path, net, scaler)
        loaded, loaded_scaler = load_network(path)
        x = np.random.default_rng(3).random((20, 7))
        assert np.array_equal(net.predict(x), loaded.predict(x))
        np.testing.assert_array_equal(scaler[0], loaded_scaler[0])
        np.testing.assert_array_equal(scaler[1], loaded_scaler[1])

    def test_scaler_optional(self, tmp_path):
        net, _ = self.build()
        path = tmp_path / "bare.ckpt"
        save_network(path, net, None)
        _, loaded_scaler = load_network(path)
        assert loaded_scaler is None

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(FormatError):
            load_network(path)

    def test_activation_codes_round_trip(self, tmp_path):
        net = build_pnn(4, hidden=3, seed=5)
        path = tmp_path / "pnn.ckpt"
        save_network(path, net, None)
        loaded, _ = load_network(path)
        assert [l.activation for l in loaded.layers] == ["sigmoid", "identity"]


class TestInitialization:
    def test_seeded_build_is_reproducible(self):
        a = build_sdae(10, hidden=(6, 5), n_classes=4, seed=99)
        b = build_sdae(10, hidden=(6, 5), n_classes=4, seed=99)
        for da, db in zip(a.daes, b.daes):
            assert np.array_equal(da.encoder.W, db.encoder.W)
        assert np.array_equal(a.head.W, b.head.W)

    def test_biases_start_at_zero(self):
        layer = init_layer(5, 3, "sigmoid", np.random.default_rng(0))
        assert np.all(layer.b == 0.0)
