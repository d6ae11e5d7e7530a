import numpy as np
import pytest
from _oracles import brute_force_knn, gradient_check

from eegsad.core import ConfigError, DataError
from eegsad.learn import (CnnArchitecture, KnnConfig, SvmConfig, TrainConfig, cnn_init, cnn_predict_proba, cnn_train,
                          infer_shapes, kkt_violation, knn_predict, knn_predict_one, load_checkpoint, save_checkpoint,
                          standardize_apply, standardize_fit, svm_fit, svm_predict)
from eegsad.learn.layers import BatchNorm, Dropout, softmax, softmax_cross_entropy


class TestStandardize:
    def test_two_points(self):
        stats = standardize_fit(np.array([[0.0], [2.0]]))
        assert stats.mean[0] == 1.0 and stats.std[0] == 1.0
        np.testing.assert_array_equal(standardize_apply(stats, np.array([[0.0], [2.0]]))[:, 0], [-1.0, 1.0])

    def test_constant_feature(self):
        stats = standardize_fit(np.full((5, 3), 7.0))
        np.testing.assert_array_equal(stats.apply(np.full((2, 3), 7.0)), 0.0)

    def test_mean_maps_to_zero(self, rng):
        x = rng.normal(size=(20, 4, 3))
        stats = standardize_fit(x)
        np.testing.assert_allclose(stats.apply(x.mean(axis=0, keepdims=True)), 0.0, atol=1e-12)

    def test_empty(self):
        with pytest.raises(DataError):
            standardize_fit(np.zeros((0, 3)))


class TestKnn:
    def test_coincident_query(self):
        x = np.array([[0.0, 0.0], [5.0, 5.0]])
        assert knn_predict_one(x, np.array([0, 1]), np.array([5.0, 5.0]), KnnConfig(1)) == 1

    def test_majority(self):
        x = np.array([[0.0], [1.0], [2.0], [10.0]])
        assert knn_predict_one(x, np.array([1, 1, 0, 0]), np.array([0.5])) == 1

    def test_distance_tie_goes_to_lower_index(self):
        x = np.array([[-1.0], [1.0]])
        assert knn_predict_one(x, np.array([1, 0]), np.array([0.0]), KnnConfig(1)) == 1
        assert knn_predict_one(x, np.array([0, 1]), np.array([0.0]), KnnConfig(1)) == 0

    def test_vote_tie_goes_to_zero(self):
        x = np.array([[0.0], [1.0]])
        assert knn_predict_one(x, np.array([1, 0]), np.array([0.5]), KnnConfig(2)) == 0

    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_brute_force_oracle(self, rng, k):
        train = rng.normal(size=(200, 10))
        labels = rng.integers(0, 2, 200)
        queries = rng.normal(size=(200, 10))
        got = knn_predict(train, labels, queries, KnnConfig(k), chunk=37)
        want = [brute_force_knn(train, labels, q, k) for q in queries]
        np.testing.assert_array_equal(got, want)

    def test_too_few_samples(self):
        with pytest.raises(DataError):
            knn_predict(np.zeros((2, 3)), np.array([0, 1]), np.zeros((1, 3)))

    def test_invalid_k(self):
        with pytest.raises(ConfigError):
            KnnConfig(0)


def clusters(rng, centers, labels, n=20, spread=0.1):
    x = np.concatenate([c + spread * rng.standard_normal((n, 2)) for c in centers])
    y = np.repeat(labels, n)
    return x, y


class TestSvm:
    def test_separated_clusters(self, rng):
        x, y = clusters(rng, [(0, 0), (5, 5)], [0, 1])
        model = svm_fit(x, y)
        assert model.converged
        assert (svm_predict(model, x) == y).mean() == 1.0

    def test_xor(self, rng):
        x, y = clusters(rng, [(0, 0), (1, 1), (0, 1), (1, 0)], [0, 0, 1, 1], n=25)
        model = svm_fit(x, y, SvmConfig(c=10.0))
        assert (svm_predict(model, x) == y).mean() >= 0.95

    @pytest.mark.parametrize("c", [0.5, 1.0, 10.0])
    def test_kkt(self, rng, c):
        x = rng.normal(size=(60, 3))
        y = (x[:, 0] + 0.3 * rng.normal(size=60) > 0).astype(int)
        cfg = SvmConfig(sigma=1.0, c=c)
        model = svm_fit(x, y, cfg)
        assert model.converged
        assert kkt_violation(model, x, c).max() <= cfg.tolerance
        assert np.all((model.alpha >= 0) & (model.alpha <= c))
        assert abs(np.dot(model.alpha, model.y)) < 1e-9

    def test_reordering_invariant(self, rng):
        x = rng.normal(size=(40, 2))
        y = (x[:, 0] * x[:, 1] > 0).astype(int)
        cfg = SvmConfig(sigma=0.8, c=5.0, tolerance=1e-6, max_passes=500)
        perm = rng.permutation(40)
        q = rng.normal(size=(100, 2))
        a = svm_fit(x, y, cfg).decision_function(q)
        b = svm_fit(x[perm], y[perm], cfg).decision_function(q)
        np.testing.assert_allclose(a, b, atol=1e-4)

    def test_gamma_override(self):
        assert SvmConfig(sigma=0.4).kernel_gamma == pytest.approx(3.125)
        assert SvmConfig(gamma=0.01).kernel_gamma == 0.01

    def test_non_binary_labels(self):
        with pytest.raises(DataError):
            svm_fit(np.zeros((3, 2)), np.array([0, 1, 2]))

    def test_not_converged_still_returns(self, rng, caplog):
        x = rng.normal(size=(50, 2))
        y = rng.integers(0, 2, 50)
        model = svm_fit(x, y, SvmConfig(sigma=0.3, c=100.0, max_passes=1))
        assert not model.converged
        assert "did not reach" in caplog.text
        assert svm_predict(model, x).shape == (50,)

    @pytest.mark.parametrize("kwargs", [dict(sigma=0.0), dict(c=-1.0), dict(tolerance=0.0), dict(gamma=-1.0)])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigError):
            SvmConfig(**kwargs)


class TestSoftmax:
    def test_symmetric_logits(self):
        np.testing.assert_array_equal(softmax(np.zeros((1, 2))), [[0.5, 0.5]])

    def test_gradient_is_p_minus_onehot(self, rng):
        logits = rng.normal(size=(4, 2))
        y = np.array([0, 1, 1, 0])
        _, g = softmax_cross_entropy(logits, y)
        np.testing.assert_allclose(g * 4, softmax(logits) - np.eye(2)[y], atol=1e-15)

    def test_large_logits_stable(self):
        loss, _ = softmax_cross_entropy(np.array([[1000.0, -1000.0]]), np.array([1]))
        assert loss == pytest.approx(2000.0)


class TestLayers:
    def test_batchnorm_train_stats(self, rng):
        bn = BatchNorm(4)
        out = bn.forward(rng.normal(3.0, 5.0, size=(32, 6, 6, 4)), train=True)
        assert np.abs(out.mean(axis=(0, 1, 2))).max() <= 1e-6
        assert np.abs(out.var(axis=(0, 1, 2)) - 1).max() <= 1e-4

    def test_batchnorm_running_stats(self, rng):
        bn = BatchNorm(2)
        bn.forward(np.full((8, 2), 10.0), train=True)
        np.testing.assert_allclose(bn.state["running_mean"], 1.0)
        np.testing.assert_allclose(bn.state["running_var"], 0.9)

    def test_dropout_rate_zero_identity(self, rng):
        x = rng.normal(size=(5, 3))
        np.testing.assert_array_equal(Dropout(0.0).forward(x, train=True, dropout=True, rng=rng), x)

    def test_dropout_expectation(self, rng):
        out = Dropout(0.25).forward(np.ones((200, 500)), train=True, dropout=True, rng=rng)
        assert out.mean() == pytest.approx(1.0, abs=0.01)
        assert set(np.unique(out)) == {0.0, 1.0 / 0.75}

    def test_dropout_off_at_inference(self, rng):
        x = rng.normal(size=(5, 3))
        np.testing.assert_array_equal(Dropout(0.5).forward(x, dropout=False), x)


class TestCnnStructure:
    @pytest.mark.parametrize("shape,pooled,flat", [((15, 15, 5), (7, 7, 64), 3136), ((34, 5, 1), (17, 2, 64), 2176)])
    def test_shapes(self, shape, pooled, flat):
        arch = CnnArchitecture(shape)
        shapes = infer_shapes(arch)
        assert shapes["pooled"] == pooled and shapes["flatten"] == (flat,)
        net = cnn_init(arch, 0)
        out = np.zeros((2,) + shape)
        for layer in net.layers:
            out = layer.forward(out)
            if layer.kind == "maxpool2":
                assert out.shape[1:] == pooled
        assert out.shape == (2, 2)

    def test_layer_order(self):
        kinds = [layer.kind for layer in cnn_init(CnnArchitecture((15, 15, 5))).layers]
        assert kinds == ["batchnorm", "conv2d", "batchnorm", "relu", "conv2d", "batchnorm", "relu", "maxpool2",
                         "dropout", "flatten", "dense", "relu", "dropout", "dense"]

    def test_init_deterministic(self):
        a = cnn_init(CnnArchitecture((15, 15, 5)), 4).get_weights()
        b = cnn_init(CnnArchitecture((15, 15, 5)), 4).get_weights()
        c = cnn_init(CnnArchitecture((15, 15, 5)), 5).get_weights()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert not np.array_equal(a["1.w"], c["1.w"])

    def test_batchnorm_init(self):
        bn = cnn_init(CnnArchitecture((15, 15, 5))).layers[0]
        np.testing.assert_array_equal(bn.params["gamma"], 1.0)
        np.testing.assert_array_equal(bn.params["beta"], 0.0)

    def test_too_small_input(self):
        with pytest.raises(ConfigError):
            CnnArchitecture((1, 5, 1))

    def test_predict_proba(self, rng):
        net = cnn_init(CnnArchitecture((34, 5, 1)), 0)
        x = rng.normal(size=(3, 34, 5, 1))
        p = cnn_predict_proba(net, np.concatenate([x, x[:1]]))
        assert np.abs(p.sum(axis=1) - 1).max() <= 1e-12 and (p >= 0).all()
        np.testing.assert_allclose(p[0], p[3], rtol=1e-12)
        np.testing.assert_array_equal(cnn_predict_proba(net, x[:1]), cnn_predict_proba(net, x[:1]))
        assert cnn_predict_proba(net, x[0]).shape == (2,)

    def test_predict_shape_mismatch(self):
        with pytest.raises(DataError):
            cnn_predict_proba(cnn_init(CnnArchitecture((34, 5, 1))), np.zeros((2, 15, 15, 5)))


class TestGradients:
    def test_inference_batchnorm(self):
        assert gradient_check(seed=0, train_bn=False) <= 1e-4

    def test_training_batchnorm(self):
        assert gradient_check(seed=1, train_bn=True) <= 1e-4


def toy_set(rng, n=20):
    y = np.repeat([0, 1], n // 2)
    x = rng.normal(size=(n, 4, 4, 2)) * 0.5
    x[y == 1, :2] += 2.0
    return x, y


class TestTraining:
    def test_toy_set(self, rng):
        x, y = toy_set(rng)
        net = cnn_init(CnnArchitecture.miniature(), 0)
        cfg = TrainConfig(batch_size=20, max_epochs=40, patience=39, learning_rate=1e-2)
        net, hist = cnn_train(net, x, y, x, y, cfg)
        assert all(b < a for a, b in zip(hist.train_loss[:5], hist.train_loss[1:5]))
        assert (cnn_predict_proba(net, x).argmax(axis=1) == y).mean() == 1.0

    def test_restores_best_weights(self, rng):
        x, y = toy_set(rng)
        vx, vy = toy_set(rng)
        net = cnn_init(CnnArchitecture.miniature(), 0)
        net, hist = cnn_train(net, x, y, vx, vy, TrainConfig(batch_size=8, max_epochs=30, patience=3))
        from eegsad.learn.cnn import evaluate_loss
        assert evaluate_loss(net, vx, vy)[0] == pytest.approx(min(hist.val_loss), rel=1e-9)
        assert hist.val_loss[hist.best_epoch] == min(hist.val_loss)

    def test_patience_zero(self, rng):
        x, y = toy_set(rng)
        vx, vy = toy_set(rng)
        # a learning rate this large makes validation loss rise quickly
        cfg = TrainConfig(batch_size=4, max_epochs=50, patience=0, learning_rate=0.5)
        _, hist = cnn_train(cnn_init(CnnArchitecture.miniature(), 0), x, y, vx, vy, cfg)
        first_bad = next(e for e in range(1, len(hist.val_loss))
                         if hist.val_loss[e] >= min(hist.val_loss[:e]))
        assert hist.stopped_epoch == first_bad == len(hist.val_loss) - 1

    def test_deterministic(self, rng):
        x, y = toy_set(rng)
        runs = []
        for _ in range(2):
            net = cnn_init(CnnArchitecture.miniature(), 3, np.float32)
            net, _ = cnn_train(net, x, y, x, y, TrainConfig(batch_size=6, max_epochs=4, patience=3, seed=9))
            runs.append(net.get_weights())
        assert all(np.array_equal(runs[0][k], runs[1][k]) for k in runs[0])

    def test_empty_validation(self, rng):
        x, y = toy_set(rng)
        with pytest.raises(DataError):
            cnn_train(cnn_init(CnnArchitecture.miniature()), x, y, x[:0], y[:0])

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            TrainConfig(patience=100, max_epochs=100)
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)

    def test_checkpoint_round_trip(self, rng, tmp_path):
        x, y = toy_set(rng)
        net = cnn_init(CnnArchitecture.miniature(), 0)
        net, _ = cnn_train(net, x, y, x, y, TrainConfig(batch_size=5, max_epochs=3, patience=2))
        stats = standardize_fit(x)
        save_checkpoint(tmp_path / "m.npz", net, stats, "abc")
        back, back_stats, meta = load_checkpoint(tmp_path / "m.npz")
        assert meta["fingerprint"] == "abc"
        np.testing.assert_array_equal(back_stats.mean, stats.mean)
        np.testing.assert_array_equal(cnn_predict_proba(back, x), cnn_predict_proba(net, x))
