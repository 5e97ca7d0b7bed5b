import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mialab import dp
from mialab.dataio import Sample
from mialab.errors import MialabError
from mialab.nn import (
    MlpClassifier,
    MlpModel,
    TrainConfig,
    accuracy,
    forward,
    init_model,
    load_model,
    logloss,
    loglosses,
    per_example_grad,
    save_model,
    train,
    training_steps,
)


def separable_samples(n_per_class=50, seed=2, spread=0.3):
    rng = np.random.default_rng(seed)
    X = np.vstack(
        [
            rng.normal(loc=(0.0, 0.0), scale=spread, size=(n_per_class, 2)),
            rng.normal(loc=(3.0, 3.0), scale=spread, size=(n_per_class, 2)),
        ]
    )
    y = np.array([0] * n_per_class + [1] * n_per_class)
    return [Sample(X[i], int(y[i])) for i in range(len(y))]


class TestInit:
    def test_parameter_count(self):
        model = init_model((4, 256, 256, 2), seed=0)
        expected = 4 * 256 + 256 + 256 * 256 + 256 + 256 * 2 + 2
        assert model.n_params == expected

    def test_same_seed_identical(self):
        a = init_model((3, 8, 2), seed=5)
        b = init_model((3, 8, 2), seed=5)
        assert np.array_equal(a.flatten(), b.flatten())

    def test_single_linear_layer(self):
        model = init_model((4, 2), seed=1)
        assert model.n_layers == 1
        assert model.n_params == 4 * 2 + 2

    def test_glorot_range_and_zero_biases(self):
        model = init_model((10, 20, 3), seed=7)
        limit0 = math.sqrt(6.0 / 30)
        assert np.all(np.abs(model.weights[0]) <= limit0)
        assert np.all(model.biases[0] == 0.0)

    def test_flatten_unflatten_roundtrip(self):
        model = init_model((3, 5, 4, 2), seed=9)
        again = MlpModel.unflatten(model.layer_dims, model.flatten())
        assert all(np.array_equal(a, b) for a, b in zip(model.weights, again.weights))


class TestForward:
    def test_zero_model_two_classes(self):
        model = MlpModel((4, 2), (np.zeros((4, 2)),), (np.zeros(2),))
        np.testing.assert_allclose(forward(model, np.ones(4)), [0.5, 0.5])

    def test_zero_model_uniform_over_k(self):
        model = MlpModel((3, 5), (np.zeros((3, 5)),), (np.zeros(5),))
        np.testing.assert_allclose(forward(model, np.ones(3)), np.full(5, 0.2))

    def test_extreme_logits_no_overflow(self):
        model = MlpModel(
            (1, 2), (np.array([[1000.0, 0.0]]),), (np.zeros(2),)
        )
        probs = forward(model, np.array([1.0]))
        assert probs[0] == pytest.approx(1.0)
        assert np.all(np.isfinite(probs))

    def test_width_mismatch_errors(self):
        model = init_model((4, 2), seed=0)
        with pytest.raises(MialabError, match="width"):
            forward(model, np.ones(3))

    @given(st.lists(st.floats(min_value=-50, max_value=50), min_size=3, max_size=3))
    @settings(max_examples=50, deadline=None)
    def test_probabilities_sum_to_one(self, features):
        model = init_model((3, 8, 4), seed=11)
        probs = forward(model, np.array(features))
        assert abs(probs.sum() - 1.0) < 1e-9


class TestLogloss:
    def test_certain_prediction_zero_loss(self):
        model = MlpModel(
            (1, 2), (np.array([[60.0, -60.0]]),), (np.zeros(2),)
        )
        assert logloss(model, Sample([1.0], 0)) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_prediction_ln2(self):
        model = MlpModel((2, 2), (np.zeros((2, 2)),), (np.zeros(2),))
        assert logloss(model, Sample([1.0, 0.0], 1)) == pytest.approx(math.log(2))

    def test_exp_minus_one_probability(self):
        # logits chosen so p(true class) = 1/e exactly
        p = 1 / math.e
        logit = math.log(p / (1 - p))
        model = MlpModel((1, 2), (np.array([[logit, 0.0]]),), (np.zeros(2),))
        assert logloss(model, Sample([1.0], 0)) == pytest.approx(1.0)

    def test_loglosses_matches_scalar(self):
        model = init_model((2, 6, 2), seed=3)
        samples = separable_samples(5)
        batch = loglosses(model, samples)
        singles = [logloss(model, s) for s in samples]
        np.testing.assert_allclose(batch, singles)


class TestPerExampleGrad:
    def finite_difference(self, model, sample, l2, step=1e-5):
        flat = model.flatten()

        def loss_at(v):
            m = MlpModel.unflatten(model.layer_dims, v)
            reg = 0.5 * l2 * sum(float(np.sum(W * W)) for W in m.weights)
            return logloss(m, sample) + reg

        grad = np.empty_like(flat)
        for j in range(flat.size):
            e = np.zeros_like(flat)
            e[j] = step
            grad[j] = (loss_at(flat + e) - loss_at(flat - e)) / (2 * step)
        return grad

    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(5)
        model = init_model((4, 8, 8, 2), seed=1)
        sample = Sample(rng.normal(size=4), 1)
        analytic = per_example_grad(model, sample, 1e-3)
        numeric = self.finite_difference(model, sample, 1e-3)
        mask = (np.abs(analytic) > 1e-6) | (np.abs(numeric) > 1e-6)
        rel = np.abs(analytic - numeric)[mask] / np.maximum(
            np.abs(numeric[mask]), np.abs(analytic[mask])
        )
        assert rel.max() < 1e-4

    def test_zero_loss_point_has_tiny_output_gradient(self):
        model = MlpModel(
            (1, 2), (np.array([[60.0, -60.0]]),), (np.zeros(2),)
        )
        g = per_example_grad(model, Sample([1.0], 0), l2_coefficient=0.0)
        assert np.abs(g).max() < 1e-12

    def test_l2_component_scales_linearly(self):
        model = MlpModel(
            (1, 2), (np.array([[60.0, -60.0]]),), (np.zeros(2),)
        )
        g1 = per_example_grad(model, Sample([1.0], 0), l2_coefficient=0.1)
        g2 = per_example_grad(model, Sample([1.0], 0), l2_coefficient=0.2)
        np.testing.assert_allclose(g2, 2 * g1, atol=1e-15)


class TestTrain:
    def test_separable_data_fits(self):
        samples = separable_samples()
        cfg = TrainConfig(epochs=100, batch_size=20, seed=4)
        model = train(init_model((2, 32, 32, 2), seed=0), samples, cfg)
        assert accuracy(model, samples) >= 0.99

    def test_fixed_seed_bit_identical(self):
        samples = separable_samples(20)
        cfg = TrainConfig(epochs=10, batch_size=10, seed=12)
        init = init_model((2, 8, 2), seed=0)
        a = train(init, samples, cfg)
        b = train(init, samples, cfg)
        assert np.array_equal(a.flatten(), b.flatten())

    def test_degenerate_privacy_matches_plain(self):
        # sigma=0 and infinite clip norm leave only the sampling scheme;
        # with batch_size = n both paths see every sample each step.
        samples = separable_samples(25)
        cfg = TrainConfig(epochs=20, batch_size=len(samples), seed=8)
        init = init_model((2, 16, 2), seed=1)
        plain = train(init, samples, cfg)
        degenerate = train(
            init,
            samples,
            cfg,
            dp.PrivacyParams(epsilon=math.inf, noise_multiplier=0.0, clip_norm=math.inf),
        )
        np.testing.assert_allclose(plain.flatten(), degenerate.flatten(), rtol=1e-12)

    def test_dp_training_deterministic(self):
        samples = separable_samples(30)
        cfg = TrainConfig(epochs=5, batch_size=20, seed=3, debug_checks=True)
        privacy = dp.PrivacyParams(
            epsilon=1.0, noise_multiplier=2.0, clip_norm=1.0,
            sampling_rate=20 / 60, steps=training_steps(60, cfg),
        )
        init = init_model((2, 8, 2), seed=2)
        a = train(init, samples, cfg, privacy)
        b = train(init, samples, cfg, privacy)
        assert np.array_equal(a.flatten(), b.flatten())

    def test_empty_members_error(self):
        with pytest.raises(MialabError, match="empty"):
            train(init_model((2, 2), 0), [], TrainConfig())

    def test_convex_proxy_smoothed_loss_descends(self):
        # single linear layer = convex objective; the 20-step moving average
        # of the training loss should descend (small upward wiggles allowed).
        samples = separable_samples(100, spread=0.6)
        cfg = TrainConfig(epochs=40, batch_size=50, seed=6)
        losses = []
        train(
            init_model((2, 2), seed=3),
            samples,
            cfg,
            loss_callback=lambda step, loss: losses.append(loss),
        )
        smooth = np.convolve(losses, np.ones(20) / 20, mode="valid")
        wiggle = 0.01 * smooth[0]
        assert np.all(np.diff(smooth) <= wiggle)
        assert smooth[-1] < 0.5 * smooth[0]


class TestAccuracy:
    def test_all_correct(self):
        samples = separable_samples(10)
        cfg = TrainConfig(epochs=60, batch_size=10, seed=4)
        model = train(init_model((2, 16, 2), seed=0), samples, cfg)
        assert accuracy(model, samples) == 1.0

    def test_zero_model_tie_breaks_to_class_zero(self):
        model = MlpModel((2, 2), (np.zeros((2, 2)),), (np.zeros(2),))
        samples = [Sample([1.0, 2.0], 0), Sample([3.0, 4.0], 1), Sample([0.0, 1.0], 0)]
        assert accuracy(model, samples) == pytest.approx(2 / 3)

    def test_empty_errors(self):
        with pytest.raises(MialabError):
            accuracy(init_model((2, 2), 0), [])


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        model = init_model((3, 7, 2), seed=13)
        path = tmp_path / "model.json"
        save_model(model, path)
        again = load_model(path)
        assert again.layer_dims == model.layer_dims
        assert np.array_equal(again.flatten(), model.flatten())

    def test_version_check(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"format_version": 99, "layer_dims": [2,2], "parameters": []}')
        with pytest.raises(MialabError, match="version"):
            load_model(path)


class TestEstimator:
    def test_fit_predict_score(self):
        samples = separable_samples(40)
        X = np.stack([s.features for s in samples])
        y = np.array([s.label for s in samples])
        clf = MlpClassifier(hidden_units=(16,), epochs=40, batch_size=20, seed=3)
        clf.fit(X, y)
        assert clf.score(X, y) >= 0.99
        assert clf.predict_proba(X).shape == (len(y), 2)

    def test_get_set_params_roundtrip(self):
        clf = MlpClassifier(hidden_units=(8,), epochs=5)
        params = clf.get_params()
        clone = MlpClassifier().set_params(**params)
        assert clone.get_params() == params

    def test_unfitted_predict_errors(self):
        with pytest.raises(MialabError, match="not fitted"):
            MlpClassifier().predict(np.ones((1, 2)))

    def test_private_estimator(self):
        samples = separable_samples(40)
        X = np.stack([s.features for s in samples])
        y = np.array([s.label for s in samples])
        privacy = dp.PrivacyParams(
            epsilon=5.0, noise_multiplier=1.0, clip_norm=1.0,
            sampling_rate=0.25, steps=200,
        )
        clf = MlpClassifier(
            hidden_units=(16,), epochs=50, batch_size=20, privacy=privacy, seed=3
        )
        clf.fit(X, y)
        assert clf.score(X, y) >= 0.9  # separable data survives mild noise
