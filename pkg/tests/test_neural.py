import numpy as np
import pytest

from jamshield.errors import ConfigError, SchemaError
from jamshield.io_utils import decode_array, encode_array
from jamshield.neural import (
    AdamOptimizer,
    cross_entropy,
    dense_forward,
    dense_loss_and_grads,
    dense_predict_proba,
    init_dense,
    init_lstm,
    lstm_loss_and_grads,
    lstm_predict_proba,
    numerical_gradient_check,
    one_hot,
    params_from_payload,
    params_to_payload,
    train_network,
)


class TestDense:
    """Test the dense network."""

    def test_layer_sizes(self):
        params = init_dense(40, [100, 50, 25], np.random.default_rng(0))
        assert params.sizes == [40, 100, 50, 25, 2]

    def test_probabilities_sum_to_one(self):
        params = init_dense(4, [3], np.random.default_rng(0))
        proba = dense_predict_proba(params, np.random.default_rng(1).normal(size=(7, 4)))
        np.testing.assert_allclose(proba.sum(axis=1), 1.0)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        params = init_dense(4, [3], rng)
        X = rng.normal(size=(10, 4))
        y = rng.integers(0, 2, size=10)
        worst, _, count = numerical_gradient_check(params, dense_loss_and_grads, X, y, 1e-5)
        assert count == 4 * 3 + 3 + 3 * 2 + 2
        assert worst < 1e-4

    def test_dropout_only_in_training(self):
        params = init_dense(4, [8], np.random.default_rng(0), dropout=0.5)
        X = np.ones((3, 4))
        a, _ = dense_forward(params, X)
        b, _ = dense_forward(params, X)
        np.testing.assert_array_equal(a, b)

    def test_bad_dropout(self):
        with pytest.raises(ConfigError):
            init_dense(4, [3], np.random.default_rng(0), dropout=1.0)

    def test_width_mismatch(self):
        params = init_dense(4, [3], np.random.default_rng(0))
        with pytest.raises(SchemaError):
            dense_forward(params, np.zeros((1, 5)))


class TestLstm:
    """Test the stacked LSTM."""

    def test_forget_bias_starts_at_one(self):
        params = init_lstm(3, 4, 2, np.random.default_rng(0))
        for b in params.b:
            np.testing.assert_array_equal(b[4:8], 1.0)
            np.testing.assert_array_equal(b[:4], 0.0)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        params = init_lstm(3, 4, 1, rng)
        X = rng.normal(size=(6, 3, 3))
        y = np.array([0, 1, 0, 1, 1, 0])
        worst, _, _ = numerical_gradient_check(params, lstm_loss_and_grads, X, y, 1e-5)
        assert worst < 1e-4

    def test_two_layer_gradients(self):
        rng = np.random.default_rng(4)
        params = init_lstm(2, 3, 2, rng)
        X = rng.normal(size=(4, 3, 2))
        worst, _, _ = numerical_gradient_check(params, lstm_loss_and_grads, X, np.array([0, 1, 1, 0]), 1e-5)
        assert worst < 1e-4

    def test_shape_check(self):
        params = init_lstm(3, 4, 1, np.random.default_rng(0))
        with pytest.raises(SchemaError):
            lstm_predict_proba(params, np.zeros((2, 5, 4)))


class TestTraining:
    """Test Adam and the training loop."""

    def test_cross_entropy_of_uniform_logits(self):
        assert cross_entropy(np.zeros((3, 2)), one_hot(np.array([0, 1, 1]))) == pytest.approx(np.log(2))

    def test_adam_step_moves_against_gradient(self):
        p = np.array([1.0, -1.0])
        AdamOptimizer([p], lr=0.1).step([np.array([2.0, -3.0])])
        np.testing.assert_allclose(p, [0.9, -0.9], atol=1e-6)

    def test_loss_decreases_on_blobs(self, blobs):
        X, y = blobs
        rng = np.random.default_rng(0)
        params = init_dense(4, [8], rng)
        history = train_network(params, dense_loss_and_grads, X, y, lr=0.01, batch=16, epochs=30, rng=rng)
        assert history[-1] < history[0]
        assert np.mean((dense_predict_proba(params, X)[:, 1] >= 0.5) == y) >= 0.95

    def test_early_stopping(self, blobs):
        X, y = blobs
        rng = np.random.default_rng(0)
        params = init_dense(4, [8], rng)
        history = train_network(params, dense_loss_and_grads, X, y, lr=0.01, batch=80, epochs=500,
                                rng=rng, delta=1.0, patience=2)
        assert len(history) == 3

    def test_bad_settings(self, blobs):
        X, y = blobs
        params = init_dense(4, [3], np.random.default_rng(0))
        with pytest.raises(ConfigError):
            train_network(params, dense_loss_and_grads, X, y, lr=0.0, batch=8, epochs=1,
                          rng=np.random.default_rng(0))

    def test_payload_preserves_lstm(self):
        params = init_lstm(3, 4, 2, np.random.default_rng(0))
        X = np.random.default_rng(1).normal(size=(2, 5, 3))
        restored = params_from_payload(params_to_payload(params, encode_array), decode_array)
        np.testing.assert_array_equal(lstm_predict_proba(restored, X), lstm_predict_proba(params, X))
