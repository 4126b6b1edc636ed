import json

import numpy as np
import pytest

from jamshield.errors import ConfigError, SchemaError, TrainingError
from jamshield.feature_selection import SelectionMask
from jamshield.learners import (
    ATTACK,
    BENIGN,
    default_spec,
    gradient_check,
    inference_time,
    load_model,
    make_windows,
    predict,
    predict_batch,
    predict_scores,
    predict_sequence,
    save_model,
    train,
)
from jamshield.preprocessing import fit_scaler


def _quick_spec(algorithm):
    """Small, fast hyperparameters for each learner."""
    overrides = {
        "knn": {"k": 3},
        "dt": {},
        "rf": {"trees": 5},
        "svm": {},
        "mlp": {"hidden": [8], "epochs": 5, "batch": 16},
        "lstm": {"hidden": 4, "layers": 1, "window": 3, "epochs": 3, "batch": 16},
        "comp1": {"hidden": [8], "epochs": 3},
        "comp2": {"hidden": [8], "epochs": 3},
        "comp3": {"hidden": [8, 8], "epochs": 3, "batch": 16},
    }[algorithm]
    return default_spec(algorithm, seed=1, overrides=overrides)


class TestDefaultSpec:
    """Test hyperparameter defaults and overrides."""

    def test_defaults(self):
        spec = default_spec("mlp")
        assert spec.get("hidden") == [100, 50, 25]
        assert default_spec("lstm").get("window") == 10
        assert default_spec("rf").get("trees") == 150

    def test_unknown_override(self):
        with pytest.raises(ConfigError, match="Unknown hyperparameter"):
            default_spec("knn", overrides={"depth": 3})

    def test_unknown_algorithm(self):
        with pytest.raises(ConfigError):
            default_spec("xgboost")


class TestTrain:
    """Test the shared train/predict contract."""

    @pytest.mark.parametrize("algorithm", ["knn", "dt", "rf", "svm", "mlp", "lstm", "comp1", "comp2", "comp3"])
    def test_every_learner_scores_in_unit_interval(self, algorithm, blobs):
        X, y = blobs
        model = train(_quick_spec(algorithm), X, y)
        scores = predict_scores(model, X)
        assert scores.shape == (80,)
        assert np.all((scores >= 0.0) & (scores <= 1.0))
        np.testing.assert_allclose(model.predict_proba(X).sum(axis=1), 1.0)

    @pytest.mark.parametrize("algorithm", ["knn", "dt", "rf", "svm"])
    def test_classical_learners_separate_blobs(self, algorithm, blobs):
        X, y = blobs
        classes, _ = predict_batch(train(_quick_spec(algorithm), X, y), X)
        assert np.mean(classes == y) >= 0.95

    def test_single_class_is_rejected(self, blobs):
        X, _ = blobs
        with pytest.raises(TrainingError):
            train(_quick_spec("dt"), X, np.zeros(len(X), dtype=int))

    def test_nan_is_rejected(self, blobs):
        X, y = blobs
        X = X.copy()
        X[0, 0] = np.nan
        with pytest.raises(TrainingError):
            train(_quick_spec("knn"), X, y)

    def test_same_seed_same_network(self, blobs):
        X, y = blobs
        a = predict_scores(train(_quick_spec("mlp"), X, y), X)
        b = predict_scores(train(_quick_spec("mlp"), X, y), X)
        np.testing.assert_array_equal(a, b)

    def test_width_mismatch_at_predict(self, blobs):
        X, y = blobs
        model = train(_quick_spec("knn"), X, y)
        with pytest.raises(SchemaError):
            predict_scores(model, np.zeros((1, 5)))


class TestVerdicts:
    """Test single-sample verdicts."""

    def test_predict_single_vector(self, blobs):
        X, y = blobs
        model = train(_quick_spec("knn"), X, y)
        assert predict(model, np.full(4, 2.0))[0] == ATTACK
        assert predict(model, np.full(4, -2.0))[0] == BENIGN

    def test_predict_rejects_matrix(self, blobs):
        X, y = blobs
        model = train(_quick_spec("knn"), X, y)
        with pytest.raises(SchemaError):
            predict(model, X[:2])

    def test_sequence_verdict_uses_window(self, blobs):
        X, y = blobs
        model = train(_quick_spec("lstm"), X, y)
        label, score = predict_sequence(model, X[:3])
        assert label in (ATTACK, BENIGN)
        assert 0.0 <= score <= 1.0
        with pytest.raises(SchemaError):
            predict_sequence(model, X[:4])

    def test_sequence_verdict_on_non_sequence_model(self, blobs):
        X, y = blobs
        model = train(_quick_spec("dt"), X, y)
        with pytest.raises(TrainingError):
            predict_sequence(model, X[:3])


class TestWindows:
    """Test sliding windows for the lstm."""

    def test_padding_repeats_first_row(self):
        X = np.arange(4, dtype=float)[:, None]
        windows = make_windows(X, 3)
        assert windows.shape == (4, 3, 1)
        np.testing.assert_array_equal(windows[0, :, 0], [0, 0, 0])
        np.testing.assert_array_equal(windows[3, :, 0], [1, 2, 3])

    def test_bad_length(self):
        with pytest.raises(ConfigError):
            make_windows(np.zeros((3, 2)), 0)


class TestGradientCheck:
    """Test backprop against finite differences through the learner contract."""

    def test_mlp(self):
        rng = np.random.default_rng(0)
        spec = default_spec("mlp", overrides={"hidden": [4, 3]})
        result = gradient_check(spec, rng.normal(size=(10, 5)), rng.integers(0, 2, size=10))
        assert result.max_relative_error < 1e-4

    def test_lstm(self):
        rng = np.random.default_rng(1)
        spec = default_spec("lstm", overrides={"hidden": 4, "layers": 1, "window": 3})
        result = gradient_check(spec, rng.normal(size=(8, 3)), np.array([0, 1] * 4))
        assert result.max_relative_error < 1e-4

    def test_dropout_is_disabled(self):
        rng = np.random.default_rng(2)
        spec = default_spec("comp3", overrides={"hidden": [4]})
        result = gradient_check(spec, rng.normal(size=(6, 3)), np.array([0, 1] * 3))
        assert result.max_relative_error < 1e-4

    def test_non_neural(self):
        with pytest.raises(ConfigError):
            gradient_check(default_spec("knn"), np.zeros((4, 2)), np.array([0, 1, 0, 1]))


class TestPersistence:
    """Test the model file format."""

    @pytest.mark.parametrize("algorithm", ["knn", "dt", "rf", "svm", "mlp", "lstm", "comp2"])
    def test_reloaded_model_scores_identically(self, algorithm, blobs, tmp_path):
        X, y = blobs
        model = train(_quick_spec(algorithm), X, y)
        path = tmp_path / f"{algorithm}.model"
        digest = save_model(path, model)
        bundle = load_model(path)
        assert bundle.digest == digest
        np.testing.assert_array_equal(predict_scores(bundle.model, X), predict_scores(model, X))

    def test_scaler_and_mask_travel_with_model(self, blobs, tmp_path):
        X, y = blobs
        scaler = fit_scaler(X)
        mask = SelectionMask(selected=(0, 2), width=4)
        model = train(_quick_spec("dt"), X[:, [0, 2]], y,
                      mask_fingerprint=mask.fingerprint, scaler_fingerprint=scaler.fingerprint)
        path = tmp_path / "dt.model"
        save_model(path, model, scaler, mask)
        bundle = load_model(path)
        assert bundle.mask.selected == (0, 2)
        assert bundle.scaler.fingerprint == scaler.fingerprint

    def test_mismatched_mask_is_rejected(self, blobs, tmp_path):
        X, y = blobs
        model = train(_quick_spec("dt"), X[:, [0, 2]], y, mask_fingerprint="0" * 16)
        path = tmp_path / "dt.model"
        save_model(path, model, mask=SelectionMask(selected=(0, 2), width=4))
        with pytest.raises(SchemaError, match="provenance"):
            load_model(path)

    def test_unsupported_version(self, blobs, tmp_path):
        X, y = blobs
        path = tmp_path / "knn.model"
        save_model(path, train(_quick_spec("knn"), X, y))
        payload = json.loads(path.read_text())
        payload["format_version"] = 99
        path.write_text(json.dumps(payload))
        with pytest.raises(SchemaError, match="version"):
            load_model(path)


class TestInferenceTime:
    """Test per-sample timing."""

    def test_positive_per_sample_time(self, blobs):
        X, y = blobs
        model = train(_quick_spec("knn"), X, y)
        assert inference_time(model, X, repetitions=2) > 0.0

    def test_empty_batch(self, blobs):
        X, y = blobs
        model = train(_quick_spec("knn"), X, y)
        with pytest.raises(SchemaError):
            inference_time(model, X[:0])
