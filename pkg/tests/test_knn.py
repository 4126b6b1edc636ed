import numpy as np
import pytest

from jamshield.errors import ConfigError, SchemaError
from jamshield.knn import fit_knn, knn_scores


def brute_force(X, y, Q, k):
    """Reference: inverse-distance vote over a full stable sort."""
    out = []
    for q in Q:
        d = np.sqrt(((X - q) ** 2).sum(axis=1))
        nearest = np.argsort(d, kind="stable")[:k]
        if np.any(d[nearest] == 0):
            w = (d[nearest] == 0).astype(float)
        else:
            w = 1.0 / d[nearest]
        out.append(float((w * y[nearest]).sum() / w.sum()))
    return np.array(out)


class TestKnn:
    """Test the nearest-neighbour scorer."""

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(300, 5))
        y = (X[:, 0] + rng.normal(0, 0.5, 300) > 0).astype(int)
        Q = rng.normal(size=(600, 5))
        model = fit_knn(X, y, k=7)
        np.testing.assert_allclose(knn_scores(model, Q), brute_force(X, y, Q, 7), atol=1e-12)

    def test_separates_blobs(self, blobs):
        X, y = blobs
        model = fit_knn(X, y, k=5)
        scores = knn_scores(model, np.array([[-2.0] * 4, [2.0] * 4]))
        assert scores[0] < 0.5 < scores[1]

    def test_exact_match_takes_its_label(self):
        X = np.array([[0.0], [1.0], [1.1]])
        model = fit_knn(X, np.array([1, 0, 0]), k=3)
        assert knn_scores(model, np.array([[0.0]]))[0] == 1.0

    def test_uniform_weighting(self):
        X = np.array([[0.0], [1.0], [5.0]])
        model = fit_knn(X, np.array([1, 0, 0]), k=2, weight="uniform")
        assert knn_scores(model, np.array([[0.4]]))[0] == pytest.approx(0.5)

    def test_distance_ties_use_lower_index(self):
        X = np.array([[-1.0], [1.0], [1.0]])
        model = fit_knn(X, np.array([1, 0, 1]), k=2, weight="uniform")
        assert knn_scores(model, np.array([[0.0]]))[0] == pytest.approx(0.5)

    def test_k_larger_than_training_set(self):
        model = fit_knn(np.zeros((3, 2)), np.array([0, 1, 1]), k=10)
        assert model.k == 3

    def test_manhattan_metric(self):
        X = np.array([[0.0, 0.0], [3.0, 0.0]])
        model = fit_knn(X, np.array([0, 1]), k=1, metric="manhattan")
        assert knn_scores(model, np.array([[1.0, 1.0]]))[0] == 0.0

    def test_width_mismatch(self):
        model = fit_knn(np.zeros((3, 2)), np.array([0, 1, 1]), k=1)
        with pytest.raises(SchemaError):
            knn_scores(model, np.zeros((1, 3)))

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            fit_knn(np.zeros((3, 2)), np.array([0, 1, 1]), weight="rank")
        with pytest.raises(ConfigError):
            fit_knn(np.zeros((3, 2)), np.array([0, 1, 1]), k=0)
