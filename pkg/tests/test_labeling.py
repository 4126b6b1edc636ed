import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from jamshield.errors import TrainingError
from jamshield.labeling import (
    assign_labels,
    distress_indices,
    em_refine,
    fit_labeler,
    kmeans_fit,
    label_arrays,
)
from jamshield.preprocessing import fit_scaler
from jamshield.schema import binary_labels, samples_to_matrix
from jamshield.simulator import ScenarioConfig, simulate_segments


@pytest.fixture
def two_clusters():
    """A tight benign cloud and a wider attack cloud that is high on column 0."""
    rng = np.random.default_rng(21)
    benign = rng.normal(0.0, 0.3, size=(300, 3))
    attack = rng.normal(0.0, 0.6, size=(100, 3)) + np.array([4.0, 1.0, -1.0])
    X = np.vstack([benign, attack])
    y = np.array([0] * 300 + [1] * 100)
    return X, y


class TestKMeans:
    """Test k-means seeding and Lloyd iterations."""

    def test_inertia_never_increases(self, two_clusters):
        X, _ = two_clusters
        trace = kmeans_fit(X, seed=3).inertia_trace
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    def test_centroids_in_canonical_order(self, two_clusters):
        X, _ = two_clusters
        centroids = kmeans_fit(X, seed=3).centroids
        assert centroids[0, 0] < centroids[1, 0]

    def test_seed_does_not_change_partition_of_clear_data(self, two_clusters):
        X, _ = two_clusters
        a = kmeans_fit(X, seed=1).assignments
        b = kmeans_fit(X, seed=99).assignments
        np.testing.assert_array_equal(a, b)

    def test_identical_points(self):
        with pytest.raises(TrainingError):
            kmeans_fit(np.ones((10, 2)))


class TestEm:
    """Test the Gaussian mixture refinement."""

    def test_log_likelihood_is_monotone(self, two_clusters):
        X, _ = two_clusters
        model = em_refine(X, kmeans_fit(X, seed=0))
        trace = model.log_likelihood
        assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))

    def test_weights_sum_to_one(self, two_clusters):
        X, _ = two_clusters
        model = em_refine(X, kmeans_fit(X, seed=0))
        assert model.weights.sum() == pytest.approx(1.0)
        assert np.all(model.variances >= 1e-6)


class TestPseudoLabels:
    """Test labeling against known clusters."""

    def test_recovers_clusters(self, two_clusters):
        X, y = two_clusters
        model = fit_labeler(X, distress=[0], seed=0)
        labels, confidence = label_arrays(model, X)
        assert adjusted_rand_score(y, labels) >= 0.9
        assert np.mean(labels == y) >= 0.95
        assert np.all((confidence >= 0.5) & (confidence <= 1.0))

    def test_attack_is_the_distressed_component(self, two_clusters):
        X, y = two_clusters
        labels, _ = label_arrays(fit_labeler(X, distress=[0], seed=0), X)
        assert labels[y == 1].mean() > 0.9
        flipped, _ = label_arrays(fit_labeler(X, distress=[2], seed=0), X)
        assert flipped[y == 1].mean() < 0.1

    def test_assign_labels_objects(self, two_clusters):
        X, _ = two_clusters
        result = assign_labels(fit_labeler(X, distress=[0]), X[:5])
        assert len(result) == 5
        assert all(r.label in (0, 1) for r in result)

    def test_distress_features_come_from_manifest(self, manifest):
        indices = distress_indices(manifest)
        assert manifest.index_of("loss_fraction") in indices

    @pytest.mark.slow
    def test_simulated_attacks_lean_attack(self, small_dataset, manifest):
        X = samples_to_matrix(small_dataset)
        y = binary_labels(small_dataset)
        Xs = fit_scaler(X).transform(X)
        model = fit_labeler(Xs, distress_indices(manifest), seed=42)
        labels, _ = label_arrays(model, Xs)
        assert labels[y == 1].mean() > labels[y == 0].mean()

    @pytest.mark.slow
    def test_strong_constant_jamming_is_recovered(self, manifest):
        segments = []
        for i in range(5):
            segments.append(ScenarioConfig(duration=60.0, seed=300 + i))
            segments.append(ScenarioConfig(duration=60.0, jammer_kind="constant", waveform="awgn",
                                           gain_dbi=30.0, seed=400 + i))
        samples = simulate_segments(segments, manifest)
        y = binary_labels(samples)
        assert y.mean() == pytest.approx(0.5)

        X = samples_to_matrix(samples)
        Xs = fit_scaler(X).transform(X)
        labels, _ = label_arrays(fit_labeler(Xs, distress_indices(manifest), seed=42), Xs)
        assert adjusted_rand_score(y, labels) >= 0.9
