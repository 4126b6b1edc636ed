"""Unsupervised benign/attack pseudo-labels: k-means seeding refined by a two-component diagonal GMM."""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit, logsumexp

from .config import DEFAULT_SEED, DISTRESS_FEATURES, EM_MAX_ITER, EM_TOLERANCE, KMEANS_MAX_ITER, VARIANCE_FLOOR
from .errors import TrainingError
from .schema import FeatureManifest

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray = field(repr=False)
    assignments: np.ndarray = field(repr=False)
    inertia_trace: Tuple[float, ...] = ()
    iterations: int = 0


def _seed_centroids(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding."""
    centroids = [X[rng.integers(len(X))]]
    for _ in range(1, k):
        d2 = cdist(X, np.vstack(centroids), metric="sqeuclidean").min(axis=1)
        total = d2.sum()
        if total <= 0:
            centroids.append(X[rng.integers(len(X))])
        else:
            centroids.append(X[rng.choice(len(X), p=d2 / total)])
    return np.vstack(centroids).astype(float)


def _canonical_order(centroids: np.ndarray) -> np.ndarray:
    """Permutation sorting centroids lexicographically by coordinates."""
    return np.lexsort(centroids.T[::-1])


def kmeans_fit(X: np.ndarray, k: int = 2, seed: int = DEFAULT_SEED, max_iter: int = KMEANS_MAX_ITER) -> KMeansResult:
    """Lloyd iterations from k-means++ seeds until assignments stop changing."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) < k:
        raise TrainingError(f"k-means needs at least {k} samples, got {len(X)}")
    if len(np.unique(X, axis=0)) < k:
        raise TrainingError(f"k-means needs at least {k} distinct points")

    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(X, k, rng)
    assignments = np.full(len(X), -1)
    trace: List[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d2 = cdist(X, centroids, metric="sqeuclidean")
        new_assignments = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(len(X)), new_assignments].sum()))
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments

        for c in range(k):
            members = assignments == c
            if members.any():
                centroids[c] = X[members].mean(axis=0)
            else:
                # empty cluster takes the point farthest from its own centroid
                far = int(np.argmax(d2[np.arange(len(X)), assignments]))
                centroids[c] = X[far]
                assignments[far] = c
                logger.warning(f"k-means cluster {c} emptied, reseeded from sample {far}")

    order = _canonical_order(centroids)
    remap = np.empty(k, dtype=int)
    remap[order] = np.arange(k)
    return KMeansResult(
        centroids=centroids[order],
        assignments=remap[assignments],
        inertia_trace=tuple(trace),
        iterations=iterations,
    )


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    means: np.ndarray = field(repr=False)
    variances: np.ndarray = field(repr=False)
    log_likelihood: Tuple[float, ...] = ()  # mean per-sample log-likelihood per EM iteration
    attack_component: int = 1
    inertia_trace: Tuple[float, ...] = ()

    @property
    def converged_log_likelihood(self) -> float:
        return self.log_likelihood[-1] if self.log_likelihood else -math.inf


@dataclass(frozen=True)
class PseudoLabel:
    label: int
    confidence: float


def _component_log_density(X: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """(n, components) diagonal Gaussian log densities."""
    out = np.empty((X.shape[0], len(means)))
    for c, (mu, var) in enumerate(zip(means, variances)):
        out[:, c] = -0.5 * (np.sum(np.log(2.0 * np.pi * var)) + np.sum((X - mu) ** 2 / var, axis=1))
    return out


def _log_joint(X: np.ndarray, weights: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(weights) + _component_log_density(X, means, variances)


def em_refine(X: np.ndarray, kmeans: KMeansResult, max_iter: int = EM_MAX_ITER, tol: float = EM_TOLERANCE,
              variance_floor: float = VARIANCE_FLOOR) -> ClusterModel:
    """EM on a diagonal two-component mixture initialized from k-means assignments."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    k = len(kmeans.centroids)

    resp = np.zeros((n, k))
    resp[np.arange(n), kmeans.assignments] = 1.0
    trace: List[float] = []
    weights = means = variances = None
    for _ in range(max_iter):
        # M-step
        Nk = resp.sum(axis=0)
        safe = np.maximum(Nk, 1e-300)
        weights = Nk / n
        means = (resp.T @ X) / safe[:, None]
        variances = np.empty_like(means)
        for c in range(k):
            variances[c] = resp[:, c] @ (X - means[c]) ** 2 / safe[c]
        variances = np.maximum(variances, variance_floor)

        # E-step
        log_joint = _log_joint(X, weights, means, variances)
        log_norm = logsumexp(log_joint, axis=1)
        resp = np.exp(log_joint - log_norm[:, None])
        trace.append(float(log_norm.mean()))
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            break

    if len(trace) > 1 and trace[-1] < trace[-2] - 1e-9:
        logger.warning(f"EM log-likelihood decreased ({trace[-2]:.6f} -> {trace[-1]:.6f})")

    return ClusterModel(
        centroids=kmeans.centroids,
        weights=weights,
        means=means,
        variances=variances,
        log_likelihood=tuple(trace),
        inertia_trace=kmeans.inertia_trace,
    )


def attack_component(model: ClusterModel, distress_indices: Sequence[int]) -> int:
    """Component whose mean is higher on the distress features; ties go to component 0."""
    idx = list(distress_indices) or list(range(model.means.shape[1]))
    scores = model.means[:, idx].mean(axis=1)
    return int(np.argmax(scores))


def distress_indices(manifest: FeatureManifest) -> List[int]:
    """Manifest positions of the jamming-distress features; link layer when none are present."""
    indices = manifest.indices_of(DISTRESS_FEATURES)
    return indices or manifest.layer_indices("link")


def posterior_attack(model: ClusterModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    log_joint = _log_joint(X, model.weights, model.means, model.variances)
    a = model.attack_component
    return expit(log_joint[:, a] - log_joint[:, 1 - a])


def label_arrays(model: ClusterModel, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(0/1 labels, confidences); an exact 0.5 posterior is labeled attack."""
    p = posterior_attack(model, X)
    labels = (p >= 0.5).astype(int)
    return labels, np.maximum(p, 1.0 - p)


def assign_labels(model: ClusterModel, X: np.ndarray) -> List[PseudoLabel]:
    labels, confidence = label_arrays(model, X)
    return [PseudoLabel(label=int(l), confidence=float(c)) for l, c in zip(labels, confidence)]


def fit_labeler(X_scaled: np.ndarray, distress: Sequence[int], seed: int = DEFAULT_SEED,
                variance_floor: float = VARIANCE_FLOOR) -> ClusterModel:
    km = kmeans_fit(X_scaled, k=2, seed=seed)
    model = em_refine(X_scaled, km, variance_floor=variance_floor)
    chosen = attack_component(model, distress)
    model = ClusterModel(
        centroids=model.centroids,
        weights=model.weights,
        means=model.means,
        variances=model.variances,
        log_likelihood=model.log_likelihood,
        attack_component=chosen,
        inertia_trace=model.inertia_trace,
    )
    logger.info(
        f"Labeler fitted: {len(model.log_likelihood)} EM iterations, "
        f"attack component {chosen} with weight {model.weights[chosen]:.3f}"
    )
    return model
