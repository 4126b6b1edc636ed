import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, SchemaError

logger = logging.getLogger(__name__)

WEIGHTINGS = ("distance", "uniform")
METRICS = {"euclidean": "euclidean", "manhattan": "cityblock"}
QUERY_CHUNK = 256


@dataclass(frozen=True)
class KnnModel:
    """Brute-force nearest-neighbour vote over the stored training set."""

    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    k: int = 10
    weight: str = "distance"
    metric: str = "euclidean"

    @property
    def width(self) -> int:
        return self.X.shape[1]


def fit_knn(X: np.ndarray, y: np.ndarray, k: int = 10, weight: str = "distance",
            metric: str = "euclidean") -> KnnModel:
    if weight not in WEIGHTINGS:
        raise ConfigError(f"Unknown knn weighting '{weight}', expected one of {WEIGHTINGS}")
    if metric not in METRICS:
        raise ConfigError(f"Unknown knn metric '{metric}', expected one of {sorted(METRICS)}")
    if k < 1:
        raise ConfigError(f"knn k must be >= 1, got {k}")
    X = np.array(X, dtype=float)
    y = np.array(y, dtype=int)
    X.setflags(write=False)
    y.setflags(write=False)
    return KnnModel(X=X, y=y, k=min(k, len(y)), weight=weight, metric=metric)


def _neighbours(distances: np.ndarray, k: int) -> np.ndarray:
    """k nearest training indices per row; equal distances resolved by lower index."""
    n = distances.shape[1]
    if k >= n:
        return np.argsort(distances, axis=1, kind="stable")[:, :k]

    nearest = np.argpartition(distances, k - 1, axis=1)[:, :k]
    rows = np.arange(distances.shape[0])[:, None]
    kth = distances[rows, nearest].max(axis=1)
    ambiguous = np.flatnonzero((distances <= kth[:, None]).sum(axis=1) > k)
    for r in ambiguous:
        nearest[r] = np.argsort(distances[r], kind="stable")[:k]
    return nearest


def _vote(distances: np.ndarray, labels: np.ndarray, weight: str) -> np.ndarray:
    if weight == "uniform":
        return labels.mean(axis=1)

    exact = distances == 0.0
    has_exact = exact.any(axis=1)
    with np.errstate(divide="ignore"):
        weights = np.where(has_exact[:, None], exact.astype(float), 1.0 / distances)
    return (weights * labels).sum(axis=1) / weights.sum(axis=1)


def knn_scores(model: KnnModel, Q: np.ndarray) -> np.ndarray:
    """Attack score per query: weighted fraction of attack neighbours."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[1] != model.width:
        raise SchemaError(f"knn model expects {model.width} features, got {Q.shape[1]}")

    scores = np.empty(Q.shape[0])
    for start in range(0, Q.shape[0], QUERY_CHUNK):
        chunk = Q[start:start + QUERY_CHUNK]
        distances = cdist(chunk, model.X, metric=METRICS[model.metric])
        nearest = _neighbours(distances, model.k)
        rows = np.arange(len(chunk))[:, None]
        scores[start:start + len(chunk)] = _vote(distances[rows, nearest], model.y[nearest], model.weight)
    return scores


def to_payload(model: KnnModel, encode) -> dict:
    return {
        "k": model.k,
        "weight": model.weight,
        "metric": model.metric,
        "X": encode(model.X),
        "y": encode(model.y.astype(float)),
    }


def from_payload(payload: dict, decode) -> KnnModel:
    return fit_knn(decode(payload["X"]), decode(payload["y"]).astype(int),
                   k=payload["k"], weight=payload["weight"], metric=payload["metric"])
