"""RBF-kernel support vector machine trained with sequential minimal optimization."""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from .errors import ConfigError, SchemaError

logger = logging.getLogger(__name__)

KERNEL_CACHE_BYTES = 256 * 1024 * 1024
PREDICT_CHUNK = 512
TAU = 1e-12
PLATT_MAX_ITER = 100
PLATT_MIN_STEP = 1e-10
PLATT_RIDGE = 1e-12


def resolve_gamma(gamma: Union[str, float], X: np.ndarray) -> float:
    """'scale' is 1 / (n_features * variance of all training values)."""
    if gamma == "scale":
        variance = float(np.asarray(X, dtype=float).var())
        return 1.0 / (X.shape[1] * variance) if variance > 0 else 1.0
    try:
        value = float(gamma)
    except (TypeError, ValueError):
        raise ConfigError(f"Invalid svm gamma: {gamma!r}")
    if value <= 0:
        raise ConfigError(f"svm gamma must be > 0, got {value}")
    return value


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(A, B, metric="sqeuclidean"))


class KernelRows:
    """On-demand kernel matrix rows with a bounded LRU cache."""

    def __init__(self, X: np.ndarray, gamma: float, cache_bytes: int = KERNEL_CACHE_BYTES):
        self.X = X
        self.gamma = gamma
        self.capacity = max(2, cache_bytes // max(1, X.shape[0] * 8))
        self._rows: "OrderedDict[int, np.ndarray]" = OrderedDict()
        self.misses = 0

    def __call__(self, i: int) -> np.ndarray:
        row = self._rows.get(i)
        if row is not None:
            self._rows.move_to_end(i)
            return row
        self.misses += 1
        row = rbf_kernel(self.X[i:i + 1], self.X, self.gamma)[0]
        row[i] = 1.0
        self._rows[i] = row
        if len(self._rows) > self.capacity:
            self._rows.popitem(last=False)
        return row


@dataclass
class SmoResult:
    alpha: np.ndarray = field(repr=False)
    gradient: np.ndarray = field(repr=False)  # of 0.5 a'Qa - e'a
    bias: float
    iterations: int
    converged: bool
    violation: float


def smo_solve(kernel_row: Callable[[int], np.ndarray], y: np.ndarray, C: float,
              tol: float = 1e-3, max_iter: int = 100000) -> SmoResult:
    """Dual C-SVC by maximal-violating-pair SMO. `y` holds +1/-1."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0

    iterations = 0
    violation = np.inf
    while iterations < max_iter:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        score = -y * G
        up_scores = np.where(up, score, -np.inf)
        low_scores = np.where(low, score, np.inf)
        i = int(np.argmax(up_scores))
        j = int(np.argmin(low_scores))
        m, M = up_scores[i], low_scores[j]
        violation = m - M
        if violation < tol:
            break

        Ki = kernel_row(i)
        Kj = kernel_row(j)
        eta = max(Ki[i] + Kj[j] - 2.0 * Ki[j], TAU)
        t = violation / eta

        # alpha_i moves by y_i * t, alpha_j by -y_j * t
        t = min(t, C - alpha[i] if pos[i] else alpha[i])
        t = min(t, alpha[j] if pos[j] else C - alpha[j])

        alpha[i] = min(max(alpha[i] + y[i] * t, 0.0), C)
        alpha[j] = min(max(alpha[j] - y[j] * t, 0.0), C)
        G += y * t * (Ki - Kj)
        iterations += 1

    converged = violation < tol
    free = (alpha > 0) & (alpha < C)
    if free.any():
        bias = float(np.mean(-y[free] * G[free]))
    else:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        score = -y * G
        bias = float((score[up].max() + score[low].min()) / 2.0)

    return SmoResult(alpha=alpha, gradient=G, bias=bias, iterations=iterations,
                     converged=bool(converged), violation=float(violation))


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray = field(repr=False)
    dual_coef: np.ndarray = field(repr=False)  # alpha_i * y_i
    bias: float
    gamma: float
    C: float
    # P(attack | f) = 1 / (1 + exp(platt_a * f + platt_b)); the defaults reduce to expit(f)
    platt_a: float = -1.0
    platt_b: float = 0.0

    @property
    def width(self) -> int:
        return self.support_vectors.shape[1]

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.width:
            raise SchemaError(f"svm model expects {self.width} features, got {X.shape[1]}")
        out = np.empty(X.shape[0])
        for start in range(0, X.shape[0], PREDICT_CHUNK):
            K = rbf_kernel(X[start:start + PREDICT_CHUNK], self.support_vectors, self.gamma)
            out[start:start + PREDICT_CHUNK] = K @ self.dual_coef + self.bias
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(-(self.platt_a * self.decision_function(X) + self.platt_b))


def platt_fit(decision: np.ndarray, y01: np.ndarray, tol: float = 1e-5,
              max_iter: int = PLATT_MAX_ITER) -> Tuple[float, float]:
    """Sigmoid (A, B) mapping decision values to attack probability.

    Newton steps with backtracking on the cross-entropy against smoothed
    targets (n+ + 1) / (n+ + 2) and 1 / (n- + 2), which keeps A finite on
    separable data.
    """
    f = np.asarray(decision, dtype=float)
    positive = np.asarray(y01) == 1
    n_pos = float(positive.sum())
    n_neg = float(len(f) - n_pos)
    target = np.where(positive, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def loss(a: float, b: float) -> float:
        z = a * f + b
        return float(np.sum(np.logaddexp(0.0, z) - (1.0 - target) * z))

    a, b = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    current = loss(a, b)
    for _ in range(max_iter):
        p = expit(-(a * f + b))
        residual = target - p
        gradient = np.array([f @ residual, residual.sum()])
        if np.max(np.abs(gradient)) < tol:
            break
        d = p * (1.0 - p)
        hessian = np.array([[f * f @ d + PLATT_RIDGE, f @ d], [f @ d, d.sum() + PLATT_RIDGE]])
        direction = -np.linalg.solve(hessian, gradient)
        slope = float(gradient @ direction)

        step = 1.0
        while step >= PLATT_MIN_STEP:
            trial = loss(a + step * direction[0], b + step * direction[1])
            if trial < current + 1e-4 * step * slope:
                break
            step /= 2.0
        if step < PLATT_MIN_STEP:
            logger.debug("Platt line search stalled; keeping the last sigmoid")
            break
        a += step * direction[0]
        b += step * direction[1]
        current = trial
    return float(a), float(b)


def fit_svm(X: np.ndarray, y01: np.ndarray, C: float = 1.0, gamma: Union[str, float] = "scale",
            tol: float = 1e-3, max_passes: int = 10000) -> SvmModel:
    """Fit on 0/1 labels. The iteration cap is `max_passes` sweeps of n pair updates."""
    if C <= 0:
        raise ConfigError(f"svm C must be > 0, got {C}")
    X = np.asarray(X, dtype=float)
    y = np.where(np.asarray(y01) == 1, 1.0, -1.0)
    g = resolve_gamma(gamma, X)

    rows = KernelRows(X, g)
    result = smo_solve(rows, y, C, tol=tol, max_iter=max_passes * len(y))
    if not result.converged:
        logger.warning(
            f"SMO stopped after {result.iterations} iterations with KKT violation {result.violation:.2e}"
        )
    else:
        logger.debug(f"SMO converged in {result.iterations} iterations ({rows.misses} kernel rows computed)")

    sv = result.alpha > 0
    # training decision values follow from the dual gradient: f = y * (G + 1) + b
    platt_a, platt_b = platt_fit(y * (result.gradient + 1.0) + result.bias, y01)
    return SvmModel(
        support_vectors=X[sv].copy(),
        dual_coef=(result.alpha * y)[sv],
        bias=result.bias,
        gamma=g,
        C=float(C),
        platt_a=platt_a,
        platt_b=platt_b,
    )


def to_payload(model: SvmModel, encode) -> dict:
    return {
        "support_vectors": encode(model.support_vectors),
        "dual_coef": encode(model.dual_coef),
        "bias": model.bias,
        "gamma": model.gamma,
        "C": model.C,
        "platt": [model.platt_a, model.platt_b],
    }


def from_payload(payload: dict, decode) -> SvmModel:
    return SvmModel(
        support_vectors=decode(payload["support_vectors"]),
        dual_coef=decode(payload["dual_coef"]),
        bias=float(payload["bias"]),
        gamma=float(payload["gamma"]),
        C=float(payload["C"]),
        platt_a=float(payload["platt"][0]),
        platt_b=float(payload["platt"][1]),
    )
