"""One train/predict contract over the six detection learners and the three comparison baselines."""

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from . import knn, neural, svm, trees
from .config import (
    ALGORITHMS,
    BASELINES,
    DECISION_THRESHOLD,
    DEFAULT_HYPERPARAMETERS,
    DEFAULT_SEED,
    GRADIENT_CHECK_STEP,
    INFERENCE_REPETITIONS,
    MODEL_FORMAT_VERSION,
)
from .errors import ConfigError, SchemaError, TrainingError
from .feature_selection import SelectionMask
from .io_utils import decode_array, encode_array, read_json, sha256_file, write_json
from .preprocessing import StandardScaler

logger = logging.getLogger(__name__)

ATTACK = "attack"
BENIGN = "benign"
NEURAL = ("mlp", "lstm", "comp1", "comp2", "comp3")


@dataclass(frozen=True)
class LearnerSpec:
    algorithm: str
    hyperparameters: Dict[str, object] = field(default_factory=dict)
    seed: int = DEFAULT_SEED

    def get(self, name: str):
        return self.hyperparameters[name]


def default_spec(algorithm: str, seed: int = DEFAULT_SEED,
                 overrides: Optional[Dict[str, object]] = None) -> LearnerSpec:
    """Default hyperparameters, optionally overridden; unknown names are rejected."""
    if algorithm not in DEFAULT_HYPERPARAMETERS:
        raise ConfigError(f"Unknown algorithm '{algorithm}', expected one of {ALGORITHMS + BASELINES}")
    params = dict(DEFAULT_HYPERPARAMETERS[algorithm])
    for name, value in (overrides or {}).items():
        if name not in params:
            raise ConfigError(f"Unknown hyperparameter '{name}' for {algorithm}")
        params[name] = value
    return LearnerSpec(algorithm=algorithm, hyperparameters=params, seed=seed)


@dataclass(frozen=True)
class StackedModel:
    """Dense feature extractor whose last hidden layer feeds an RBF SVM."""

    network: neural.DenseParams
    svm: svm.SvmModel


@dataclass(frozen=True)
class TrainedModel:
    algorithm: str
    params: object = field(repr=False)
    width: int
    hyperparameters: Dict[str, object] = field(default_factory=dict, repr=False)
    seed: int = DEFAULT_SEED
    window: int = 1
    mask_fingerprint: Optional[str] = None
    scaler_fingerprint: Optional[str] = None
    loss_history: Tuple[float, ...] = field(default=(), repr=False, compare=False)

    @property
    def sequential(self) -> bool:
        return self.algorithm == "lstm"

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """(n, 2) benign/attack probabilities."""
        scores = predict_scores(self, X)
        return np.column_stack([1.0 - scores, scores])


def make_windows(X: np.ndarray, length: int) -> np.ndarray:
    """Stride-1 windows ending at every row; the first rows repeat row 0 as padding."""
    X = np.asarray(X, dtype=float)
    if length < 1:
        raise ConfigError(f"Window length must be >= 1, got {length}")
    if X.ndim != 2:
        raise SchemaError(f"Expected a 2-D matrix of consecutive ticks, got shape {X.shape}")
    idx = np.arange(X.shape[0])[:, None] + np.arange(-length + 1, 1)[None, :]
    return X[np.clip(idx, 0, None)]


def _check_training_data(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim not in (2, 3) or X.shape[0] != len(y):
        raise TrainingError(f"Training matrix shape {X.shape} does not match {len(y)} labels")
    if not np.all(np.isfinite(X)):
        raise TrainingError("Training data contains NaN or inf")
    if not set(np.unique(y)) <= {0, 1}:
        raise TrainingError("Labels must be 0 (benign) or 1 (attack)")
    counts = np.bincount(y, minlength=2)
    if counts.min() < 2:
        raise TrainingError(f"Need at least 2 samples per class, got benign={counts[0]}, attack={counts[1]}")
    return X, y


def train(spec: LearnerSpec, X: np.ndarray, y: np.ndarray,
          mask_fingerprint: Optional[str] = None, scaler_fingerprint: Optional[str] = None) -> TrainedModel:
    """Fit one learner. The lstm accepts ordered ticks (2-D) or prebuilt windows (3-D)."""
    X, y = _check_training_data(X, y)
    hp = spec.hyperparameters
    rng = np.random.default_rng(spec.seed)
    window = 1
    history: Tuple[float, ...] = ()
    algo = spec.algorithm

    if algo != "lstm" and X.ndim != 2:
        raise TrainingError(f"{algo} expects a 2-D matrix, got shape {X.shape}")

    started = time.perf_counter()
    if algo == "knn":
        params = knn.fit_knn(X, y, k=int(hp["k"]), weight=hp["weight"], metric=hp["metric"])
    elif algo == "dt":
        params = trees.fit_tree(X, y, int(hp["max_depth"]), int(hp["min_samples_split"]), hp["criterion"])
    elif algo == "rf":
        params = trees.fit_forest(
            X, y,
            trees=int(hp["trees"]),
            max_depth=int(hp["max_depth"]),
            min_samples_split=int(hp["min_samples_split"]),
            criterion=hp["criterion"],
            max_features=hp.get("max_features", "sqrt"),
            seed=spec.seed,
            n_jobs=int(hp.get("n_jobs", 1)),
        )
    elif algo == "svm":
        if hp.get("kernel", "rbf") != "rbf":
            raise ConfigError(f"Only the rbf kernel is supported, got {hp['kernel']}")
        params = svm.fit_svm(X, y, C=float(hp["C"]), gamma=hp["gamma"],
                             tol=float(hp.get("tol", 1e-3)), max_passes=int(hp.get("max_passes", 10000)))
    elif algo == "lstm":
        window = int(hp["window"])
        windows = X if X.ndim == 3 else make_windows(X, window)
        if windows.shape[1] != window:
            raise SchemaError(f"lstm configured for windows of {window}, got {windows.shape[1]}")
        params = neural.init_lstm(windows.shape[2], int(hp["hidden"]), int(hp["layers"]), rng)
        history = tuple(neural.train_network(params, neural.lstm_loss_and_grads, windows, y,
                                             float(hp["lr"]), int(hp["batch"]), int(hp["epochs"]), rng))
    elif algo in ("mlp", "comp1", "comp2", "comp3"):
        params = neural.init_dense(X.shape[1], hp["hidden"], rng, float(hp.get("dropout", 0.0)))
        history = tuple(neural.train_network(params, neural.dense_loss_and_grads, X, y,
                                             float(hp["lr"]), int(hp["batch"]), int(hp["epochs"]), rng))
        if algo == "comp2":
            features = neural.dense_hidden(params, X)
            params = StackedModel(network=params,
                                  svm=svm.fit_svm(features, y, C=float(hp["svm_C"]), gamma=hp["svm_gamma"]))
    else:
        raise ConfigError(f"Unknown algorithm '{algo}'")

    width = X.shape[-1]
    logger.info(f"Trained {algo} on {X.shape[0]} samples x {width} features in {time.perf_counter() - started:.2f}s")
    return TrainedModel(
        algorithm=algo,
        params=params,
        width=width,
        hyperparameters=dict(hp),
        seed=spec.seed,
        window=window,
        mask_fingerprint=mask_fingerprint,
        scaler_fingerprint=scaler_fingerprint,
        loss_history=history,
    )


def _require_fitted(model: TrainedModel) -> None:
    if model is None or model.params is None:
        raise TrainingError("Model is not fitted")


def predict_scores(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    """Attack probability per row. For the lstm, a 2-D matrix is treated as consecutive ticks."""
    _require_fitted(model)
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != model.width:
        raise SchemaError(f"{model.algorithm} model expects {model.width} features, got {X.shape[-1]}")

    params = model.params
    if model.algorithm == "lstm":
        windows = X if X.ndim == 3 else make_windows(np.atleast_2d(X), model.window)
        if windows.shape[1] != model.window:
            raise SchemaError(f"lstm expects windows of {model.window} ticks, got {windows.shape[1]}")
        return neural.lstm_predict_proba(params, windows)[:, 1]

    X = np.atleast_2d(X)
    if model.algorithm == "knn":
        return knn.knn_scores(params, X)
    if model.algorithm in ("dt", "rf", "svm"):
        return params.predict_proba(X)
    if model.algorithm == "comp2":
        return params.svm.predict_proba(neural.dense_hidden(params.network, X))
    return neural.dense_predict_proba(params, X)[:, 1]


def predict_batch(model: TrainedModel, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(0/1 classes, attack scores); a score of exactly 0.5 is an attack."""
    scores = predict_scores(model, X)
    return (scores >= DECISION_THRESHOLD).astype(int), scores


def predict(model: TrainedModel, values: np.ndarray) -> Tuple[str, float]:
    """Verdict for one feature vector (or one window for the lstm)."""
    if model is not None and model.sequential:
        return predict_sequence(model, values)
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise SchemaError(f"Expected a single feature vector, got shape {values.shape}")
    classes, scores = predict_batch(model, values[None, :])
    return (ATTACK if classes[0] else BENIGN), float(scores[0])


def predict_sequence(model: TrainedModel, window: np.ndarray) -> Tuple[str, float]:
    """Verdict for the last tick of a window of consecutive ticks."""
    _require_fitted(model)
    if not model.sequential:
        raise TrainingError(f"{model.algorithm} is not a sequence model")
    window = np.asarray(window, dtype=float)
    if window.ndim != 2 or window.shape[0] != model.window:
        raise SchemaError(f"lstm needs a window of {model.window} ticks, got shape {window.shape}")
    classes, scores = predict_batch(model, window[None, :, :])
    return (ATTACK if classes[0] else BENIGN), float(scores[0])


def inference_time(model: TrainedModel, X: np.ndarray, repetitions: int = INFERENCE_REPETITIONS) -> float:
    """Mean wall-clock seconds per sample over `repetitions` batch passes."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise SchemaError("Inference timing needs a non-empty batch")
    if model.sequential and X.ndim == 2:
        X = make_windows(X, model.window)

    elapsed = []
    for _ in range(max(1, repetitions)):
        started = time.perf_counter()
        predict_scores(model, X)
        elapsed.append(time.perf_counter() - started)
    return float(np.mean(elapsed)) / X.shape[0]


@dataclass(frozen=True)
class GradientCheckResult:
    max_relative_error: float
    analytic_norm: float
    n_parameters: int


def gradient_check(spec: LearnerSpec, X: np.ndarray, y: np.ndarray,
                   params=None, step: float = GRADIENT_CHECK_STEP) -> GradientCheckResult:
    """Compare backprop gradients with central differences on a tiny network.

    `params` may supply a prebuilt network (e.g. a saturated one); otherwise a
    fresh one is initialized from the spec.
    """
    if spec.algorithm not in NEURAL:
        raise ConfigError(f"Gradient check applies to neural learners, not {spec.algorithm}")
    X = np.asarray(X, dtype=float)
    hp = spec.hyperparameters
    rng = np.random.default_rng(spec.seed)

    if spec.algorithm == "lstm":
        windows = X if X.ndim == 3 else make_windows(X, int(hp["window"]))
        if params is None:
            params = neural.init_lstm(windows.shape[2], int(hp["hidden"]), int(hp["layers"]), rng)
        worst, norm, count = neural.numerical_gradient_check(params, neural.lstm_loss_and_grads, windows, y, step)
    else:
        if params is None:
            params = neural.init_dense(X.shape[1], hp["hidden"], rng)
        params = replace(params, dropout=0.0) if params.dropout else params
        worst, norm, count = neural.numerical_gradient_check(params, neural.dense_loss_and_grads, X, y, step)

    logger.debug(f"Gradient check {spec.algorithm}: max relative error {worst:.2e} over {count} parameters")
    return GradientCheckResult(max_relative_error=worst, analytic_norm=norm, n_parameters=count)


# Persistence

def _params_to_payload(model: TrainedModel) -> dict:
    params = model.params
    algo = model.algorithm
    if algo == "knn":
        return knn.to_payload(params, encode_array)
    if algo == "dt":
        return trees.tree_to_payload(params, encode_array)
    if algo == "rf":
        return trees.forest_to_payload(params, encode_array)
    if algo == "svm":
        return svm.to_payload(params, encode_array)
    if algo == "comp2":
        return {
            "network": neural.params_to_payload(params.network, encode_array),
            "svm": svm.to_payload(params.svm, encode_array),
        }
    return neural.params_to_payload(params, encode_array)


def _params_from_payload(algo: str, payload: dict):
    if algo == "knn":
        return knn.from_payload(payload, decode_array)
    if algo == "dt":
        return trees.tree_from_payload(payload, decode_array)
    if algo == "rf":
        return trees.forest_from_payload(payload, decode_array)
    if algo == "svm":
        return svm.from_payload(payload, decode_array)
    if algo == "comp2":
        return StackedModel(
            network=neural.params_from_payload(payload["network"], decode_array),
            svm=svm.from_payload(payload["svm"], decode_array),
        )
    if algo in NEURAL:
        return neural.params_from_payload(payload, decode_array)
    raise SchemaError(f"Unknown algorithm in model file: '{algo}'")


@dataclass(frozen=True)
class ModelBundle:
    """A trained model together with the scaler and mask it was trained under."""

    model: TrainedModel
    scaler: Optional[StandardScaler] = None
    mask: Optional[SelectionMask] = None
    digest: Optional[str] = None


def save_model(path: Path, model: TrainedModel, scaler: Optional[StandardScaler] = None,
               mask: Optional[SelectionMask] = None) -> str:
    """Write a versioned model file and return its SHA-256 digest."""
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "algorithm": model.algorithm,
        "width": model.width,
        "window": model.window,
        "seed": model.seed,
        "hyperparameters": model.hyperparameters,
        "mask_fingerprint": model.mask_fingerprint,
        "scaler_fingerprint": model.scaler_fingerprint,
        "params": _params_to_payload(model),
        "scaler": scaler.to_dict() if scaler is not None else None,
        "mask": mask.to_dict() if mask is not None else None,
    }
    write_json(path, payload)
    return sha256_file(path)


def load_model(path: Path) -> ModelBundle:
    path = Path(path)
    payload = read_json(path)
    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version != MODEL_FORMAT_VERSION:
        raise SchemaError(f"{path.name}: unsupported model format version {version!r}")

    try:
        algo = payload["algorithm"]
        model = TrainedModel(
            algorithm=algo,
            params=_params_from_payload(algo, payload["params"]),
            width=int(payload["width"]),
            hyperparameters=dict(payload.get("hyperparameters", {})),
            seed=int(payload.get("seed", DEFAULT_SEED)),
            window=int(payload.get("window", 1)),
            mask_fingerprint=payload.get("mask_fingerprint"),
            scaler_fingerprint=payload.get("scaler_fingerprint"),
        )
    except KeyError as e:
        raise SchemaError(f"{path.name}: missing model field {e}") from e

    scaler = StandardScaler.from_dict(payload["scaler"]) if payload.get("scaler") else None
    mask = SelectionMask.from_dict(payload["mask"]) if payload.get("mask") else None
    if mask is not None and model.mask_fingerprint and mask.fingerprint != model.mask_fingerprint:
        raise SchemaError(f"{path.name}: mask does not match the model's training provenance")
    if scaler is not None and model.scaler_fingerprint and scaler.fingerprint != model.scaler_fingerprint:
        raise SchemaError(f"{path.name}: scaler does not match the model's training provenance")

    logger.info(f"Loaded {algo} model from {path.name}")
    return ModelBundle(model=model, scaler=scaler, mask=mask, digest=sha256_file(path))
