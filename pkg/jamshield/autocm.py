"""Automated classification module: online detection under sensitivity monitoring,
and offline re-labeling, feature re-selection, cross-validated model selection
and atomic detector swaps."""

import logging
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import (
    ALGORITHMS,
    BASELINES,
    BUFFER_CAPACITY,
    CV_FOLDS,
    DEFAULT_SEED,
    DEFAULT_SELECTION_RULE,
    DEFAULT_THRESHOLDS,
    MIN_BUFFER,
    REPORT_METRICS,
    REPORT_SCHEMA_VERSION,
    SELECTED_FEATURES,
    SELECTION_TIE_TOLERANCE,
    VOTE_WEIGHT_MI,
    VOTE_WEIGHT_PCA,
    WINDOW_SIZE,
)
from .errors import ConfigError, JamShieldError, NoCandidateError, SchemaError
from .feature_selection import SelectionMask, apply_mask, mask_diff, select_features
from .io_utils import canonical_json, read_json, sha256_array, sha256_text
from .labeling import distress_indices, fit_labeler, label_arrays
from .learners import (
    ATTACK,
    BENIGN,
    LearnerSpec,
    TrainedModel,
    default_spec,
    inference_time,
    make_windows,
    predict_batch,
    train,
)
from .metrics import ConfusionMatrix, MetricsReport, compute_metrics, summarize
from .preprocessing import FoldPlan, StandardScaler, fit_scaler, make_folds
from .schema import FeatureManifest, LabeledSample, samples_to_matrix

logger = logging.getLogger(__name__)

SELECTION_RULES = ("f1_latency", "f1")
LABEL_SOURCES = ("auto", "pseudo", "ground_truth")
ONLINE = "online"
OPTIMIZING = "optimizing"
KEEP = "keep"
TRIGGER = "trigger"


@dataclass
class AutoCmConfig:
    thresholds: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    window_size: int = WINDOW_SIZE
    min_buffer: int = MIN_BUFFER
    buffer_capacity: int = BUFFER_CAPACITY
    snapshot_delay: Optional[int] = None  # defaults to window_size
    weights: Dict[str, float] = field(default_factory=lambda: {"pca": VOTE_WEIGHT_PCA, "mi": VOTE_WEIGHT_MI})
    k_features: int = SELECTED_FEATURES
    folds: int = CV_FOLDS
    selection_rule: str = DEFAULT_SELECTION_RULE
    label_source: str = "auto"
    learners: Tuple[str, ...] = ALGORITHMS
    overrides: Dict[str, Dict[str, object]] = field(default_factory=dict)
    background: bool = False
    seed: int = DEFAULT_SEED

    @property
    def effective_snapshot_delay(self) -> int:
        return self.window_size if self.snapshot_delay is None else self.snapshot_delay

    def validate(self) -> None:
        for algo, threshold in self.thresholds.items():
            if algo not in ALGORITHMS + BASELINES:
                raise ConfigError(f"Threshold given for unknown algorithm '{algo}'")
            if not 0.0 < float(threshold) < 1.0:
                raise ConfigError(f"Threshold for {algo} must be in (0, 1), got {threshold}")
        if self.window_size < 1:
            raise ConfigError(f"window_size must be >= 1, got {self.window_size}")
        if self.min_buffer < 1 or self.buffer_capacity < self.min_buffer:
            raise ConfigError(
                f"Need 1 <= min_buffer <= buffer_capacity, got {self.min_buffer} and {self.buffer_capacity}"
            )
        if self.snapshot_delay is not None and self.snapshot_delay < 0:
            raise ConfigError(f"snapshot_delay must be >= 0, got {self.snapshot_delay}")
        if set(self.weights) != {"pca", "mi"}:
            raise ConfigError(f"weights must have exactly 'pca' and 'mi', got {sorted(self.weights)}")
        if min(self.weights.values()) < 0 or sum(self.weights.values()) <= 0:
            raise ConfigError(f"Vote weights must be >= 0 and not both zero: {self.weights}")
        if self.k_features < 1:
            raise ConfigError(f"k_features must be >= 1, got {self.k_features}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.selection_rule not in SELECTION_RULES:
            raise ConfigError(f"Unknown selection rule '{self.selection_rule}', expected one of {SELECTION_RULES}")
        if self.label_source not in LABEL_SOURCES:
            raise ConfigError(f"Unknown label source '{self.label_source}', expected one of {LABEL_SOURCES}")
        if not self.learners:
            raise ConfigError("At least one learner is required")
        unknown = [a for a in self.learners if a not in ALGORITHMS + BASELINES]
        if unknown:
            raise ConfigError(f"Unknown learner(s): {unknown}")
        for algo, params in self.overrides.items():
            default_spec(algo, self.seed, params)

    @classmethod
    def from_dict(cls, payload: dict) -> "AutoCmConfig":
        if not isinstance(payload, dict):
            raise ConfigError("AutoCM config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"Unknown AutoCM config key(s): {sorted(unknown)}")

        data = dict(payload)
        if "thresholds" in data:
            data["thresholds"] = {**DEFAULT_THRESHOLDS, **data["thresholds"]}
        if "weights" in data:
            data["weights"] = {"pca": VOTE_WEIGHT_PCA, "mi": VOTE_WEIGHT_MI, **data["weights"]}
        if "learners" in data:
            data["learners"] = tuple(data["learners"])
        config = cls(**data)
        config.validate()
        return config

    @classmethod
    def load(cls, path: Path) -> "AutoCmConfig":
        return cls.from_dict(read_json(path))


def sensitivity(tp: int, fn: int) -> Optional[float]:
    """TP / (TP + FN), or None when there are no reference positives."""
    if tp < 0 or fn < 0:
        raise ValueError(f"Counts must be >= 0, got tp={tp}, fn={fn}")
    if tp + fn == 0:
        return None
    return tp / (tp + fn)


class SensitivityWindow:
    """Sliding window of (verdict, reference) pairs with running TP/FN counts."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError(f"Window capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._pairs: Deque[Tuple[int, int]] = deque()
        self.tp = 0
        self.fn = 0

    def __len__(self) -> int:
        return len(self._pairs)

    @property
    def full(self) -> bool:
        return len(self._pairs) >= self.capacity

    def _count(self, pair: Tuple[int, int], sign: int) -> None:
        verdict, reference = pair
        if reference == 1:
            if verdict == 1:
                self.tp += sign
            else:
                self.fn += sign

    def push(self, verdict: int, reference: int) -> None:
        if len(self._pairs) >= self.capacity:
            self._count(self._pairs.popleft(), -1)
        pair = (int(verdict), int(reference))
        self._pairs.append(pair)
        self._count(pair, +1)

    def sensitivity(self) -> Optional[float]:
        return sensitivity(self.tp, self.fn)

    def reset(self) -> None:
        self._pairs.clear()
        self.tp = 0
        self.fn = 0


@dataclass(frozen=True)
class ActiveDetector:
    """The (model, mask, scaler) triple that produces every verdict; replaced as a unit."""

    algorithm: str
    model: TrainedModel
    mask: SelectionMask
    scaler: StandardScaler

    def __post_init__(self):
        if self.model.mask_fingerprint and self.model.mask_fingerprint != self.mask.fingerprint:
            raise SchemaError(f"{self.algorithm} model was trained under a different feature mask")
        if self.model.scaler_fingerprint and self.model.scaler_fingerprint != self.scaler.fingerprint:
            raise SchemaError(f"{self.algorithm} model was trained under a different scaler")

    def features(self, raw: np.ndarray) -> np.ndarray:
        return apply_mask(self.mask, self.scaler.transform(raw))

    def score_matrix(self, raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Classes and scores for ordered raw ticks."""
        Z = self.features(np.atleast_2d(raw))
        if self.model.sequential:
            Z = make_windows(Z, self.model.window)
        return predict_batch(self.model, Z)

    def verdict(self, history: Sequence[np.ndarray]) -> Tuple[str, float]:
        """Verdict for the newest tick in `history` (raw vectors, oldest first)."""
        if self.model.sequential:
            rows = list(history)[-self.model.window:]
            rows = [rows[0]] * (self.model.window - len(rows)) + rows
            Z = self.features(np.vstack(rows))[None, :, :]
        else:
            Z = self.features(np.asarray(history[-1])[None, :])
        classes, scores = predict_batch(self.model, Z)
        return (ATTACK if classes[0] else BENIGN), float(scores[0])


@dataclass(frozen=True)
class Event:
    timestamp: float
    seq: int
    kind: str
    details: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"timestamp": self.timestamp, "seq": self.seq, "kind": self.kind, "details": self.details}


@dataclass(frozen=True)
class Verdict:
    timestamp: float
    cls: str
    score: float
    active_algo: str

    @property
    def binary(self) -> int:
        return 1 if self.cls == ATTACK else 0

    def to_dict(self) -> dict:
        return {"timestamp": self.timestamp, "class": self.cls, "score": self.score, "active_algo": self.active_algo}


@dataclass(frozen=True)
class AlgorithmResult:
    algorithm: str
    summary: Dict[str, Dict[str, float]] = field(default_factory=dict)
    inference_time: float = float("nan")
    fold_reports: Tuple[MetricsReport, ...] = field(default=(), repr=False)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and "f1" in self.summary

    def mean(self, metric: str) -> float:
        return self.summary[metric]["mean"]

    def to_dict(self) -> dict:
        payload = {"algorithm": self.algorithm, "error": self.error}
        if self.ok:
            payload["metrics"] = self.summary
            payload["folds"] = [r.to_dict() for r in self.fold_reports]
        return payload


@dataclass(frozen=True)
class EvaluationReport:
    results: Tuple[AlgorithmResult, ...]
    chosen: Optional[str] = None
    reason: str = ""
    folds: int = 0
    mask_fingerprint: Optional[str] = None

    def result(self, algorithm: str) -> AlgorithmResult:
        for r in self.results:
            if r.algorithm == algorithm:
                return r
        raise KeyError(algorithm)

    def rows(self) -> Dict[str, Dict[str, float]]:
        """Fold-mean metrics per successful algorithm."""
        return {
            r.algorithm: {metric: r.mean(metric) for metric in REPORT_METRICS}
            for r in self.results if r.ok
        }

    def timings(self) -> Dict[str, float]:
        """Mean seconds per sample; wall-clock, so kept out of rows() and to_dict()."""
        return {r.algorithm: r.inference_time for r in self.results if r.ok}

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "folds": self.folds,
            "mask_fingerprint": self.mask_fingerprint,
            "chosen": self.chosen,
            "reason": self.reason,
            "algorithms": [r.to_dict() for r in self.results],
        }

    @property
    def digest(self) -> str:
        return sha256_text(canonical_json(self.to_dict()))[:16]


def _selection_order(algorithm: str) -> int:
    order = ALGORITHMS + BASELINES
    return order.index(algorithm) if algorithm in order else len(order)


def choose(results: Sequence[AlgorithmResult], rule: str = DEFAULT_SELECTION_RULE,
           tolerance: float = SELECTION_TIE_TOLERANCE) -> Tuple[str, str]:
    """(algorithm, reason): best mean F1, then lower inference time, then fixed order."""
    if rule not in SELECTION_RULES:
        raise ConfigError(f"Unknown selection rule '{rule}'")
    candidates = [r for r in results if r.ok]
    if not candidates:
        raise NoCandidateError("Every algorithm failed; nothing to select")

    best_f1 = max(r.mean("f1") for r in candidates)
    tied = [r for r in candidates if best_f1 - r.mean("f1") <= tolerance]
    if len(tied) == 1:
        return tied[0].algorithm, f"highest mean F1 ({best_f1:.4f})"

    if rule == "f1_latency":
        fastest = min(r.inference_time for r in tied)
        tied = [r for r in tied if r.inference_time == fastest]
        if len(tied) == 1:
            return tied[0].algorithm, f"F1 tie at {best_f1:.4f}, lowest inference time"

    winner = min(tied, key=lambda r: _selection_order(r.algorithm))
    return winner.algorithm, f"F1 tie at {best_f1:.4f}, fixed algorithm order"


def select_best(report: EvaluationReport, rule: str = DEFAULT_SELECTION_RULE) -> str:
    return choose(report.results, rule)[0]


def evaluate_all(
    X: np.ndarray,
    labels: np.ndarray,
    mask: SelectionMask,
    specs: Sequence[LearnerSpec],
    folds: FoldPlan,
    selection_rule: str = DEFAULT_SELECTION_RULE,
) -> EvaluationReport:
    """Cross-validate every spec on ordered raw ticks; each fold fits its own scaler.

    A learner that fails is recorded with its error and the others continue.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if len(folds) != len(labels):
        raise SchemaError(f"Fold plan covers {len(folds)} samples, dataset has {len(labels)}")

    results = []
    for spec in specs:
        reports = []
        timings = []
        try:
            for fold in range(folds.k):
                train_idx = folds.train_indices(fold)
                test_idx = folds.test_indices(fold)
                scaler = fit_scaler(X[train_idx])
                Z = apply_mask(mask, scaler.transform(X))
                if spec.algorithm == "lstm":
                    Z = make_windows(Z, int(spec.hyperparameters["window"]))

                model = train(spec, Z[train_idx], labels[train_idx], mask.fingerprint, scaler.fingerprint)
                predicted, _ = predict_batch(model, Z[test_idx])
                reports.append(compute_metrics(ConfusionMatrix.from_labels(labels[test_idx], predicted)))
                timings.append(inference_time(model, Z[test_idx]))
            result = AlgorithmResult(
                algorithm=spec.algorithm,
                summary=summarize(reports),
                inference_time=float(np.mean(timings)),
                fold_reports=tuple(reports),
            )
            logger.info(
                f"{spec.algorithm}: mean F1 {result.mean('f1'):.4f}, "
                f"detection rate {result.mean('detection_rate'):.4f} over {folds.k} folds"
            )
        except (JamShieldError, ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
            logger.warning(f"{spec.algorithm} failed during evaluation: {e}")
            result = AlgorithmResult(algorithm=spec.algorithm, error=f"{type(e).__name__}: {e}")
        results.append(result)

    try:
        chosen, reason = choose(results, selection_rule)
    except NoCandidateError:
        chosen, reason = None, "every algorithm failed"
    return EvaluationReport(
        results=tuple(results),
        chosen=chosen,
        reason=reason,
        folds=folds.k,
        mask_fingerprint=mask.fingerprint,
    )


@dataclass(frozen=True)
class OptimizationResult:
    detector: Optional[ActiveDetector]
    report: Optional[EvaluationReport] = None
    label_source: str = ""
    skipped: Optional[str] = None  # reason when no detector was produced


def buffered_labels(samples: Sequence[LabeledSample],
                    references: Optional[Sequence[Optional[int]]] = None) -> Optional[np.ndarray]:
    """Per-tick reference label, else the sample's own label; None when any tick has neither."""
    if not samples:
        return None
    if references is not None and len(references) != len(samples):
        raise SchemaError(f"{len(references)} reference labels for {len(samples)} samples")
    labels = np.empty(len(samples), dtype=int)
    for i, sample in enumerate(samples):
        reference = references[i] if references is not None else None
        if reference is not None:
            labels[i] = int(reference)
        elif sample.label is not None:
            labels[i] = sample.label.binary
        else:
            return None
    return labels


def resolve_labels(samples: Sequence[LabeledSample], X: np.ndarray, config: AutoCmConfig,
                   manifest: FeatureManifest,
                   references: Optional[Sequence[Optional[int]]] = None) -> Tuple[np.ndarray, np.ndarray, str]:
    """(labels, confidence, source): known labels when configured or available, otherwise k-means + EM."""
    known = buffered_labels(samples, references)
    source = config.label_source
    if source == "auto":
        source = "ground_truth" if known is not None else "pseudo"
    if source == "ground_truth":
        if known is None:
            raise SchemaError("Ground-truth labels requested but some samples carry neither a label nor a reference")
        return known, np.ones(len(known)), source

    scaled = fit_scaler(X).transform(X)
    model = fit_labeler(scaled, distress_indices(manifest), seed=config.seed)
    labels, confidence = label_arrays(model, scaled)
    return labels, confidence, source


def optimize_detector(samples: Sequence[LabeledSample], config: AutoCmConfig, manifest: FeatureManifest,
                      references: Optional[Sequence[Optional[int]]] = None) -> OptimizationResult:
    """Label, scale, select features, cross-validate the learners and train the winner on all samples."""
    X = samples_to_matrix(samples)
    labels, _, source = resolve_labels(samples, X, config, manifest, references)
    counts = np.bincount(labels, minlength=2)
    if counts.min() < config.folds:
        reason = f"labels too imbalanced for {config.folds}-fold CV (benign={counts[0]}, attack={counts[1]})"
        logger.warning(f"Optimization skipped: {reason}")
        return OptimizationResult(detector=None, label_source=source, skipped=reason)

    scaler = fit_scaler(X)
    scaled = scaler.transform(X)
    mask = select_features(scaled, labels, k=min(config.k_features, X.shape[1]),
                           w_pca=config.weights["pca"], w_mi=config.weights["mi"])
    mask = SelectionMask(
        selected=mask.selected,
        width=mask.width,
        pca_scores=mask.pca_scores,
        mi_scores=mask.mi_scores,
        combined_scores=mask.combined_scores,
        w_pca=mask.w_pca,
        w_mi=mask.w_mi,
        provenance={"dataset_sha256": sha256_array(X),
                    "seed": config.seed, "label_source": source},
    )

    specs = [default_spec(a, config.seed, config.overrides.get(a)) for a in config.learners]
    folds = make_folds(labels, config.folds, config.seed)
    report = evaluate_all(X, labels, mask, specs, folds, config.selection_rule)
    if report.chosen is None:
        raise NoCandidateError("Every algorithm failed during cross-validation")

    chosen_spec = next(s for s in specs if s.algorithm == report.chosen)
    model = train(chosen_spec, apply_mask(mask, scaled), labels, mask.fingerprint, scaler.fingerprint)
    detector = ActiveDetector(algorithm=report.chosen, model=model, mask=mask, scaler=scaler)
    logger.info(f"Selected {report.chosen}: {report.reason}")
    return OptimizationResult(detector=detector, report=report, label_source=source)


@dataclass
class AutoCmState:
    """Single-owner state of the online/offline control loop."""

    config: AutoCmConfig
    manifest: FeatureManifest
    detector: ActiveDetector
    window: SensitivityWindow
    buffer: Deque[LabeledSample]
    history: Deque[np.ndarray]
    references: Deque[Optional[int]] = field(default_factory=deque)  # aligned with buffer
    mode: str = ONLINE
    events: List[Event] = field(default_factory=list)
    suspended: bool = False  # threshold checks wait for a refilled window
    snapshot_countdown: Optional[int] = None
    se_at_trigger: Optional[float] = None
    last_report: Optional[EvaluationReport] = None
    clock: float = float("-inf")
    executor: Optional[ThreadPoolExecutor] = field(default=None, repr=False)
    pending: Optional[Future] = field(default=None, repr=False)

    @property
    def active_algorithm(self) -> str:
        return self.detector.algorithm

    @property
    def threshold(self) -> Optional[float]:
        return self.config.thresholds.get(self.detector.algorithm)


def log_event(state: AutoCmState, kind: str, timestamp: Optional[float] = None, **details) -> Event:
    ts = state.clock if timestamp is None else max(float(timestamp), state.clock)
    state.clock = ts
    event = Event(timestamp=ts, seq=len(state.events), kind=kind, details=details)
    state.events.append(event)
    logger.info(f"AutoCM event {kind}: {details}")
    return event


def initial_state(detector: ActiveDetector, config: AutoCmConfig, manifest: FeatureManifest) -> AutoCmState:
    config.validate()
    window = detector.model.window if detector.model.sequential else 1
    return AutoCmState(
        config=config,
        manifest=manifest,
        detector=detector,
        window=SensitivityWindow(config.window_size),
        buffer=deque(maxlen=config.buffer_capacity),
        history=deque(maxlen=max(window, 1)),
        references=deque(maxlen=config.buffer_capacity),
    )


def bootstrap_state(samples: Sequence[LabeledSample], config: AutoCmConfig,
                    manifest: FeatureManifest) -> AutoCmState:
    """Initial state from one offline optimization pass over a labeled dataset."""
    config.validate()
    result = optimize_detector(samples, config, manifest)
    if result.detector is None:
        raise NoCandidateError(f"Cannot bootstrap a detector: {result.skipped}")
    state = initial_state(result.detector, config, manifest)
    state.last_report = result.report
    return state


def check_threshold(state: AutoCmState) -> str:
    """'trigger' iff online, checks active, Se defined and strictly below the active threshold."""
    if state.mode != ONLINE or state.suspended:
        return KEEP
    threshold = state.threshold
    se = state.window.sensitivity()
    if threshold is None or se is None:
        return KEEP
    return TRIGGER if se < threshold else KEEP


def _record_reference(state: AutoCmState, verdict: int, reference: int, timestamp: float) -> None:
    state.window.push(verdict, reference)
    if state.suspended and state.window.full:
        state.suspended = False
    if check_threshold(state) == TRIGGER:
        state.mode = OPTIMIZING
        state.se_at_trigger = state.window.sensitivity()
        state.snapshot_countdown = state.config.effective_snapshot_delay
        log_event(state, "trigger", timestamp, algorithm=state.active_algorithm,
                  sensitivity=state.se_at_trigger, threshold=state.threshold)


def install(state: AutoCmState, result: OptimizationResult, timestamp: Optional[float] = None) -> AutoCmState:
    """Swap in an optimization result (or record the skip) and return to online mode."""
    if result.detector is None:
        log_event(state, "optimization_skipped", timestamp, reason=result.skipped)
    else:
        old = state.detector
        diff = mask_diff(old.mask, result.detector.mask)
        if diff["changed"]:
            log_event(state, "mask_changed", timestamp, **diff)
        state.detector = result.detector
        state.last_report = result.report
        log_event(
            state, "swap", timestamp,
            old=old.algorithm,
            new=result.detector.algorithm,
            sensitivity_at_trigger=state.se_at_trigger,
            label_source=result.label_source,
            report_digest=result.report.digest if result.report else None,
        )
        window = result.detector.model.window if result.detector.model.sequential else 1
        if state.history.maxlen != window:
            state.history = deque(state.history, maxlen=window)

    state.mode = ONLINE
    state.window.reset()
    state.suspended = True
    state.snapshot_countdown = None
    state.pending = None
    return state


def offline_optimize(state: AutoCmState, samples: Sequence[LabeledSample], timestamp: Optional[float] = None,
                     references: Optional[Sequence[Optional[int]]] = None) -> AutoCmState:
    """Run the offline pipeline on a buffer snapshot and install the outcome."""
    if len(samples) < state.config.min_buffer:
        logger.warning(f"Buffer holds {len(samples)} samples, {state.config.min_buffer} required; keeping current model")
        return install(state, OptimizationResult(
            detector=None, skipped=f"buffer too small ({len(samples)} < {state.config.min_buffer})"), timestamp)
    try:
        result = optimize_detector(samples, state.config, state.manifest, references)
    except (NoCandidateError, JamShieldError) as e:
        logger.warning(f"Offline optimization failed: {e}")
        result = OptimizationResult(detector=None, skipped=str(e))
    return install(state, result, timestamp)


def _poll_pending(state: AutoCmState, timestamp: float) -> None:
    if state.pending is None or not state.pending.done():
        return
    future = state.pending
    try:
        result = future.result()
    except JamShieldError as e:
        logger.warning(f"Background optimization failed: {e}")
        result = OptimizationResult(detector=None, skipped=str(e))
    install(state, result, timestamp)


def _snapshot(state: AutoCmState, timestamp: float) -> None:
    samples = list(state.buffer)
    references = list(state.references)
    log_event(state, "snapshot", timestamp, size=len(samples))
    state.snapshot_countdown = None
    if state.config.background and len(samples) >= state.config.min_buffer:
        if state.executor is None:
            state.executor = ThreadPoolExecutor(max_workers=1)
        state.pending = state.executor.submit(optimize_detector, samples, state.config, state.manifest, references)
    else:
        offline_optimize(state, samples, timestamp, references)


def online_step(state: AutoCmState, sample: LabeledSample,
                reference: Optional[int] = None) -> Tuple[Optional[Verdict], AutoCmState]:
    """Emit a verdict for one raw tick and advance the control loop."""
    width = len(state.manifest)
    if len(sample.values) != width:
        log_event(state, "sample_rejected", sample.timestamp,
                  reason=f"expected {width} values, got {len(sample.values)}")
        return None, state

    _poll_pending(state, sample.timestamp)

    state.history.append(sample.values)
    detector = state.detector
    cls, score = detector.verdict(list(state.history))
    verdict = Verdict(timestamp=sample.timestamp, cls=cls, score=score, active_algo=detector.algorithm)
    state.clock = max(state.clock, sample.timestamp)
    state.buffer.append(sample)
    state.references.append(None if reference is None else int(reference))

    if reference is not None and state.mode == ONLINE:
        _record_reference(state, verdict.binary, int(reference), sample.timestamp)

    if state.mode == OPTIMIZING and state.pending is None and state.snapshot_countdown is not None:
        if state.snapshot_countdown <= 0:
            _snapshot(state, sample.timestamp)
        else:
            state.snapshot_countdown -= 1

    return verdict, state


def audit_step(state: AutoCmState, batch: Sequence[LabeledSample]) -> AutoCmState:
    """Estimate Se without ground truth: pseudo-label a batch and replay it through the active detector."""
    if not batch:
        return state
    timestamp = batch[-1].timestamp
    X = samples_to_matrix(batch)
    try:
        scaled = state.detector.scaler.transform(X)
        labeler = fit_labeler(scaled, distress_indices(state.manifest), seed=state.config.seed)
        pseudo, _ = label_arrays(labeler, scaled)
    except JamShieldError as e:
        log_event(state, "audit", timestamp, size=len(batch), error=str(e))
        return state

    verdicts, _ = state.detector.score_matrix(X)
    for v, ref in zip(verdicts, pseudo):
        if state.mode != ONLINE:
            break
        _record_reference(state, int(v), int(ref), timestamp)
    log_event(state, "audit", timestamp, size=len(batch), pseudo_attacks=int(pseudo.sum()),
              sensitivity=state.window.sensitivity())
    return state


def finish(state: AutoCmState) -> AutoCmState:
    """Wait for a background optimization, install it and release the worker."""
    if state.pending is not None:
        wait([state.pending])
        _poll_pending(state, state.clock)
    if state.executor is not None:
        state.executor.shutdown(wait=True)
        state.executor = None
    return state


def transitions(state: AutoCmState) -> List[str]:
    return [e.kind for e in state.events]
