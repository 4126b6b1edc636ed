import argparse
import json
import logging
import os
import socket
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, TextIO, Tuple

import numpy as np
from sklearn.metrics import adjusted_rand_score

from .autocm import (
    ActiveDetector,
    AutoCmConfig,
    audit_step,
    bootstrap_state,
    evaluate_all,
    finish,
    initial_state,
    log_event,
    online_step,
    optimize_detector,
    resolve_labels,
)
from .config import (
    ALGORITHMS,
    BASELINES,
    DEFAULT_SEED,
    LOG_ENV_VAR,
    LOG_FORMAT,
    LOG_LEVELS,
    SELECTED_FEATURES,
    TRAIN_RATIO,
    VOTE_WEIGHT_MI,
    VOTE_WEIGHT_PCA,
)
from .errors import ConfigError, NoCandidateError, SchemaError, TrainingError
from .feature_selection import SelectionMask, apply_mask, identity_mask, load_mask, save_mask, select_features
from .io_utils import (
    format_value,
    load_dataset,
    parse_stream_line,
    read_json,
    read_pseudo_labels,
    save_dataset,
    sha256_file,
)
from .learners import default_spec, inference_time, load_model, make_windows, predict_batch, save_model, train
from .metrics import ConfusionMatrix, compute_metrics, render_report
from .preprocessing import fit_scaler, make_folds, stratified_split_indices
from .schema import (
    FeatureManifest,
    LabeledSample,
    binary_labels,
    class_summary,
    default_manifest,
    has_ground_truth,
    load_manifest,
    samples_to_matrix,
)
from .simulator import drift_stream, load_scenarios, mixed_dataset, simulate_segments

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_MISSING_FILE = 3
EXIT_SCHEMA = 4
EXIT_CONFIG = 5
EXIT_TRAINING = 6

DRIFT_BLOCKS_PER_PHASE = 40
LABEL_FLAGS = {"pseudo": "pseudo", "truth": "ground_truth", "auto": "auto"}


def configure_logging(level_name: Optional[str] = None) -> None:
    """Log to stderr at the level named by --log-level or JAMSHIELD_LOG (default info)."""
    requested = (level_name or os.environ.get(LOG_ENV_VAR) or "info").lower()
    level = LOG_LEVELS.get(requested)
    logging.basicConfig(
        level=getattr(logging, level or "INFO"),
        format=LOG_FORMAT,
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )
    if level is None:
        logger.warning(f"Unknown log level '{requested}', using info")


def _load_manifest(args) -> FeatureManifest:
    return load_manifest(args.manifest) if args.manifest else default_manifest()


def _load_config(args) -> AutoCmConfig:
    config = AutoCmConfig.load(args.config) if getattr(args, "config", None) else AutoCmConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "folds", None) is not None:
        config.folds = args.folds
    config.validate()
    return config


def _training_labels(samples: Sequence[LabeledSample], path: Path) -> Tuple[np.ndarray, str]:
    """Ground truth when every row carries it, otherwise the file's pseudo_label column."""
    if has_ground_truth(samples):
        return binary_labels(samples), "ground_truth"
    pseudo = read_pseudo_labels(path)
    if pseudo is None:
        raise SchemaError(f"{Path(path).name} has neither ground-truth labels nor a pseudo_label column (run `label` first)")
    return pseudo, "pseudo"


# Subcommands

def cmd_simulate(args) -> int:
    manifest = _load_manifest(args)
    seed = DEFAULT_SEED if args.seed is None else args.seed
    if args.scenario:
        samples = simulate_segments(load_scenarios(args.scenario, seed=args.seed), manifest)
    elif args.preset == "mixed":
        samples = mixed_dataset(manifest, args.benign_ticks, args.attack_ticks, seed=seed)
    else:
        samples, boundary = drift_stream(manifest, seed=seed, blocks_per_phase=args.blocks_per_phase)
        logger.info(f"Drift phase two starts at t={boundary:g} s")

    save_dataset(args.out, samples, manifest)
    summary = class_summary(samples)
    logger.info(f"Simulated {summary['total']} ticks: {summary['benign']} benign, {summary['attack']} attack")
    return EXIT_OK


def cmd_label(args) -> int:
    manifest = _load_manifest(args)
    samples = load_dataset(args.input, manifest)
    X = samples_to_matrix(samples)

    config = AutoCmConfig(label_source=LABEL_FLAGS[args.labels], seed=args.seed)
    labels, confidence, source = resolve_labels(samples, X, config, manifest)
    save_dataset(args.out, samples, manifest, extra_columns={
        "pseudo_label": [str(int(v)) for v in labels],
        "confidence": [format_value(c) for c in confidence],
    })
    logger.info(f"Labeled {len(labels)} samples from {source}: {int(labels.sum())} attack, {int(len(labels) - labels.sum())} benign")

    if source == "pseudo" and has_ground_truth(samples):
        ari = adjusted_rand_score(binary_labels(samples), labels)
        logger.info(f"Adjusted Rand index against ground truth: {ari:.4f}")
    return EXIT_OK


def cmd_select_features(args) -> int:
    manifest = _load_manifest(args)
    samples = load_dataset(args.input, manifest)
    labels, source = _training_labels(samples, args.input)
    X = samples_to_matrix(samples)
    scaled = fit_scaler(X).transform(X)

    mask = select_features(scaled, labels, k=args.k, w_pca=args.w_pca, w_mi=args.w_mi)
    mask = SelectionMask(
        selected=mask.selected,
        width=mask.width,
        pca_scores=mask.pca_scores,
        mi_scores=mask.mi_scores,
        combined_scores=mask.combined_scores,
        w_pca=mask.w_pca,
        w_mi=mask.w_mi,
        provenance={"dataset_sha256": sha256_file(args.input), "seed": args.seed, "label_source": source},
    )
    save_mask(args.out, mask, manifest)
    logger.info(f"Selected features: {', '.join(mask.names(manifest))}")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = _load_manifest(args)
    samples = load_dataset(args.input, manifest)
    labels, source = _training_labels(samples, args.input)
    X = samples_to_matrix(samples)
    mask = load_mask(args.mask, manifest) if args.mask else identity_mask(len(manifest))
    overrides = read_json(args.hyperparameters) if args.hyperparameters else None

    scaler = fit_scaler(X)
    Z = apply_mask(mask, scaler.transform(X))
    spec = default_spec(args.algo, args.seed, overrides)
    model = train(spec, Z, labels, mask.fingerprint, scaler.fingerprint)
    digest = save_model(args.out, model, scaler, mask)
    logger.info(f"Saved {args.algo} model trained on {source} labels to {args.out} (sha256 {digest[:16]})")
    return EXIT_OK


def _score_bundle(bundle, X: np.ndarray) -> Tuple[np.ndarray, float]:
    if bundle.scaler is None:
        raise SchemaError(f"{bundle.model.algorithm} model file carries no scaler")
    mask = bundle.mask or identity_mask(X.shape[1])
    Z = apply_mask(mask, bundle.scaler.transform(X))
    if bundle.model.sequential:
        Z = make_windows(Z, bundle.model.window)
    predicted, _ = predict_batch(bundle.model, Z)
    return predicted, inference_time(bundle.model, Z)


def cmd_evaluate(args) -> int:
    manifest = _load_manifest(args)
    samples = load_dataset(args.input, manifest)
    labels, source = _training_labels(samples, args.input)
    X = samples_to_matrix(samples)
    extra = {"input_sha256": sha256_file(args.input), "label_source": source}

    if args.models:
        paths = sorted(Path(args.models).glob("*.model"))
        if not paths:
            raise FileNotFoundError(f"No .model files in {args.models}")
        rows = {}
        timings = {}
        digests = {}
        for path in paths:
            bundle = load_model(path)
            predicted, per_sample = _score_bundle(bundle, X)
            report = compute_metrics(ConfusionMatrix.from_labels(labels, predicted))
            name = path.stem
            rows[name] = report.values()
            timings[name] = per_sample
            digests[name] = bundle.digest
            logger.info(f"{name}: F1 {report.f1:.4f}, detection rate {report.detection_rate:.4f}")
        extra["models"] = digests
    else:
        config = _load_config(args)
        mask = load_mask(args.mask, manifest) if args.mask else identity_mask(len(manifest))
        specs = [default_spec(a, config.seed, config.overrides.get(a)) for a in config.learners]
        folds = make_folds(labels, config.folds, config.seed)
        evaluation = evaluate_all(X, labels, mask, specs, folds, config.selection_rule)
        if evaluation.chosen is None:
            raise NoCandidateError("Every algorithm failed during cross-validation")
        rows = evaluation.rows()
        timings = evaluation.timings()
        extra["evaluation"] = evaluation.to_dict()

    render_report(rows, Path(args.report), extra=extra, timings=timings)
    return EXIT_OK


@contextmanager
def open_stream(args) -> Iterator[TextIO]:
    """Stream source: --in file, --listen host:port (one connection) or stdin."""
    if args.input:
        path = Path(args.input)
        if not path.exists():
            raise FileNotFoundError(f"Input file not found: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            yield f
    elif args.listen:
        host, _, port = args.listen.rpartition(":")
        try:
            address = (host or "127.0.0.1", int(port))
        except ValueError:
            raise ConfigError(f"--listen expects host:port, got '{args.listen}'")
        with socket.create_server(address) as server:
            logger.info(f"Listening for telemetry on {address[0]}:{address[1]}")
            conn, peer = server.accept()
            logger.info(f"Telemetry connection from {peer[0]}:{peer[1]}")
            with conn, conn.makefile('r', encoding='utf-8') as f:
                yield f
    else:
        yield sys.stdin


@contextmanager
def open_output(path: Optional[Path]) -> Iterator[TextIO]:
    if path is None:
        yield sys.stdout
    else:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            yield f


def _detector_from_bundle(path: Path, manifest: FeatureManifest) -> ActiveDetector:
    bundle = load_model(path)
    if bundle.scaler is None:
        raise SchemaError(f"{Path(path).name} carries no scaler; retrain with `train`")
    mask = bundle.mask or identity_mask(len(manifest))
    if mask.width != len(manifest):
        raise SchemaError(f"{Path(path).name} expects {mask.width} features, manifest has {len(manifest)}")
    return ActiveDetector(algorithm=bundle.model.algorithm, model=bundle.model, mask=mask, scaler=bundle.scaler)


def cmd_run(args) -> int:
    manifest = _load_manifest(args)
    config = _load_config(args)
    if args.model:
        state = initial_state(_detector_from_bundle(args.model, manifest), config, manifest)
    else:
        state = bootstrap_state(load_dataset(args.bootstrap, manifest), config, manifest)
    logger.info(f"Online with {state.active_algorithm}")

    emitted = 0
    audit_batch: List[LabeledSample] = []
    try:
        with open_stream(args) as stream, open_output(args.out) as out:
            for line_number, line in enumerate(stream, start=1):
                if not line.strip() or line.startswith("timestamp"):
                    continue
                try:
                    sample = parse_stream_line(line, manifest, line_number)
                except SchemaError as e:
                    log_event(state, "sample_rejected", None, line=line_number, reason=str(e))
                    continue

                reference = None
                if args.reference and sample.label is not None:
                    reference = sample.label.binary
                else:
                    sample = replace(sample, label=None)
                verdict, state = online_step(state, sample, reference)
                if verdict is None:
                    continue
                out.write(json.dumps(verdict.to_dict()) + "\n")
                emitted += 1

                if args.audit_every > 0:
                    audit_batch.append(sample)
                    if len(audit_batch) >= args.audit_every:
                        state = audit_step(state, audit_batch)
                        audit_batch = []
    finally:
        state = finish(state)
        if args.events:
            with open_output(args.events) as f:
                for event in state.events:
                    f.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")

    swaps = sum(1 for e in state.events if e.kind == "swap")
    logger.info(f"Emitted {emitted} verdicts; {swaps} model swap(s); final model {state.active_algorithm}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    """70/30 split: AutoCM picks and trains on the 70%, comp1-3 train on all features; all score the 30%."""
    manifest = _load_manifest(args)
    config = _load_config(args)
    samples = load_dataset(args.input, manifest)
    labels = binary_labels(samples)
    X = samples_to_matrix(samples)
    train_idx, test_idx = stratified_split_indices(labels, TRAIN_RATIO, config.seed)
    logger.info(f"Benchmark split: {len(train_idx)} train, {len(test_idx)} test")

    rows = {}
    timings = {}
    result = optimize_detector([samples[i] for i in train_idx], config, manifest)
    if result.detector is None:
        raise NoCandidateError(f"AutoCM produced no detector: {result.skipped}")
    detector = result.detector
    # sequence windows are built over the ordered stream, then restricted to test ticks
    predicted, _ = detector.score_matrix(X)
    report = compute_metrics(ConfusionMatrix.from_labels(labels[test_idx], predicted[test_idx]))
    rows["jamshield"] = report.values()
    timings["jamshield"] = inference_time(detector.model, detector.features(X[test_idx]))

    scaler = fit_scaler(X[train_idx])
    mask = identity_mask(X.shape[1])
    Z = scaler.transform(X)
    for baseline in BASELINES:
        spec = default_spec(baseline, config.seed, config.overrides.get(baseline))
        model = train(spec, Z[train_idx], labels[train_idx], mask.fingerprint, scaler.fingerprint)
        baseline_predicted, _ = predict_batch(model, Z[test_idx])
        report = compute_metrics(ConfusionMatrix.from_labels(labels[test_idx], baseline_predicted))
        rows[baseline] = report.values()
        timings[baseline] = inference_time(model, Z[test_idx])

    for name, row in rows.items():
        logger.info(f"{name}: F1 {row['f1']:.4f}, detection rate {row['detection_rate']:.4f}, FAR {row['far']:.4f}, "
                    f"{timings[name] * 1e6:.1f} us/sample")

    render_report(rows, Path(args.report), name="benchmark", extra={
        "input_sha256": sha256_file(args.input),
        "chosen": detector.algorithm,
        "selection": result.report.to_dict(),
    }, timings=timings)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jamshield", description="RF jamming detection with automated model selection")
    parser.add_argument("--log-level", choices=sorted(LOG_LEVELS), help=f"Overrides ${LOG_ENV_VAR}")
    parser.add_argument("--manifest", type=Path, help="Feature manifest JSON (default: bundled 40-feature manifest)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Generate a labeled telemetry dataset")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--scenario", type=Path, help="Scenario JSON (one object or {\"segments\": [...]})")
    source.add_argument("--preset", choices=["mixed", "drift"])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--benign-ticks", type=int, default=30000, help="mixed preset only")
    p.add_argument("--attack-ticks", type=int, default=10000, help="mixed preset only")
    p.add_argument("--blocks-per-phase", type=int, default=DRIFT_BLOCKS_PER_PHASE, help="drift preset only")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("label", help="Add a label column: k-means + EM pseudo-labels or ground truth")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--labels", choices=sorted(LABEL_FLAGS), default="pseudo",
                   help="pseudo: always cluster; truth: require ground truth; auto: ground truth when every row has it")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(handler=cmd_label)

    p = sub.add_parser("select-features", help="PCA + MI weighted-vote feature mask")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--k", type=int, default=SELECTED_FEATURES)
    p.add_argument("--w-pca", type=float, default=VOTE_WEIGHT_PCA)
    p.add_argument("--w-mi", type=float, default=VOTE_WEIGHT_MI)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(handler=cmd_select_features)

    p = sub.add_parser("train", help="Train one learner and save the model bundle")
    p.add_argument("--algo", choices=list(ALGORITHMS + BASELINES), required=True)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--mask", type=Path)
    p.add_argument("--hyperparameters", type=Path, help="JSON object of hyperparameter overrides")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="Score saved models, or cross-validate every learner")
    p.add_argument("--in", dest="input", type=Path, required=True)
    target = p.add_mutually_exclusive_group()
    target.add_argument("--models", type=Path, help="Directory of .model files")
    target.add_argument("--mask", type=Path, help="Mask for cross-validation (default: all features)")
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--folds", type=int)
    p.add_argument("--config", type=Path, help="AutoCM config JSON")
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("run", help="Online detection with threshold control and model swaps")
    initial = p.add_mutually_exclusive_group(required=True)
    initial.add_argument("--model", type=Path, help="Model bundle to start from")
    initial.add_argument("--bootstrap", type=Path, help="Labeled dataset for an initial optimization")
    stream = p.add_mutually_exclusive_group()
    stream.add_argument("--in", dest="input", type=Path, help="Stream file (default: stdin)")
    stream.add_argument("--listen", help="host:port to accept one telemetry connection on")
    p.add_argument("--reference", action="store_true", help="Use the stream's kind column as reference labels")
    p.add_argument("--audit-every", type=int, default=0, help="Pseudo-label audit every N ticks (0 = off)")
    p.add_argument("--config", type=Path, help="AutoCM config JSON")
    p.add_argument("--events", type=Path, help="Event log output (JSON lines)")
    p.add_argument("--out", type=Path, help="Verdict output (JSON lines, default: stdout)")
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("benchmark", help="AutoCM's pick against comp1-3 on a 70/30 split")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--config", type=Path, help="AutoCM config JSON")
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_benchmark)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and map failures onto exit codes."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    if getattr(args, "audit_every", 0) < 0:
        parser.error("--audit-every must be >= 0")

    logger.info(f"Starting jamshield {args.command}")
    try:
        code = args.handler(args)
        logger.info(f"{args.command} completed successfully")
        return code
    except FileNotFoundError as e:
        logger.error(f"Input file not found: {e}")
        return EXIT_MISSING_FILE
    except json.JSONDecodeError as e:
        logger.error(f"Malformed JSON input: {e}")
        return EXIT_SCHEMA
    except SchemaError as e:
        logger.error(f"Schema mismatch: {e}")
        return EXIT_SCHEMA
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except (TrainingError, NoCandidateError) as e:
        logger.error(f"Training failed: {e}")
        return EXIT_TRAINING
    except Exception as e:
        logger.error(f"Error during {args.command}: {e}", exc_info=True)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
