import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .config import BENIGN, REPORT_METRICS, REPORT_SCHEMA_VERSION, SELECTED_FEATURES
from .errors import SchemaError
from .feature_selection import load_mask
from .io_utils import load_dataset, read_json
from .metrics import error_identity_holds
from .schema import FeatureManifest, class_summary, default_manifest

logger = logging.getLogger(__name__)

CheckResult = Tuple[bool, str, List[str]]

ARTIFACT_ORDER = ("dataset", "mask", "report")
MAX_LISTED_ERRORS = 10


def validate_dataset(path: Path, manifest: FeatureManifest) -> CheckResult:
    """Validate manifest conformance, time order, and that labels are all present or all absent."""
    logger.info(f"Validating dataset {path}...")
    try:
        samples = load_dataset(path, manifest)
    except SchemaError as e:
        return False, "Dataset does not match the manifest", [str(e)]

    errors = []
    for i in range(1, len(samples)):
        if samples[i].timestamp < samples[i - 1].timestamp:
            errors.append(f"Row {i + 2}: timestamp {samples[i].timestamp} < {samples[i - 1].timestamp}")

    summary = class_summary(samples)
    if 0 < summary["total"] < len(samples):
        errors.append(f"{len(samples) - summary['total']} of {len(samples)} rows carry no label")

    if errors:
        return False, f"Found {len(errors)} dataset problems", errors
    if summary["total"] == 0:
        return True, f"{len(samples)} unlabeled samples match the manifest", []
    variants = ", ".join(f"{key} {count}" for key, count in summary.items() if "/" in key)
    message = f"{len(samples)} samples match the manifest ({summary[BENIGN]} benign, {summary['attack']} attack)"
    return True, f"{message}; {variants}" if variants else message, []


def validate_mask(path: Path, manifest: FeatureManifest, expected_k: Optional[int] = SELECTED_FEATURES) -> CheckResult:
    """Validate mask size, index range and uniqueness."""
    logger.info(f"Validating mask {path}...")
    try:
        mask = load_mask(path, manifest)
    except SchemaError as e:
        return False, "Mask is malformed", [str(e)]

    if expected_k is not None and mask.k != expected_k:
        return False, f"Mask selects {mask.k} features, expected {expected_k}", []
    return True, f"Mask selects {mask.k} unique features of {mask.width}", []


def validate_report(path: Path) -> CheckResult:
    """Validate metric bounds and the MDR = 1 - recall identity for every model row."""
    logger.info(f"Validating report {path}...")
    payload = read_json(path)
    if not isinstance(payload, dict) or payload.get("schema_version") != REPORT_SCHEMA_VERSION:
        return False, "Unsupported report schema version", []
    models = payload.get("models") or {}
    if not models:
        return False, "Report has no model rows", []

    errors = []
    for model, values in models.items():
        missing = [m for m in REPORT_METRICS if m not in values]
        if missing:
            errors.append(f"{model}: missing {missing}")
            continue
        for metric in REPORT_METRICS:
            if not 0.0 <= values[metric] <= 1.0:
                errors.append(f"{model}: {metric} = {values[metric]} outside [0, 1]")
        # values are stored at 9 significant digits
        if not error_identity_holds(values["recall"], values["mdr"], decimals=8):
            errors.append(f"{model}: mdr {values['mdr']} != 1 - recall {values['recall']}")

    if errors:
        return False, f"Found {len(errors)} invalid report entries", errors
    return True, f"All {len(models)} model rows are within bounds and satisfy mdr = 1 - recall", []


def run_all_validations(
    dataset: Optional[Path] = None,
    mask: Optional[Path] = None,
    report: Optional[Path] = None,
    manifest: Optional[FeatureManifest] = None,
) -> Dict[str, CheckResult]:
    """Run the checks for every artifact given and return results."""
    manifest = manifest or default_manifest()
    results = {}

    for name, path, check in (
        ("dataset", dataset, lambda p: validate_dataset(p, manifest)),
        ("mask", mask, lambda p: validate_mask(p, manifest)),
        ("report", report, validate_report),
    ):
        if path is None:
            continue
        if not Path(path).exists():
            results[name] = (False, f"File not found: {path}", [])
            continue
        results[name] = check(Path(path))

    return results


def _artifact_rank(name: str) -> int:
    return ARTIFACT_ORDER.index(name) if name in ARTIFACT_ORDER else len(ARTIFACT_ORDER)


def print_validation_report(results: Dict[str, CheckResult]) -> bool:
    """Print one status line per artifact with its first problems; True when every artifact is valid."""
    if not results:
        print("NOTHING TO VALIDATE: pass --dataset, --mask or --report")
        return False

    width = max(len(name) for name in results)
    pad = " " * (width + 12)
    print("jamshield artifact checks")
    failed = 0
    for name in sorted(results, key=_artifact_rank):
        is_valid, message, errors = results[name]
        print(f"  {name:<{width}}  {'ok' if is_valid else 'FAILED':<6}  {message}")
        for error in errors[:MAX_LISTED_ERRORS]:
            print(f"{pad}- {error}")
        if len(errors) > MAX_LISTED_ERRORS:
            print(f"{pad}... {len(errors) - MAX_LISTED_ERRORS} more")
        failed += not is_valid

    if failed:
        print(f"{failed} of {len(results)} artifacts invalid")
    else:
        print(f"all {len(results)} artifacts valid")
    return failed == 0
