import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import REPORT_METRICS, REPORT_SCHEMA_VERSION
from .errors import SchemaError
from .io_utils import format_value, write_csv, write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise SchemaError(f"Confusion count {name} must be a non-negative integer, got {value}")
            object.__setattr__(self, name, int(value))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_labels(cls, truth: Sequence[int], predicted: Sequence[int]) -> "ConfusionMatrix":
        truth = np.asarray(truth, dtype=int)
        predicted = np.asarray(predicted, dtype=int)
        if truth.shape != predicted.shape:
            raise SchemaError(f"{len(truth)} labels but {len(predicted)} predictions")
        return cls(
            tp=int(np.sum((truth == 1) & (predicted == 1))),
            fp=int(np.sum((truth == 0) & (predicted == 1))),
            tn=int(np.sum((truth == 0) & (predicted == 0))),
            fn=int(np.sum((truth == 1) & (predicted == 0))),
        )

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    detection_rate: float
    far: float
    mdr: float
    matrix: ConfusionMatrix
    undefined: Tuple[str, ...] = ()  # metrics whose denominator was zero

    def values(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in REPORT_METRICS}

    def to_dict(self) -> dict:
        payload = dict(self.values())
        payload["confusion"] = self.matrix.to_dict()
        payload["undefined"] = list(self.undefined)
        return payload


def _ratio(numerator: int, denominator: int, name: str, undefined: List[str]) -> float:
    if denominator == 0:
        undefined.append(name)
        return 0.0
    return numerator / denominator


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Precision, recall, F1, accuracy as detection rate, FAR and MDR; zero denominators give 0 and a flag."""
    if cm.total == 0:
        raise SchemaError("Cannot compute metrics on an empty confusion matrix")

    undefined: List[str] = []
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", undefined)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall", undefined)
    if "recall" in undefined:
        undefined.append("mdr")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        undefined.append("f1")
    far = _ratio(cm.fp, cm.fp + cm.tn, "far", undefined)

    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        detection_rate=(cm.tp + cm.tn) / cm.total,
        far=far,
        mdr=1.0 - recall,
        matrix=cm,
        undefined=tuple(undefined),
    )


def error_identity_holds(recall: float, mdr: float, decimals: Optional[int] = None) -> bool:
    """mdr == 1 - recall; exact for computed values, at `decimals` places for rounded figures."""
    if decimals is None:
        return mdr == 1.0 - recall
    return round(recall + mdr, decimals) == round(1.0, decimals)


def summarize(reports: Sequence[MetricsReport]) -> Dict[str, Dict[str, float]]:
    """Per-metric mean and population standard deviation."""
    if not reports:
        raise SchemaError("Nothing to summarize")
    summary = {}
    for name in REPORT_METRICS:
        values = np.array([getattr(r, name) for r in reports])
        summary[name] = {"mean": float(values.mean()), "std": float(values.std())}
    return summary


def _rounded(value: float) -> float:
    return float(format_value(value))


def render_report(rows: Mapping[str, Mapping[str, float]], destination: Path, name: str = "report",
                  extra: Optional[dict] = None, timings: Optional[Mapping[str, float]] = None) -> Tuple[Path, Path]:
    """Write `<name>.json` and a long-format `<name>.csv` (model,metric,value).

    `rows` maps a model name to its metric values; values are written at
    9 significant digits. Wall-clock `timings` (seconds per sample) go to a
    separate `<name>.timings.json` so the two primary files stay reproducible.
    """
    if not rows:
        raise SchemaError("A report needs at least one model row")
    destination = Path(destination)
    if destination.exists() and not destination.is_dir():
        raise SchemaError(f"Report destination is not a directory: {destination}")

    models = {
        model: {metric: _rounded(values[metric]) for metric in values}
        for model, values in rows.items()
    }
    payload = {"schema_version": REPORT_SCHEMA_VERSION, "models": models}
    if extra:
        payload.update(extra)

    json_path = destination / f"{name}.json"
    csv_path = destination / f"{name}.csv"
    write_json(json_path, payload)
    write_csv(
        csv_path,
        ["model", "metric", "value"],
        (
            {"model": model, "metric": metric, "value": format_value(value)}
            for model, values in models.items()
            for metric, value in values.items()
        ),
    )
    logger.info(f"Wrote {json_path.name} and {csv_path.name} ({len(models)} models)")
    if timings:
        timings_path = destination / f"{name}.timings.json"
        write_json(timings_path, {
            "schema_version": REPORT_SCHEMA_VERSION,
            "inference_time_s": {model: _rounded(seconds) for model, seconds in timings.items()},
        })
        logger.info(f"Wrote {timings_path.name}")
    return json_path, csv_path
