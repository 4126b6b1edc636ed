import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import (
    BENIGN,
    CLASS_TAXONOMY,
    DEFAULT_MANIFEST_FILE,
    FEATURE_COUNT,
    JAMMER_KINDS,
    LAYERS,
    WAVEFORM_TAGS,
)
from .errors import SchemaError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    layer: str
    unit: str = ""


@dataclass(frozen=True)
class FeatureManifest:
    """Ordered, layer-tagged list of the raw cross-layer features."""

    features: Tuple[FeatureSpec, ...]

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> List[str]:
        return [f.name for f in self.features]

    def index_of(self, name: str) -> int:
        for i, feature in enumerate(self.features):
            if feature.name == name:
                return i
        raise SchemaError(f"Feature not in manifest: {name}")

    def layer_indices(self, layer: str) -> List[int]:
        return [i for i, f in enumerate(self.features) if f.layer == layer]

    def indices_of(self, names: Iterable[str]) -> List[int]:
        """Indices of the given names that are present, in manifest order."""
        wanted = set(names)
        return [i for i, f in enumerate(self.features) if f.name in wanted]


def validate_manifest(entries: Sequence[dict], expected_count: int = FEATURE_COUNT) -> FeatureManifest:
    """Build a manifest from raw {"name", "layer", "unit"} entries, enforcing the schema rules."""
    if len(entries) != expected_count:
        raise SchemaError(f"Manifest: expected {expected_count}, found {len(entries)}")

    features = []
    seen = set()
    for position, entry in enumerate(entries):
        if not isinstance(entry, dict) or "name" not in entry or "layer" not in entry:
            raise SchemaError(f"Manifest entry {position} must have 'name' and 'layer': {entry!r}")

        name = str(entry["name"]).strip()
        layer = str(entry["layer"]).strip()
        if not name:
            raise SchemaError(f"Manifest entry {position} has an empty name")
        if name in seen:
            raise SchemaError(f"Manifest entry {position}: duplicate feature name '{name}'")
        if layer not in LAYERS:
            raise SchemaError(f"Manifest entry {position} ('{name}'): unknown layer tag '{layer}'")

        seen.add(name)
        features.append(FeatureSpec(name=name, layer=layer, unit=str(entry.get("unit", ""))))

    for layer in LAYERS:
        if not any(f.layer == layer for f in features):
            raise SchemaError(f"Manifest has no features in layer '{layer}'")

    return FeatureManifest(features=tuple(features))


def load_manifest(path: Path) -> FeatureManifest:
    """Load and validate a JSON manifest file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest file not found: {path}")

    with open(path, 'r', encoding='utf-8') as f:
        try:
            entries = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"Manifest {path.name} is not valid JSON: {e}") from e

    if not isinstance(entries, list):
        raise SchemaError(f"Manifest {path.name} must be a top-level array")

    manifest = validate_manifest(entries)
    logger.debug(f"Loaded manifest {path.name} with {len(manifest)} features")
    return manifest


def default_manifest() -> FeatureManifest:
    return load_manifest(DEFAULT_MANIFEST_FILE)


@dataclass(frozen=True)
class ClassLabel:
    kind: str
    variant: Optional[str] = None

    def __post_init__(self):
        if self.kind == BENIGN:
            if self.variant:
                raise SchemaError(f"Benign label cannot carry a variant: {self.variant}")
            return
        if self.kind not in JAMMER_KINDS:
            raise SchemaError(f"Unknown class kind: '{self.kind}'")
        if self.variant not in CLASS_TAXONOMY[self.kind]:
            raise SchemaError(f"Unknown variant '{self.variant}' for jammer kind '{self.kind}'")

    @property
    def binary(self) -> int:
        return 0 if self.kind == BENIGN else 1

    @property
    def key(self) -> str:
        return self.kind if self.kind == BENIGN else f"{self.kind}/{self.variant}"

    @classmethod
    def parse(cls, kind: str, variant: str = "") -> "ClassLabel":
        kind = (kind or "").strip()
        variant = (variant or "").strip()
        return cls(kind=kind, variant=variant or None)


BENIGN_LABEL = ClassLabel(BENIGN)


@dataclass(frozen=True)
class LabeledSample:
    """One 0.5 s tick of telemetry. `label` is None for unlabeled deployment data."""

    timestamp: float
    values: np.ndarray = field(repr=False)
    label: Optional[ClassLabel] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise SchemaError("Sample values must be a flat vector")
        if not np.all(np.isfinite(values)):
            raise SchemaError(f"Sample at t={self.timestamp} contains NaN or inf")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def samples_to_matrix(samples: Sequence[LabeledSample]) -> np.ndarray:
    if not samples:
        return np.empty((0, 0))
    return np.vstack([s.values for s in samples])


def binary_labels(samples: Sequence[LabeledSample]) -> np.ndarray:
    """0/1 labels; raises if any sample is unlabeled."""
    labels = []
    for i, s in enumerate(samples):
        if s.label is None:
            raise SchemaError(f"Sample {i} (t={s.timestamp}) has no ground-truth label")
        labels.append(s.label.binary)
    return np.asarray(labels, dtype=int)


def has_ground_truth(samples: Sequence[LabeledSample]) -> bool:
    return bool(samples) and all(s.label is not None for s in samples)


def class_summary(samples: Sequence[LabeledSample]) -> Dict[str, int]:
    """Per-class counts keyed 'benign' or 'kind/variant', plus 'total' and 'attack'."""
    counts = Counter(s.label.key for s in samples if s.label is not None)
    summary = dict(sorted(counts.items()))
    summary.setdefault(BENIGN, 0)
    summary["attack"] = sum(v for k, v in counts.items() if k != BENIGN)
    summary["total"] = sum(counts.values())
    return summary


def variant_for(kind: str, waveform: str, gain_dbi: Optional[float], geometry: str, dynamic_gain: bool) -> str:
    """Map a simulated jammer configuration onto the closest catalogued variant of the same kind."""
    if kind not in CLASS_TAXONOMY:
        raise SchemaError(f"Unknown jammer kind: '{kind}'")

    wave_tag = WAVEFORM_TAGS.get(waveform)
    if wave_tag is None:
        raise SchemaError(f"Unknown waveform: '{waveform}'")

    def secondary(variant: str) -> float:
        suffix = variant.split("_", 1)[1]
        if dynamic_gain:
            return 0.0 if suffix == "dynamic_gain" else 1.0
        if suffix.endswith("db"):
            if gain_dbi is None:
                return 1.0
            return abs(float(suffix[:-2]) - gain_dbi) / 100.0
        if suffix in ("los", "nlos"):
            return 0.0 if suffix == geometry else 1.0
        return 2.0

    rows = CLASS_TAXONOMY[kind]
    ranked = sorted(
        range(len(rows)),
        key=lambda i: (0 if rows[i].split("_", 1)[0] == wave_tag else 1, secondary(rows[i]), i),
    )
    return rows[ranked[0]]
