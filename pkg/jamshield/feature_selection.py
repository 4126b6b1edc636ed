"""Hybrid PCA + mutual-information feature ranking fused by weighted voting."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .config import MI_MAX_BINS, PCA_VARIANCE_TARGET, SELECTED_FEATURES, VOTE_WEIGHT_MI, VOTE_WEIGHT_PCA
from .errors import ConfigError, SchemaError
from .io_utils import canonical_json, read_json, sha256_text, write_json
from .schema import FeatureManifest

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray = field(repr=False)
    components: np.ndarray = field(repr=False)  # one orthonormal row per component
    explained_variance: np.ndarray = field(repr=False)
    explained_variance_ratio: np.ndarray = field(repr=False)

    @property
    def width(self) -> int:
        return len(self.mean)


def pca_fit(X: np.ndarray) -> PcaModel:
    """Eigendecomposition of the population covariance, components sorted by variance."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise SchemaError(f"PCA needs at least 2 samples, got {X.shape[0] if X.ndim == 2 else 0}")

    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / X.shape[0]

    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    components = eigenvectors[:, order].T.copy()

    # largest-magnitude loading of each component is positive
    pivots = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), pivots])
    signs[signs == 0] = 1.0
    components *= signs[:, None]

    total = eigenvalues.sum()
    if total > 0:
        ratio = eigenvalues / total
    else:
        ratio = np.full(len(eigenvalues), 1.0 / len(eigenvalues))

    return PcaModel(mean=mean, components=components, explained_variance=eigenvalues, explained_variance_ratio=ratio)


def pca_project(model: PcaModel, X: np.ndarray, retain: Optional[int] = None) -> np.ndarray:
    components = model.components if retain is None else model.components[:retain]
    return (np.asarray(X, dtype=float) - model.mean) @ components.T


def pca_reconstruct(model: PcaModel, Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    return Z @ model.components[:Z.shape[-1]] + model.mean


def components_for_variance(model: PcaModel, target: float = PCA_VARIANCE_TARGET) -> int:
    """Smallest number of leading components whose cumulative ratio reaches `target`."""
    if not 0.0 < target <= 1.0:
        raise ConfigError(f"Variance target must be in (0, 1], got {target}")
    cumulative = np.cumsum(model.explained_variance_ratio)
    retain = int(np.searchsorted(cumulative, target - 1e-12) + 1)
    return min(max(retain, 1), model.width)


def pca_feature_scores(model: PcaModel, retain: int) -> np.ndarray:
    """Per-feature attribution: variance-ratio-weighted squared loadings over the leading components."""
    if not 1 <= retain <= model.width:
        raise ConfigError(f"retain must be in [1, {model.width}], got {retain}")
    ratio = model.explained_variance_ratio[:retain]
    loadings = model.components[:retain]
    return (ratio[:, None] * loadings ** 2).sum(axis=0)


@dataclass(frozen=True)
class MiScores:
    """Mutual information of each feature with the binary label, in nats."""

    scores: np.ndarray = field(repr=False)
    bins: int
    label_entropy: float


def equal_frequency_bins(values: np.ndarray, bins: int) -> np.ndarray:
    """Quantile bin index per value; tied values share a bin."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    ranks = rankdata(values, method="min")
    return np.floor((ranks - 1) * bins / n).astype(int)


def discrete_mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    """Plug-in mutual information (nats) between two discrete sequences."""
    _, a_codes = np.unique(a, return_inverse=True)
    _, b_codes = np.unique(b, return_inverse=True)
    n = len(a_codes)
    joint = np.zeros((a_codes.max() + 1, b_codes.max() + 1))
    np.add.at(joint, (a_codes, b_codes), 1.0)
    joint /= n

    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


def mi_scores(X: np.ndarray, labels: np.ndarray, max_bins: int = MI_MAX_BINS) -> MiScores:
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise SchemaError(f"MI input shape {X.shape} does not match {len(labels)} labels")
    if len(np.unique(labels)) < 2:
        raise SchemaError("Mutual information needs both classes present")

    n = X.shape[0]
    bins = min(int(math.ceil(math.sqrt(n))), max_bins)
    scores = np.array([
        discrete_mutual_information(equal_frequency_bins(X[:, j], bins), labels)
        for j in range(X.shape[1])
    ])

    p = np.bincount(labels) / n
    p = p[p > 0]
    entropy = float(-np.sum(p * np.log(p)))
    return MiScores(scores=np.clip(scores, 0.0, None), bins=bins, label_entropy=entropy)


def rank_scores(scores: Sequence[float]) -> np.ndarray:
    """Rank r (1 = best) of n mapped to (n - r) / (n - 1); ties go to the lower index."""
    scores = np.asarray(scores, dtype=float)
    n = len(scores)
    if n == 1:
        return np.ones(1)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    result = np.empty(n)
    for rank, i in enumerate(order, start=1):
        result[i] = (n - rank) / (n - 1)
    return result


@dataclass(frozen=True)
class SelectionMask:
    selected: Tuple[int, ...]
    width: int
    pca_scores: Tuple[float, ...] = ()
    mi_scores: Tuple[float, ...] = ()
    combined_scores: Tuple[float, ...] = ()
    w_pca: float = VOTE_WEIGHT_PCA
    w_mi: float = VOTE_WEIGHT_MI
    provenance: Dict[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        selected = tuple(int(i) for i in self.selected)
        if not selected:
            raise SchemaError("Selection mask is empty")
        if len(set(selected)) != len(selected):
            raise SchemaError(f"Selection mask has duplicate indices: {list(selected)}")
        bad = [i for i in selected if not 0 <= i < self.width]
        if bad:
            raise SchemaError(f"Selection mask indices out of range [0, {self.width}): {bad}")
        object.__setattr__(self, "selected", selected)

    @property
    def k(self) -> int:
        return len(self.selected)

    def names(self, manifest: FeatureManifest) -> List[str]:
        all_names = manifest.names
        return [all_names[i] for i in self.selected]

    def to_dict(self) -> dict:
        return {
            "selected": list(self.selected),
            "width": self.width,
            "weights": {"pca": self.w_pca, "mi": self.w_mi},
            "scores": {
                "pca": list(self.pca_scores),
                "mi": list(self.mi_scores),
                "combined": list(self.combined_scores),
            },
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SelectionMask":
        try:
            scores = payload.get("scores", {})
            weights = payload.get("weights", {})
            return cls(
                selected=tuple(payload["selected"]),
                width=int(payload["width"]),
                pca_scores=tuple(scores.get("pca", ())),
                mi_scores=tuple(scores.get("mi", ())),
                combined_scores=tuple(scores.get("combined", ())),
                w_pca=float(weights.get("pca", VOTE_WEIGHT_PCA)),
                w_mi=float(weights.get("mi", VOTE_WEIGHT_MI)),
                provenance=dict(payload.get("provenance", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"Malformed selection mask: {e}") from e

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @property
    def fingerprint(self) -> str:
        return sha256_text(canonical_json({"selected": list(self.selected), "width": self.width}))[:16]


def identity_mask(width: int) -> SelectionMask:
    """Mask keeping every feature in manifest order."""
    return SelectionMask(selected=tuple(range(width)), width=width, w_pca=0.0, w_mi=0.0)


def weighted_vote_select(
    pca_scores: Sequence[float],
    mi: Sequence[float],
    k: int = SELECTED_FEATURES,
    w_pca: float = VOTE_WEIGHT_PCA,
    w_mi: float = VOTE_WEIGHT_MI,
) -> SelectionMask:
    pca_scores = np.asarray(pca_scores, dtype=float)
    mi = np.asarray(mi, dtype=float)
    n = len(pca_scores)
    if len(mi) != n:
        raise SchemaError(f"{n} PCA scores but {len(mi)} MI scores")
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    if w_pca < 0 or w_mi < 0 or (w_pca == 0 and w_mi == 0):
        raise ConfigError(f"Vote weights must be >= 0 and not both zero, got ({w_pca}, {w_mi})")

    combined = w_pca * rank_scores(pca_scores) + w_mi * rank_scores(mi)
    order = sorted(range(n), key=lambda i: (-combined[i], i))
    return SelectionMask(
        selected=tuple(order[:k]),
        width=n,
        pca_scores=tuple(float(v) for v in pca_scores),
        mi_scores=tuple(float(v) for v in mi),
        combined_scores=tuple(float(v) for v in combined),
        w_pca=float(w_pca),
        w_mi=float(w_mi),
    )


def apply_mask(mask: SelectionMask, values: np.ndarray) -> np.ndarray:
    """Gather the selected columns, in mask order. Works on a vector or a matrix."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != mask.width:
        raise SchemaError(f"Mask expects {mask.width} values, got {values.shape[-1]}")
    return values[..., list(mask.selected)]


def scatter_mask(mask: SelectionMask, reduced: np.ndarray) -> np.ndarray:
    """Inverse of apply_mask; unselected positions are zero."""
    reduced = np.asarray(reduced, dtype=float)
    if reduced.shape[-1] != mask.k:
        raise SchemaError(f"Mask has {mask.k} selected features, got {reduced.shape[-1]} values")
    full = np.zeros(reduced.shape[:-1] + (mask.width,))
    full[..., list(mask.selected)] = reduced
    return full


def select_features(
    X_scaled: np.ndarray,
    labels: np.ndarray,
    k: int = SELECTED_FEATURES,
    w_pca: float = VOTE_WEIGHT_PCA,
    w_mi: float = VOTE_WEIGHT_MI,
    variance_target: float = PCA_VARIANCE_TARGET,
) -> SelectionMask:
    """PCA attribution and MI ranking fused into a top-k mask."""
    model = pca_fit(X_scaled)
    retain = components_for_variance(model, variance_target)
    pca_scores = pca_feature_scores(model, retain)
    mi = mi_scores(X_scaled, labels)

    mask = weighted_vote_select(pca_scores, mi.scores, k, w_pca, w_mi)
    logger.info(
        f"Selected {mask.k} of {mask.width} features "
        f"({retain} principal components, {mi.bins} MI bins)"
    )
    return mask


def save_mask(path: Path, mask: SelectionMask, manifest: Optional[FeatureManifest] = None) -> None:
    payload = mask.to_dict()
    if manifest is not None:
        payload["selected_names"] = mask.names(manifest)
    write_json(path, payload)


def load_mask(path: Path, manifest: Optional[FeatureManifest] = None) -> SelectionMask:
    payload = read_json(path)
    if not isinstance(payload, dict):
        raise SchemaError(f"{Path(path).name}: mask must be a JSON object")
    mask = SelectionMask.from_dict(payload)
    if manifest is not None and mask.width != len(manifest):
        raise SchemaError(f"{Path(path).name}: mask width {mask.width} does not match manifest ({len(manifest)})")
    names = payload.get("selected_names")
    if manifest is not None and names is not None and names != mask.names(manifest):
        raise SchemaError(f"{Path(path).name}: selected_names do not match the manifest")
    return mask


def mask_diff(old: SelectionMask, new: SelectionMask) -> Dict[str, object]:
    old_set, new_set = set(old.selected), set(new.selected)
    return {
        "added": sorted(new_set - old_set),
        "removed": sorted(old_set - new_set),
        "reordered": old_set == new_set and old.selected != new.selected,
        "changed": old.selected != new.selected,
    }
