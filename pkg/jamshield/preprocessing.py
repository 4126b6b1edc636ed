import hashlib
import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, TypeVar

import numpy as np

from .config import STD_FLOOR
from .errors import SchemaError

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class StandardScaler:
    mean: np.ndarray = field(repr=False)
    std: np.ndarray = field(repr=False)

    @property
    def width(self) -> int:
        return len(self.mean)

    @property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.mean, dtype='<f8').tobytes())
        digest.update(np.ascontiguousarray(self.std, dtype='<f8').tobytes())
        return digest.hexdigest()[:16]

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.width:
            raise SchemaError(f"Scaler fitted on {self.width} features, got {X.shape[-1]}")
        return (X - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "StandardScaler":
        return cls(mean=np.asarray(payload["mean"], dtype=float), std=np.asarray(payload["std"], dtype=float))


def fit_scaler(train: np.ndarray) -> StandardScaler:
    """Population standardization; std floored so constant columns map to zero."""
    train = np.asarray(train, dtype=float)
    if train.ndim != 2 or train.shape[0] == 0:
        raise SchemaError("Cannot fit a scaler on an empty training set")

    mean = train.mean(axis=0)
    std = np.maximum(train.std(axis=0), STD_FLOOR)
    degenerate = int(np.sum(std <= STD_FLOOR))
    if degenerate:
        logger.debug(f"{degenerate} constant feature(s) will scale to zero")
    return StandardScaler(mean=mean, std=std)


def apply_scaler(scaler: StandardScaler, samples: np.ndarray) -> np.ndarray:
    return scaler.transform(samples)


def _class_indices(labels: np.ndarray, minimum: int, purpose: str) -> List[np.ndarray]:
    labels = np.asarray(labels, dtype=int)
    groups = []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < minimum:
            raise SchemaError(
                f"{purpose}: class {cls} has {len(idx)} samples, at least {minimum} required"
            )
        groups.append(idx)
    return groups


def stratified_split_indices(labels: np.ndarray, ratio: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Train/test index arrays stratified on the binary label."""
    if not 0.0 < ratio < 1.0:
        raise SchemaError(f"Split ratio must be in (0, 1), got {ratio}")

    groups = _class_indices(labels, 2, "split_train_test")
    n = sum(len(g) for g in groups)
    target = int(round(ratio * n))

    # largest-remainder allocation keeps the total exact and each class on both sides
    quotas = [ratio * len(g) for g in groups]
    counts = [int(np.floor(q)) for q in quotas]
    remainder = target - sum(counts)
    order = sorted(range(len(groups)), key=lambda c: (-(quotas[c] - counts[c]), c))
    for c in order[:max(remainder, 0)]:
        counts[c] += 1
    counts = [min(max(c, 1), len(g) - 1) for c, g in zip(counts, groups)]

    rng = np.random.default_rng(seed)
    train, test = [], []
    for count, idx in zip(counts, groups):
        shuffled = rng.permutation(idx)
        train.append(shuffled[:count])
        test.append(shuffled[count:])

    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split_train_test(data: Sequence[T], labels: np.ndarray, ratio: float, seed: int) -> Tuple[List[T], List[T]]:
    """Stratified, seeded, disjoint and exhaustive split of `data`."""
    if len(data) != len(labels):
        raise SchemaError(f"{len(data)} samples but {len(labels)} labels")
    train_idx, test_idx = stratified_split_indices(labels, ratio, seed)
    logger.info(f"Split {len(data)} samples into {len(train_idx)} train / {len(test_idx)} test")
    return [data[i] for i in train_idx], [data[i] for i in test_idx]


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray = field(repr=False)

    def __post_init__(self):
        assignments = np.asarray(self.assignments, dtype=int)
        if self.k < 2:
            raise SchemaError(f"Fold count must be >= 2, got {self.k}")
        if assignments.size and (assignments.min() < 0 or assignments.max() >= self.k):
            raise SchemaError("Fold assignment out of range")
        assignments.setflags(write=False)
        object.__setattr__(self, "assignments", assignments)

    def __len__(self) -> int:
        return len(self.assignments)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def fold_sizes(self) -> List[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()


def make_folds(labels: np.ndarray, k: int, seed: int) -> FoldPlan:
    """Stratified k-fold plan: each class shuffled, then dealt round-robin across folds."""
    if k < 2:
        raise SchemaError(f"Fold count must be >= 2, got {k}")
    groups = _class_indices(labels, k, f"{k}-fold plan")

    rng = np.random.default_rng(seed)
    dealt = np.concatenate([rng.permutation(idx) for idx in groups])
    assignments = np.empty(len(labels), dtype=int)
    assignments[dealt] = np.arange(len(dealt)) % k
    return FoldPlan(k=k, assignments=assignments)
