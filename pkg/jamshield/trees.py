"""Decision tree and random forest classifiers on flat node arrays."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import ConfigError, SchemaError

logger = logging.getLogger(__name__)

CRITERIA = ("entropy", "gini")
MIN_GAIN = 1e-12
LEAF = -1
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class TreeModel:
    feature: np.ndarray = field(repr=False)  # LEAF for leaves
    threshold: np.ndarray = field(repr=False)  # x <= threshold goes left
    left: np.ndarray = field(repr=False)
    right: np.ndarray = field(repr=False)
    value: np.ndarray = field(repr=False)  # attack fraction of the node's training samples
    n_samples: np.ndarray = field(repr=False)
    impurity: np.ndarray = field(repr=False)
    width: int
    criterion: str = "entropy"

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def depths(self) -> np.ndarray:
        depth = np.zeros(self.node_count, dtype=int)
        for node in range(self.node_count):
            if self.feature[node] != LEAF:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return depth

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.width:
            raise SchemaError(f"Tree expects {self.width} features, got {X.shape[1]}")
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        active = self.feature[node] != LEAF
        while active.any():
            r = rows[active]
            n = node[r]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] != LEAF
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def node_impurity(positives: np.ndarray, totals: np.ndarray, criterion: str) -> np.ndarray:
    """Binary impurity from attack counts; entropy in bits."""
    p = np.divide(positives, totals, out=np.zeros_like(positives, dtype=float), where=totals > 0)
    q = 1.0 - p
    if criterion == "gini":
        return 1.0 - p ** 2 - q ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log2(p), 0.0) + np.where(q > 0, q * np.log2(q), 0.0))
    return h


def best_split_on_feature(x: np.ndarray, y: np.ndarray, criterion: str) -> Tuple[float, float]:
    """(gain, threshold) of the best midpoint split on one feature; gain -inf if none."""
    n = len(x)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]

    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return -math.inf, 0.0

    n_left = np.arange(1, n, dtype=float)
    n_right = n - n_left
    pos_left = np.cumsum(ys)[:-1].astype(float)
    pos_total = float(ys.sum())
    pos_right = pos_total - pos_left

    parent = float(node_impurity(np.array([pos_total]), np.array([float(n)]), criterion)[0])
    weighted = (n_left * node_impurity(pos_left, n_left, criterion)
                + n_right * node_impurity(pos_right, n_right, criterion)) / n
    gain = np.where(valid, parent - weighted, -math.inf)

    i = int(np.argmax(gain))
    threshold = (xs[i] + xs[i + 1]) / 2.0
    if threshold >= xs[i + 1]:
        threshold = xs[i]
    return float(gain[i]), float(threshold)


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int = 15,
    min_samples_split: int = 10,
    criterion: str = "entropy",
    max_features: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> TreeModel:
    """Grow a tree depth-first. With `max_features`, each split tries a random feature subset."""
    if criterion not in CRITERIA:
        raise ConfigError(f"Unknown split criterion '{criterion}', expected one of {CRITERIA}")
    if max_depth < 0 or min_samples_split < 2:
        raise ConfigError(f"Invalid tree limits: max_depth={max_depth}, min_samples_split={min_samples_split}")

    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    width = X.shape[1]
    if max_features is not None and rng is None:
        rng = np.random.default_rng(0)

    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []
    n_samples: List[int] = []
    impurity: List[float] = []

    def new_node(idx: np.ndarray) -> int:
        positives = float(y[idx].sum())
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(positives / len(idx))
        n_samples.append(len(idx))
        impurity.append(float(node_impurity(np.array([positives]), np.array([float(len(idx))]), criterion)[0]))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth or len(idx) < min_samples_split or impurity[node] <= 0.0:
            continue

        if max_features is not None and max_features < width:
            candidates = np.sort(rng.choice(width, size=max_features, replace=False))
        else:
            candidates = range(width)

        best_gain, best_feature, best_threshold = MIN_GAIN, LEAF, 0.0
        y_node = y[idx]
        for f in candidates:
            gain, thr = best_split_on_feature(X[idx, f], y_node, criterion)
            if gain > best_gain:
                best_gain, best_feature, best_threshold = gain, int(f), thr
        if best_feature == LEAF:
            continue

        goes_left = X[idx, best_feature] <= best_threshold
        left_idx, right_idx = idx[goes_left], idx[~goes_left]
        feature[node] = best_feature
        threshold[node] = best_threshold
        left[node] = new_node(left_idx)
        right[node] = new_node(right_idx)
        stack.append((right[node], right_idx, depth + 1))
        stack.append((left[node], left_idx, depth + 1))

    return TreeModel(
        feature=np.asarray(feature, dtype=int),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=int),
        right=np.asarray(right, dtype=int),
        value=np.asarray(value, dtype=float),
        n_samples=np.asarray(n_samples, dtype=int),
        impurity=np.asarray(impurity, dtype=float),
        width=width,
        criterion=criterion,
    )


def splitmix64(seed: int, count: int) -> List[int]:
    """Deterministic stream of 64-bit seeds derived from one seed."""
    state = seed & _MASK64
    out = []
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        out.append(z ^ (z >> 31))
    return out


@dataclass(frozen=True)
class ForestModel:
    trees: Tuple[TreeModel, ...]
    width: int

    def tree_votes(self, X: np.ndarray) -> np.ndarray:
        """(n_trees, n_rows) matrix of 0/1 tree verdicts; a leaf at 0.5 votes attack."""
        return np.vstack([(tree.predict_proba(X) >= 0.5).astype(float) for tree in self.trees])

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.tree_votes(X).mean(axis=0)


def resolve_max_features(max_features, width: int) -> int:
    if max_features == "sqrt":
        return int(math.ceil(math.sqrt(width)))
    if max_features in (None, "all"):
        return width
    try:
        value = int(max_features)
    except (TypeError, ValueError):
        raise ConfigError(f"Invalid max_features: {max_features!r}")
    if not 1 <= value <= width:
        raise ConfigError(f"max_features must be in [1, {width}], got {value}")
    return value


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    trees: int = 150,
    max_depth: int = 20,
    min_samples_split: int = 5,
    criterion: str = "gini",
    max_features="sqrt",
    seed: int = 0,
    n_jobs: int = 1,
) -> ForestModel:
    """Bagged trees; tree i uses the i-th splitmix64 seed for its bootstrap and feature draws."""
    if trees < 1:
        raise ConfigError(f"Forest needs at least one tree, got {trees}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n, width = X.shape
    per_split = resolve_max_features(max_features, width)

    def grow(tree_seed: int) -> TreeModel:
        rng = np.random.default_rng(tree_seed)
        sample = rng.integers(0, n, size=n)
        return fit_tree(X[sample], y[sample], max_depth, min_samples_split, criterion, per_split, rng)

    seeds = splitmix64(seed, trees)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            grown = list(pool.map(grow, seeds))
    else:
        grown = [grow(s) for s in seeds]

    logger.debug(f"Grew {trees} trees ({sum(t.node_count for t in grown)} nodes total)")
    return ForestModel(trees=tuple(grown), width=width)


_TREE_ARRAYS = ("feature", "threshold", "left", "right", "value", "n_samples", "impurity")


def tree_to_payload(tree: TreeModel, encode) -> dict:
    payload = {name: encode(getattr(tree, name).astype(float)) for name in _TREE_ARRAYS}
    payload.update({"width": tree.width, "criterion": tree.criterion})
    return payload


def tree_from_payload(payload: dict, decode) -> TreeModel:
    arrays = {name: decode(payload[name]) for name in _TREE_ARRAYS}
    for name in ("feature", "left", "right", "n_samples"):
        arrays[name] = arrays[name].astype(int)
    return TreeModel(width=int(payload["width"]), criterion=payload["criterion"], **arrays)


def forest_to_payload(forest: ForestModel, encode) -> dict:
    return {"width": forest.width, "trees": [tree_to_payload(t, encode) for t in forest.trees]}


def forest_from_payload(payload: dict, decode) -> ForestModel:
    return ForestModel(trees=tuple(tree_from_payload(t, decode) for t in payload["trees"]),
                       width=int(payload["width"]))
