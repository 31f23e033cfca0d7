"""Ground-truth trees and the synthetic datasets of the three experiments."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import CLASSIFICATION, REGRESSION, Dataset, FeatureColumn, Target, make_dataset


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GroundTruthTree:
    """Axis-aligned labelling tree. Node 0 is the root; ``feature[t] == -1`` is a leaf.

    Feature indices are zero-based.
    """

    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_value: np.ndarray
    relevant_features: frozenset
    p_total: int
    task: str = CLASSIFICATION
    seed: Optional[int] = None

    def n_splits(self) -> int:
        return int(np.count_nonzero(self.feature >= 0))

    def used_features(self) -> set:
        return set(int(f) for f in self.feature[self.feature >= 0])

    def apply(self, X: np.ndarray) -> np.ndarray:
        from . import _kernels as K
        return K.route(self.feature, self.threshold, self.missing_left, self.left, self.right,
                       np.ascontiguousarray(X, dtype=np.float64))

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_value[self.apply(X)]

    def to_dict(self) -> dict:
        nodes = []
        for t in range(self.feature.size):
            if self.feature[t] >= 0:
                nodes.append({"id": t, "split_feature": int(self.feature[t]),
                              "threshold": float(self.threshold[t]),
                              "missing_goes_left": bool(self.missing_left[t]),
                              "left": int(self.left[t]), "right": int(self.right[t])})
            else:
                nodes.append({"id": t, "leaf_value": float(self.leaf_value[t])})
        return {"task": self.task, "p_total": self.p_total, "seed": self.seed,
                "relevant_features": sorted(self.relevant_features), "nodes": nodes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "GroundTruthTree":
        nodes = sorted(doc["nodes"], key=lambda nd: nd["id"])
        k = len(nodes)
        feature = np.full(k, -1)
        threshold = np.zeros(k)
        mleft = np.ones(k, dtype=bool)
        left = np.full(k, -1)
        right = np.full(k, -1)
        value = np.zeros(k)
        for t, nd in enumerate(nodes):
            if "split_feature" in nd:
                feature[t] = nd["split_feature"]
                threshold[t] = nd["threshold"]
                mleft[t] = nd["missing_goes_left"]
                left[t], right[t] = nd["left"], nd["right"]
            else:
                value[t] = nd["leaf_value"]
        return cls(feature, threshold, mleft, left, right, value,
                   frozenset(doc["relevant_features"]), int(doc["p_total"]),
                   doc.get("task", CLASSIFICATION), doc.get("seed"))

    @classmethod
    def from_json(cls, text: str) -> "GroundTruthTree":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Exp1Config:
    n: int
    sigma: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.n < 8:
            raise ValueError("experiment 1 needs n >= 8")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class RandomTreeConfig:
    p_total: int = 7
    p_used: int = 3
    max_splits: int = 15
    min_splits: int = 3
    quantization_levels: Tuple[Tuple[int, int], ...] = ()
    seed: Optional[int] = None
    min_leaf_mass: float = 0.005

    def __post_init__(self):
        if not 1 <= self.min_splits <= self.max_splits:
            raise ValueError("need 1 <= min_splits <= max_splits")
        if not 1 <= self.p_used <= self.p_total:
            raise ValueError("need 1 <= p_used <= p_total")
        for j, k in self.quantization_levels:
            if k < 2:
                raise ValueError(f"feature {j}: quantization needs k >= 2")
            if not 0 <= j < self.p_total:
                raise ValueError(f"quantized feature {j} out of range")
        if not 0.0 <= self.min_leaf_mass < 1.0:
            raise ValueError("min_leaf_mass must lie in [0, 1)")

    def levels(self) -> dict:
        return dict(self.quantization_levels)


# experiment 3: the last four of seven features take 2, 4, 10 and 20 values
EXP3_LEVELS = ((3, 2), (4, 4), (5, 10), (6, 20))


def _rng(rng, seed) -> np.random.Generator:
    if rng is not None:
        return rng
    return np.random.default_rng(seed)


def quantize(col: FeatureColumn, k: int) -> FeatureColumn:
    """Round values in [0, 1] onto the grid ``{0, 1/(k-1), ..., 1}`` (half rounds up)."""
    if k < 2:
        raise ValueError("quantize needs k >= 2")
    if col.missing_mask.any():
        raise ValueError("quantize expects a column without missing entries")
    v = np.floor(col.values * (k - 1) + 0.5) / (k - 1)
    return FeatureColumn(v, col.missing_mask)


def inject_missing(col: FeatureColumn, fraction: float, rng: np.random.Generator) -> FeatureColumn:
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    n = len(col)
    k = int(np.floor(fraction * n + 0.5))
    mask = col.missing_mask.copy()
    if k:
        mask[rng.choice(n, size=k, replace=False)] = True
    return FeatureColumn(col.values, mask)


# -- experiment 1 -----------------------------------------------------------

EXP1_TRUTH_IMPORTANCE = (0.0, 0.0, 0.0, 0.1, 0.1, 0.8)


def experiment1_tree() -> GroundTruthTree:
    """The fixed regression tree: X6 at the root, then X4 (missing left) or X5."""
    feature = np.array([5, 3, -1, -1, 4, -1, -1])
    threshold = np.array([0.5, 0.5, 0.0, 0.0, 0.5, 0.0, 0.0])
    mleft = np.ones(7, dtype=bool)
    left = np.array([1, 2, -1, -1, 5, -1, -1])
    right = np.array([4, 3, -1, -1, 6, -1, -1])
    value = np.array([0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0])
    return GroundTruthTree(feature, threshold, mleft, left, right, value,
                           frozenset({3, 4, 5}), 6, REGRESSION)


def exp1_features(n: int, rng: np.random.Generator) -> List[FeatureColumn]:
    U = rng.random((n, 5))
    cols = [FeatureColumn.from_values(U[:, j]) for j in range(5)]
    cols[3] = inject_missing(cols[3], 0.25, rng)
    # one decimal digit; half rounds up
    cols[4] = FeatureColumn.from_values(np.floor(U[:, 4] * 10.0 + 0.5) / 10.0)
    cols.append(FeatureColumn.from_values(rng.integers(0, 2, size=n).astype(np.float64)))
    return cols


def gen_experiment1(cfg: Exp1Config, rng: Optional[np.random.Generator] = None,
                    noise: bool = True):
    """Returns ``(dataset, ground_truth_tree, truth_importance)``."""
    rng = _rng(rng, cfg.seed)
    cols = exp1_features(cfg.n, rng)
    tree = experiment1_tree()
    mean = tree.predict_matrix(np.column_stack([c.values for c in cols]))
    eps = rng.normal(0.0, cfg.sigma, size=cfg.n)
    y = mean + eps if noise else mean
    data = make_dataset(cols, Target(REGRESSION, y))
    return data, tree, np.array(EXP1_TRUTH_IMPORTANCE)


# -- experiments 2 and 3 ----------------------------------------------------

def _feasible_interval(lo, hi, levels, min_width=0.05):
    """Whether a node's interval ``[lo, hi]`` can be split further."""
    if levels is None:
        return hi - lo >= min_width
    grid = np.arange(levels) / (levels - 1)
    inside = grid[(grid >= lo) & (grid <= hi)]
    return inside.size >= 2


def _draw_threshold(lo, hi, levels, rng):
    if levels is None:
        margin = 0.1 * (hi - lo)
        return float(rng.uniform(lo + margin, hi - margin))
    grid = np.arange(levels) / (levels - 1)
    inside = grid[(grid >= lo) & (grid <= hi)]
    i = int(rng.integers(0, inside.size - 1))
    return float(0.5 * (inside[i] + inside[i + 1]))


def _interval_mass(lo, hi, levels) -> float:
    """Probability that one feature lands in ``[lo, hi]``."""
    if levels is None:
        return hi - lo
    grid = np.arange(levels) / (levels - 1)
    # round-half-up gives the two end levels half the mass of the others
    w = np.full(levels, 1.0 / (levels - 1))
    w[0] = w[-1] = 0.5 / (levels - 1)
    return float(w[(grid >= lo) & (grid <= hi)].sum())


def _box_mass(box: dict, levels: dict) -> float:
    return float(np.prod([_interval_mass(lo, hi, levels.get(j)) for j, (lo, hi) in box.items()]))


def _try_random_tree(cfg: RandomTreeConfig, used: Sequence[int], n_splits: int,
                     rng: np.random.Generator):
    levels = cfg.levels()
    # each node: (feature, threshold, left, right) and its box as {feature: (lo, hi)}
    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    boxes = [{j: (0.0, 1.0) for j in used}]
    mass = [1.0]
    for _ in range(n_splits):
        candidates = []
        for t in range(len(feature)):
            if feature[t] >= 0:
                continue
            ok = [j for j in used if _feasible_interval(*boxes[t][j], levels.get(j))]
            if ok:
                candidates.append((t, ok))
        if not candidates:
            return None
        # leaves are split in proportion to their mass so tiny regions stay rare
        w = np.array([mass[t] for t, _ in candidates])
        t, ok = candidates[int(rng.choice(len(candidates), p=w / w.sum()))]
        j = ok[int(rng.integers(len(ok)))]
        lo, hi = boxes[t][j]
        thr = _draw_threshold(lo, hi, levels.get(j), rng)
        feature[t] = j
        threshold[t] = thr
        for box in ((lo, thr), (thr, hi)):
            nb = dict(boxes[t])
            nb[j] = box
            boxes.append(nb)
            mass.append(_box_mass(nb, levels))
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
        left[t] = len(feature) - 2
        right[t] = len(feature) - 1
    leaf_mass = min(m for m, f in zip(mass, feature) if f < 0)
    if leaf_mass < cfg.min_leaf_mass:
        return None
    return (np.array(feature), np.array(threshold), np.array(left), np.array(right))


def _assign_labels(feature, left, right, rng):
    k = feature.size
    value = np.zeros(k)
    is_leaf = feature < 0
    labelled = np.zeros(k, dtype=bool)
    for t in np.flatnonzero(~is_leaf):
        lt, rt = left[t], right[t]
        if is_leaf[lt] and is_leaf[rt]:
            a = float(rng.integers(0, 2))
            value[lt], value[rt] = a, 1.0 - a
            labelled[lt] = labelled[rt] = True
    for t in np.flatnonzero(is_leaf & ~labelled):
        value[t] = float(rng.integers(0, 2))
    return value


def gen_random_tree(cfg: RandomTreeConfig, rng: Optional[np.random.Generator] = None,
                    max_attempts: int = 1000) -> GroundTruthTree:
    """Random classification tree using exactly ``p_used`` of ``p_total`` features.

    The split count and the feature subset are drawn once; the structure is
    redrawn until every chosen feature is used and every leaf holds at least
    ``cfg.min_leaf_mass`` of the feature distribution.
    """
    rng = _rng(rng, cfg.seed)
    used = sorted(int(j) for j in rng.choice(cfg.p_total, size=cfg.p_used, replace=False))
    n_splits = int(rng.integers(cfg.min_splits, cfg.max_splits + 1))
    for _ in range(max_attempts):
        built = _try_random_tree(cfg, used, n_splits, rng)
        if built is None:
            continue
        feature, threshold, left, right = built
        if set(int(f) for f in feature[feature >= 0]) != set(used):
            continue
        value = _assign_labels(feature, left, right, rng)
        return GroundTruthTree(feature, threshold, np.ones(feature.size, dtype=bool), left, right,
                               value, frozenset(used), cfg.p_total, CLASSIFICATION, cfg.seed)
    raise GenerationError(f"no valid tree after {max_attempts} attempts for {cfg}")


def sample_features(n: int, cfg: RandomTreeConfig,
                    rng: Optional[np.random.Generator] = None) -> List[FeatureColumn]:
    rng = _rng(rng, cfg.seed)
    U = rng.random((n, cfg.p_total))
    cols = [FeatureColumn.from_values(U[:, j]) for j in range(cfg.p_total)]
    for j, k in cfg.quantization_levels:
        cols[j] = quantize(cols[j], k)
    return cols


def label_with_tree(tree: GroundTruthTree, features: Sequence[FeatureColumn]) -> Target:
    if len(features) != tree.p_total:
        raise ValueError(f"tree expects {tree.p_total} features, got {len(features)}")
    X = np.column_stack([c.values for c in features])
    return Target(tree.task, tree.predict_matrix(X))


def gen_random_dataset(tree: GroundTruthTree, n: int, cfg: RandomTreeConfig,
                       rng: np.random.Generator) -> Dataset:
    cols = sample_features(n, cfg, rng)
    return make_dataset(cols, label_with_tree(tree, cols))


def experiment_config(experiment: int, seed: Optional[int] = None) -> RandomTreeConfig:
    if experiment == 2:
        return RandomTreeConfig(seed=seed)
    if experiment == 3:
        return RandomTreeConfig(quantization_levels=EXP3_LEVELS, seed=seed)
    raise ValueError(f"no random-tree configuration for experiment {experiment}")
