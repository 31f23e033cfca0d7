"""Decision tree container, prediction, impurity and mean-decrease-impurity."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .data import CLASSIFICATION, MISSING, REGRESSION, Dataset, Target


@dataclass(frozen=True)
class DecisionTree:
    """Array-backed binary tree; node 0 is the root.

    ``feature[t] == -1`` marks a leaf. ``value`` is the leaf mean for
    regression and the class-1 probability for classification (internal
    nodes carry the value they would have as leaves). ``cover`` counts the
    training rows reaching each node and ``impurity`` is their per-row
    impurity. ``gain`` holds the split score used by the learner that made
    the tree (impurity decrease for single trees, regularized gain for
    boosted ones); zero at leaves.
    """

    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    impurity: np.ndarray
    gain: np.ndarray
    task: str
    p_total: int

    def __post_init__(self):
        for name, dtype in (("feature", np.int64), ("threshold", np.float64),
                            ("missing_left", bool), ("left", np.int64), ("right", np.int64),
                            ("value", np.float64), ("cover", np.float64),
                            ("impurity", np.float64), ("gain", np.float64)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def is_leaf(self, t: int) -> bool:
        return self.feature[t] < 0

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def splits(self) -> np.ndarray:
        return np.flatnonzero(self.feature >= 0)

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            t, d = stack.pop()
            best = max(best, d)
            if self.feature[t] >= 0:
                stack.append((int(self.left[t]), d + 1))
                stack.append((int(self.right[t]), d + 1))
        return best

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X`` (NaN = missing)."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        return K.route(self.feature, self.threshold, self.missing_left, self.left, self.right, X)

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def structure(self) -> list:
        """Preorder ``(feature, threshold, missing_left)`` tuples, ``None`` for leaves."""
        out = []
        stack = [0]
        while stack:
            t = stack.pop()
            if self.feature[t] < 0:
                out.append(None)
            else:
                out.append((int(self.feature[t]), float(self.threshold[t]), bool(self.missing_left[t])))
                stack.append(int(self.right[t]))
                stack.append(int(self.left[t]))
        return out

    def to_dict(self) -> dict:
        nodes = []
        for t in range(self.n_nodes):
            node = {"id": t, "cover": float(self.cover[t]), "impurity": float(self.impurity[t])}
            if self.feature[t] >= 0:
                node.update(split_feature=int(self.feature[t]), threshold=float(self.threshold[t]),
                            missing_goes_left=bool(self.missing_left[t]),
                            left=int(self.left[t]), right=int(self.right[t]),
                            gain=float(self.gain[t]), value=float(self.value[t]))
            else:
                node.update(leaf_value=float(self.value[t]))
            nodes.append(node)
        return {"task": self.task, "p_total": self.p_total, "nodes": nodes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "DecisionTree":
        nodes = sorted(doc["nodes"], key=lambda nd: nd["id"])
        k = len(nodes)
        feature = np.full(k, -1)
        threshold = np.zeros(k)
        mleft = np.ones(k, dtype=bool)
        left = np.full(k, -1)
        right = np.full(k, -1)
        value = np.zeros(k)
        gain = np.zeros(k)
        for t, nd in enumerate(nodes):
            if "split_feature" in nd:
                feature[t] = nd["split_feature"]
                threshold[t] = nd["threshold"]
                mleft[t] = nd["missing_goes_left"]
                left[t] = nd["left"]
                right[t] = nd["right"]
                gain[t] = nd.get("gain", 0.0)
                value[t] = nd.get("value", 0.0)
            else:
                value[t] = nd["leaf_value"]
        cover = np.array([nd.get("cover", 1.0) for nd in nodes])
        imp = np.array([nd.get("impurity", 0.0) for nd in nodes])
        return cls(feature, threshold, mleft, left, right, value, cover, imp, gain,
                   doc["task"], int(doc["p_total"]))

    @classmethod
    def from_json(cls, text: str) -> "DecisionTree":
        return cls.from_dict(json.loads(text))


def impurity(targets, task: str) -> float:
    """Gini impurity (classification) or mean squared deviation (regression)."""
    y = np.asarray(targets.values if isinstance(targets, Target) else targets, dtype=np.float64)
    if y.size == 0:
        raise ValueError("impurity of an empty subset is undefined")
    if task == CLASSIFICATION:
        p1 = y.mean()
        return float(1.0 - p1 * p1 - (1.0 - p1) ** 2)
    return float(np.mean((y - y.mean()) ** 2))


def _row_array(row: Sequence[Optional[float]]) -> np.ndarray:
    return np.array([np.nan if v is MISSING else float(v) for v in row], dtype=np.float64)


def predict(tree: DecisionTree, row) -> float:
    """Prediction for one row; entries may be ``MISSING``.

    Classification trees return the label, 1 iff the leaf's class-1
    probability exceeds one half.
    """
    x = _row_array(row)
    if x.size != tree.p_total:
        raise ValueError(f"row has {x.size} entries, tree expects {tree.p_total}")
    v = tree.predict_matrix(x[None, :])[0]
    if tree.task == CLASSIFICATION:
        return float(v > 0.5)
    return float(v)


def predict_labels(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    return (tree.predict_matrix(X) > 0.5).astype(np.float64)


def count_splits(tree: DecisionTree) -> int:
    return int(np.count_nonzero(tree.feature >= 0))


def split_decreases(tree: DecisionTree) -> np.ndarray:
    """Cover-weighted impurity decrease of every node (zero at leaves)."""
    out = np.zeros(tree.n_nodes)
    s = tree.splits()
    if s.size:
        cw = tree.cover * tree.impurity
        out[s] = cw[s] - cw[tree.left[s]] - cw[tree.right[s]]
    return out


def normalize_shares(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    total = raw.sum()
    if total <= 0.0:
        return np.zeros_like(raw)
    return raw / total


def mdi_importance(tree: DecisionTree) -> np.ndarray:
    raw = np.zeros(tree.p_total)
    dec = split_decreases(tree)
    s = tree.splits()
    # decreases are non-negative for concave impurities; clip rounding noise
    np.add.at(raw, tree.feature[s], np.maximum(dec[s], 0.0))
    return normalize_shares(raw)


def annotate(feature, threshold, missing_left, left, right, X, y, task, p_total,
             gain=None) -> DecisionTree:
    """Attach cover, value and impurity computed from training rows ``(X, y)``."""
    feature = np.asarray(feature, dtype=np.int64)
    threshold = np.asarray(threshold, dtype=np.float64)
    missing_left = np.asarray(missing_left, dtype=bool)
    left = np.asarray(left, dtype=np.int64)
    right = np.asarray(right, dtype=np.int64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    visits = K.node_visits(feature, threshold, missing_left, left, right, X)
    cover = visits.sum(axis=1).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        value = np.where(cover > 0, visits @ y / np.maximum(cover, 1), 0.0)
        if task == CLASSIFICATION:
            imp = 2.0 * value * (1.0 - value)
        else:
            sq = visits @ (y * y) / np.maximum(cover, 1)
            imp = np.maximum(sq - value * value, 0.0)
    if task == REGRESSION:
        # two-pass variance per node for accuracy
        for t in range(feature.size):
            if cover[t] > 0:
                yt = y[visits[t]]
                imp[t] = float(np.mean((yt - yt.mean()) ** 2))
    if gain is None:
        cw = cover * imp
        gain = np.zeros(feature.size)
        s = np.flatnonzero(feature >= 0)
        gain[s] = cw[s] - cw[left[s]] - cw[right[s]]
    return DecisionTree(feature, threshold, missing_left, left, right, value, cover, imp,
                        gain, task, p_total)


def leaf_tree(value: float, cover: float, imp: float, task: str, p_total: int) -> DecisionTree:
    return DecisionTree([-1], [0.0], [True], [-1], [-1], [value], [cover], [imp], [0.0], task, p_total)


def subtree(tree: DecisionTree, collapsed) -> DecisionTree:
    """Copy of ``tree`` with every node in ``collapsed`` turned into a leaf.

    Nodes are renumbered in preorder; collapsed nodes keep their value,
    cover and impurity.
    """
    collapsed = set(int(t) for t in collapsed)
    order = []
    new_id = {}
    stack = [0]
    while stack:
        t = stack.pop()
        new_id[t] = len(order)
        order.append(t)
        if tree.feature[t] >= 0 and t not in collapsed:
            stack.append(int(tree.right[t]))
            stack.append(int(tree.left[t]))
    k = len(order)
    idx = np.array(order)
    feature = tree.feature[idx].copy()
    left = np.full(k, -1)
    right = np.full(k, -1)
    gain = tree.gain[idx].copy()
    for a, t in enumerate(order):
        if feature[a] >= 0 and t not in collapsed:
            left[a] = new_id[int(tree.left[t])]
            right[a] = new_id[int(tree.right[t])]
        else:
            feature[a] = -1
            gain[a] = 0.0
    return DecisionTree(feature, tree.threshold[idx], tree.missing_left[idx], left, right,
                        tree.value[idx], tree.cover[idx], tree.impurity[idx], gain,
                        tree.task, tree.p_total)


def error_on(tree: DecisionTree, data: Dataset) -> float:
    """Misclassification rate or mean squared error of ``tree`` on ``data``."""
    pred = tree.predict_matrix(data.matrix())
    if data.task == CLASSIFICATION:
        return float(np.mean((pred > 0.5) != (data.y > 0.5)))
    return float(np.mean((pred - data.y) ** 2))
