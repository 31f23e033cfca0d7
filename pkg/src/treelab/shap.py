"""Path-dependent Shapley attributions for trees and boosted ensembles."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from math import factorial
from pathlib import Path
from typing import Iterable, List, Union

import numpy as np

from . import _kernels as K
from .boosting import BoostedEnsemble
from .data import MISSING, Dataset
from .tree import DecisionTree, normalize_shares

Model = Union[DecisionTree, BoostedEnsemble]

MAX_BRUTE_FORCE_FEATURES = 20


@dataclass(frozen=True)
class Attribution:
    phi: np.ndarray
    base_value: float


def _as_array(row) -> np.ndarray:
    if isinstance(row, np.ndarray):
        return row.astype(np.float64)
    return np.array([np.nan if v is MISSING else float(v) for v in row], dtype=np.float64)


def _components(model: Model):
    """``(tree, scale)`` pairs and the additive offset of the margin."""
    if isinstance(model, BoostedEnsemble):
        return [(t, model.eta) for t in model.trees], model.base_score
    return [(model, 1.0)], 0.0


def conditional_expectation(tree: DecisionTree, row, known: Iterable[int]) -> float:
    """Expected tree output given only the features in ``known``.

    Splits on known features follow the row; splits on unknown features
    average both children weighted by their training cover.
    """
    x = _as_array(row)
    known = set(int(j) for j in known)

    def walk(t: int) -> float:
        f = tree.feature[t]
        if f < 0:
            return float(tree.value[t])
        lt, rt = int(tree.left[t]), int(tree.right[t])
        if f in known:
            xv = x[f]
            goes_left = tree.missing_left[t] if np.isnan(xv) else xv <= tree.threshold[t]
            return walk(lt if goes_left else rt)
        cl, cr = tree.cover[lt], tree.cover[rt]
        if cl + cr <= 0:
            raise ValueError(f"node {t} has zero cover")
        return (cl * walk(lt) + cr * walk(rt)) / (cl + cr)

    return walk(0)


def model_value(model: Model, row, known) -> float:
    parts, offset = _components(model)
    return offset + sum(s * conditional_expectation(t, row, known) for t, s in parts)


def brute_force_shap(model: Model, row) -> Attribution:
    """Exact Shapley values by enumerating every coalition (``p <= 20``)."""
    p = model.p_total
    if p > MAX_BRUTE_FORCE_FEATURES:
        raise ValueError(f"brute-force attribution limited to {MAX_BRUTE_FORCE_FEATURES} features, got {p}")
    x = _as_array(row)
    cache = {}

    def v(subset: frozenset) -> float:
        if subset not in cache:
            cache[subset] = model_value(model, x, subset)
        return cache[subset]

    weight = [factorial(k) * factorial(p - k - 1) / factorial(p) for k in range(p)]
    phi = np.zeros(p)
    for j in range(p):
        others = [i for i in range(p) if i != j]
        for k in range(p):
            for S in combinations(others, k):
                s = frozenset(S)
                phi[j] += weight[k] * (v(s | {j}) - v(s))
    return Attribution(phi, v(frozenset()))


def _leaf_paths(tree: DecisionTree):
    """Flattened root-to-leaf paths: for every leaf, its split conditions."""
    leaves = []
    ptr = [0]
    feats, thrs, mls, dirs, fracs = [], [], [], [], []
    stack = [(0, [])]
    while stack:
        t, path = stack.pop()
        if tree.feature[t] < 0:
            leaves.append(t)
            for (u, goes_left) in path:
                child = tree.left[u] if goes_left else tree.right[u]
                feats.append(int(tree.feature[u]))
                thrs.append(float(tree.threshold[u]))
                mls.append(bool(tree.missing_left[u]))
                dirs.append(goes_left)
                fracs.append(float(tree.cover[child] / tree.cover[u]))
            ptr.append(len(feats))
            continue
        stack.append((int(tree.right[t]), path + [(t, False)]))
        stack.append((int(tree.left[t]), path + [(t, True)]))
    return (tree.value[np.array(leaves)].astype(np.float64), np.array(ptr, dtype=np.int64),
            np.array(feats, dtype=np.int64), np.array(thrs, dtype=np.float64),
            np.array(mls, dtype=np.bool_), np.array(dirs, dtype=np.bool_),
            np.array(fracs, dtype=np.float64))


def shap_matrix(model: Model, X: np.ndarray):
    """Shapley values for every row of ``X``; returns ``(phi, base_value)``."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    parts, offset = _components(model)
    phi = np.zeros((X.shape[0], model.p_total))
    base = np.zeros(1)
    for tree, scale in parts:
        if tree.feature[0] < 0:
            base[0] += scale * tree.value[0]
            continue
        if np.any(tree.cover[tree.splits()] <= 0):
            raise ValueError("tree has a split node with zero cover")
        K.tree_shap_rows(X, *_leaf_paths(tree), scale, phi, base)
    return phi, float(base[0] + offset)


def fast_tree_shap(model: Model, row) -> Attribution:
    phi, base = shap_matrix(model, _as_array(row)[None, :])
    return Attribution(phi[0], base)


def shap_importance(model: Model, data: Dataset) -> np.ndarray:
    """Mean absolute attribution per feature over ``data``'s rows, as shares."""
    if data.n_rows == 0:
        raise ValueError("shap_importance needs at least one row")
    phi, _ = shap_matrix(model, data.matrix())
    return normalize_shares(np.abs(phi).mean(axis=0))


def write_attributions(path, model: Model, X: np.ndarray) -> None:
    """Per-row attribution CSV: ``row,feature,phi,base_value``."""
    phi, base = shap_matrix(model, X)
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "feature", "phi", "base_value"])
        for i in range(phi.shape[0]):
            for j in range(phi.shape[1]):
                w.writerow([i, f"x{j + 1}", f"{phi[i, j]:.6f}", f"{base:.6f}"])
