"""Greedy CART growing, weakest-link pruning and validation-set selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import _kernels as K
from .data import CLASSIFICATION, Dataset
from .tree import DecisionTree, count_splits, subtree


@dataclass(frozen=True)
class PruneStep:
    alpha: float
    tree: DecisionTree
    train_error: float


def _channels(y: np.ndarray, task: str) -> np.ndarray:
    if task == CLASSIFICATION:
        return np.column_stack([y, 1.0 - y])
    return y.reshape(-1, 1).copy()


def grow_cart(train: Dataset, task: Optional[str] = None, min_leaf: int = 1,
              max_depth: int = 30) -> DecisionTree:
    """Grow a tree by exhaustive best-split search (Gini or squared error)."""
    task = task or train.task
    if train.n_rows < 2 * min_leaf:
        raise ValueError(f"need at least {2 * min_leaf} rows, got {train.n_rows}")
    X = train.matrix()
    y = np.asarray(train.y, dtype=np.float64)
    S = _channels(y, task)
    W = np.ones(train.n_rows)
    feat, thr, ml, left, right, start, end, delta, perm = K.grow(
        X, S, W, 0.0, min_leaf, 0.0, max_depth, 0.0, K.presort(X))
    mean, msd = K.segment_moments(perm, start, end, y)
    cover = (end - start).astype(np.float64)
    if task == CLASSIFICATION:
        imp = 2.0 * mean * (1.0 - mean)
    else:
        imp = msd
    return DecisionTree(feat, thr, ml, left, right, mean, cover, imp, delta, task, train.p)


def _node_train_error(tree: DecisionTree) -> np.ndarray:
    if tree.task == CLASSIFICATION:
        v = tree.value
        # the leaf label is 1 iff v > 0.5; ties count the class-1 rows as errors
        return tree.cover * np.where(v > 0.5, 1.0 - v, v)
    return tree.cover * tree.impurity


@dataclass
class _PrunePath:
    alphas: list
    cuts: list            # cumulative number of entries of ``order`` per step
    order: list           # nodes in the order they were collapsed
    train_error: list
    n_splits: list
    valid_error: list


def _weakest_link(tree: DecisionTree, n_train: int, valid_errors: Optional[np.ndarray] = None,
                  n_valid: int = 1) -> _PrunePath:
    k = tree.n_nodes
    feat = tree.feature
    parent = np.full(k, -1)
    internal = np.flatnonzero(feat >= 0)
    parent[tree.left[internal]] = internal
    parent[tree.right[internal]] = internal
    # error if collapsed to a leaf, as a rate over the training rows
    r_node = _node_train_error(tree) / n_train
    r_sub = np.where(feat < 0, r_node, 0.0)
    v_node = np.zeros(k) if valid_errors is None else valid_errors / n_valid
    v_sub = np.where(feat < 0, v_node, 0.0)
    n_sub = np.zeros(k)
    # children always carry larger ids than their parent
    post = sorted(internal, reverse=True)
    for t in post:
        lt, rt = tree.left[t], tree.right[t]
        r_sub[t] = r_sub[lt] + r_sub[rt]
        v_sub[t] = v_sub[lt] + v_sub[rt]
        n_sub[t] = n_sub[lt] + n_sub[rt] + 1
    g = np.full(k, np.inf)
    g[internal] = (r_node[internal] - r_sub[internal]) / n_sub[internal]
    tol = 1e-9 * max(r_node[0], 1e-300)

    def collapse(t):
        d_r = r_node[t] - r_sub[t]
        d_v = v_node[t] - v_sub[t]
        d_n = n_sub[t]
        stack = [int(tree.left[t]), int(tree.right[t])]
        while stack:
            u = stack.pop()
            if g[u] < np.inf:
                g[u] = np.inf
                stack.append(int(tree.left[u]))
                stack.append(int(tree.right[u]))
        g[t] = np.inf
        r_sub[t], v_sub[t], n_sub[t] = r_node[t], v_node[t], 0
        u = parent[t]
        while u >= 0:
            r_sub[u] += d_r
            v_sub[u] += d_v
            n_sub[u] -= d_n
            g[u] = (r_node[u] - r_sub[u]) / n_sub[u]
            u = parent[u]

    path = _PrunePath([], [], [], [], [], [])
    alpha = 0.0
    while True:
        while internal.size:
            t = int(np.argmin(g))
            if not g[t] <= alpha + tol:
                break
            path.order.append(t)
            collapse(t)
        path.alphas.append(alpha)
        path.cuts.append(len(path.order))
        path.train_error.append(float(r_sub[0]))
        path.n_splits.append(int(n_sub[0]))
        path.valid_error.append(float(v_sub[0]))
        if n_sub[0] == 0:
            break
        alpha = max(float(g.min()), alpha)
    return path


def prune_sequence(full_tree: DecisionTree, train: Dataset) -> List[PruneStep]:
    """Weakest-link cost-complexity sequence; alpha is in training-error-rate units."""
    path = _weakest_link(full_tree, train.n_rows)
    return [PruneStep(a, subtree(full_tree, path.order[:c]), e)
            for a, c, e in zip(path.alphas, path.cuts, path.train_error)]


def _check_schema(train: Dataset, valid: Dataset, task: str):
    if train.p != valid.p:
        raise ValueError(f"train has {train.p} features, valid has {valid.p}")
    if train.task != valid.task or train.task != task:
        raise ValueError("train/valid target kinds do not match the task")


@dataclass(frozen=True)
class ValidatedFit:
    tree: DecisionTree
    step: int
    alphas: tuple
    valid_errors: tuple
    n_splits: tuple


def cart_validation_path(train: Dataset, valid: Dataset, task: Optional[str] = None,
                         min_leaf: int = 1, max_depth: int = 30) -> ValidatedFit:
    task = task or train.task
    _check_schema(train, valid, task)
    full = grow_cart(train, task, min_leaf=min_leaf, max_depth=max_depth)
    verr = K.node_path_errors(full.feature, full.threshold, full.missing_left, full.left,
                              full.right, full.value, task == CLASSIFICATION,
                              valid.matrix(), np.asarray(valid.y, dtype=np.float64))
    path = _weakest_link(full, train.n_rows, verr, valid.n_rows)
    ve = np.array(path.valid_error)
    best = float(ve.min())
    tol = 1e-12 * max(best, 1.0)
    # ties go to the later (smaller) tree
    step = int(np.flatnonzero(ve <= best + tol)[-1])
    tree = subtree(full, path.order[:path.cuts[step]])
    return ValidatedFit(tree, step, tuple(path.alphas), tuple(path.valid_error), tuple(path.n_splits))


def fit_cart_validated(train: Dataset, valid: Dataset, task: Optional[str] = None) -> DecisionTree:
    """Grow on ``train``, prune, and keep the subtree with the least validation error."""
    return cart_validation_path(train, valid, task).tree


__all__ = ["PruneStep", "grow_cart", "prune_sequence", "fit_cart_validated",
           "cart_validation_path", "count_splits"]
