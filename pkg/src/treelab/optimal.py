"""Globally-optimized single trees by restart-based local search.

The objective is ``error(T) / error(best single leaf) + cp * splits(T)`` with
misclassification count (classification) or sum of squared errors
(regression) as the error. Each restart is improved by coordinate descent
over node moves until a full pass changes nothing; restart 0 is the greedy
tree grown to the depth limit and the others are random valid trees.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import _kernels as K
from .cart import grow_cart
from .data import CLASSIFICATION, Dataset
from .tree import DecisionTree, annotate, count_splits, error_on

DEFAULT_CP_GRID = (0.0, 0.0001, 0.0005, 0.001, 0.005, 0.01, 0.05, 0.1)


@dataclass(frozen=True)
class OptSearchConfig:
    depths: Tuple[int, ...] = tuple(range(1, 11))
    cps: Tuple[float, ...] = DEFAULT_CP_GRID
    restarts: int = 20
    min_leaf: int = 1
    max_passes: int = 200
    random_split_prob: float = 0.5
    exact_depth2_work: float = 2e6
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.depths or not self.cps:
            raise ValueError("depth and cp grids must be nonempty")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if min(self.depths) < 1:
            raise ValueError("depths must be >= 1")


def to_heap(tree: DecisionTree, max_depth: int):
    nn = 2 ** (max_depth + 1) - 1
    hf = np.full(nn, K.ABSENT, dtype=np.int64)
    ht = np.zeros(nn)
    hm = np.ones(nn, dtype=bool)
    stack = [(0, 0)]
    while stack:
        t, h = stack.pop()
        if tree.feature[t] >= 0:
            if 2 * h + 2 >= nn:
                raise ValueError("tree is deeper than the heap allows")
            hf[h] = tree.feature[t]
            ht[h] = tree.threshold[t]
            hm[h] = tree.missing_left[t]
            stack.append((int(tree.left[t]), 2 * h + 1))
            stack.append((int(tree.right[t]), 2 * h + 2))
        else:
            hf[h] = K.LEAF
    return hf, ht, hm


def from_heap(hf, ht, hm, train: Dataset, task: str) -> DecisionTree:
    order = []
    new_id = {}
    stack = [0]
    while stack:
        h = stack.pop()
        new_id[h] = len(order)
        order.append(h)
        if hf[h] >= 0:
            stack.append(2 * h + 2)
            stack.append(2 * h + 1)
    k = len(order)
    feature = np.array([hf[h] if hf[h] >= 0 else -1 for h in order], dtype=np.int64)
    left = np.array([new_id[2 * h + 1] if hf[h] >= 0 else -1 for h in order], dtype=np.int64)
    right = np.array([new_id[2 * h + 2] if hf[h] >= 0 else -1 for h in order], dtype=np.int64)
    idx = np.array(order)
    return annotate(feature, ht[idx], hm[idx], left, right, train.matrix(),
                    np.asarray(train.y, dtype=np.float64), task, train.p)


def _prepared(train: Dataset, task: str):
    X = train.matrix()
    y = np.asarray(train.y, dtype=np.float64)
    if task == CLASSIFICATION:
        c1 = y.sum()
        base = float(min(c1, y.size - c1))
    else:
        # a global shift leaves every squared error unchanged
        y = y - y.mean()
        base = float(np.sum(y * y))
    return X, np.ascontiguousarray(y), base


@dataclass
class SearchResult:
    tree: DecisionTree
    objective: float
    restart: int
    objectives: list = field(default_factory=list)
    traces: list = field(default_factory=list)


def local_search_detail(train: Dataset, task: Optional[str], depth: int, cp: float,
                        rng: np.random.Generator, restarts: int = 20, min_leaf: int = 1,
                        max_passes: int = 200, random_split_prob: float = 0.5,
                        keep_traces: bool = False,
                        exact_depth2_work: float = 2e6) -> SearchResult:
    task = task or train.task
    if depth < 1:
        raise ValueError("depth must be >= 1")
    X, y, base = _prepared(train, task)
    is_clf = task == CLASSIFICATION
    seeds = rng.integers(0, 2 ** 31 - 1, size=2 * restarts)
    if base <= 0.0 or train.n_rows < 2 * min_leaf:
        hf = np.array([K.LEAF] + [K.ABSENT] * (2 ** (depth + 1) - 2), dtype=np.int64)
        tree = from_heap(hf, np.zeros(hf.size), np.ones(hf.size, dtype=bool), train, task)
        return SearchResult(tree, 0.0, 0, [0.0])
    best = None
    objectives = []
    traces = []
    gorder = K.presort(X)
    nn = 2 ** (depth + 1) - 1
    x2_sig = np.full(nn, -1, dtype=np.int64)
    x2_res = np.zeros((nn, 10))
    for r in range(restarts):
        if r == 0:
            hf, ht, hm = to_heap(grow_cart(train, task, min_leaf=min_leaf, max_depth=depth), depth)
        else:
            hf, ht, hm = K.random_heap_tree(X, depth, min_leaf, random_split_prob, int(seeds[2 * r]))
        trace = np.empty(10000 if keep_traces else 0)
        J0 = K.tree_objective(hf, ht, hm, X, y, is_clf, cp, base)
        J, n_moves = K.local_search_kernel(X, y, is_clf, depth, cp, min_leaf, base, hf, ht, hm,
                                           int(seeds[2 * r + 1]), max_passes, trace, gorder,
                                           float(exact_depth2_work), x2_sig, x2_res)
        objectives.append(J)
        if keep_traces:
            traces.append(np.concatenate([[J0], trace[:min(n_moves, trace.size)]]))
        ns = int((hf >= 0).sum())
        # ties between restarts go to the smaller tree
        if best is None or J < best[0] - 1e-12 or (J <= best[0] + 1e-12 and ns < best[5]):
            best = (J, r, hf, ht, hm, ns)
    J, r, hf, ht, hm, _ = best
    tree = from_heap(hf, ht, hm, train, task)
    return SearchResult(tree, J, r, objectives, traces)


def local_search(train: Dataset, task: Optional[str], depth: int, cp: float,
                 rng: np.random.Generator, restarts: int = 20, min_leaf: int = 1) -> DecisionTree:
    return local_search_detail(train, task, depth, cp, rng, restarts, min_leaf).tree


def objective(tree: DecisionTree, train: Dataset, cp: float) -> float:
    """Normalized error plus ``cp`` per split, evaluated on ``train``."""
    X, y, base = _prepared(train, tree.task)
    pred = tree.apply(X)
    if tree.task == CLASSIFICATION:
        err = 0.0
        for leaf in np.unique(pred):
            yl = y[pred == leaf]
            c1 = yl.sum()
            err += min(c1, yl.size - c1)
    else:
        err = 0.0
        for leaf in np.unique(pred):
            yl = y[pred == leaf]
            err += float(np.sum((yl - yl.mean()) ** 2))
    if base <= 0.0:
        return cp * count_splits(tree)
    return err / base + cp * count_splits(tree)


@dataclass(frozen=True)
class OptFit:
    tree: DecisionTree
    depth: int
    cp: float
    valid_error: float


def oct_validation_path(train: Dataset, valid: Dataset, task: Optional[str] = None,
                        cfg: OptSearchConfig = OptSearchConfig(),
                        rng: Optional[np.random.Generator] = None) -> OptFit:
    task = task or train.task
    if train.p != valid.p or train.task != valid.task:
        raise ValueError("train and valid schemas differ")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    best = None
    for depth in sorted(cfg.depths):
        for cp in cfg.cps:
            res = local_search_detail(train, task, depth, cp, rng, cfg.restarts, cfg.min_leaf,
                                      cfg.max_passes, cfg.random_split_prob,
                                      exact_depth2_work=cfg.exact_depth2_work)
            tree = res.tree
            verr = error_on(tree, valid)
            key = (verr, count_splits(tree), depth)
            if best is None or _better(key, best[0]):
                best = (key, OptFit(tree, depth, cp, verr))
    return best[1]


def _better(key, incumbent) -> bool:
    verr, splits, depth = key
    bverr, bsplits, bdepth = incumbent
    tol = 1e-12 * max(1.0, abs(bverr))
    if verr < bverr - tol:
        return True
    if verr > bverr + tol:
        return False
    return (splits, depth) < (bsplits, bdepth)


def fit_oct_validated(train: Dataset, valid: Dataset, task: Optional[str] = None,
                      cfg: OptSearchConfig = OptSearchConfig(),
                      rng: Optional[np.random.Generator] = None) -> DecisionTree:
    return oct_validation_path(train, valid, task, cfg, rng).tree
