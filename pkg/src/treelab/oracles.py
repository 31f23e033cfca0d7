"""Brute-force reference implementations and the self-test suites built on them.

Nothing here shares code with the fast kernels: split search, pruning,
depth-2 tree optimization and Shapley values are recomputed by plain
enumeration so disagreements point at real bugs.
"""

from __future__ import annotations

import time
from typing import Callable, List, Optional, Tuple

import numpy as np

from .boosting import GBTParams, fit_gbt
from .cart import grow_cart, prune_sequence
from .data import CLASSIFICATION, REGRESSION, Dataset, from_matrix
from .optimal import from_heap, local_search_detail
from . import _kernels as K
from .shap import brute_force_shap, fast_tree_shap, model_value
from .tree import DecisionTree, count_splits, mdi_importance, split_decreases


# ---------------------------------------------------------------- split search

def candidate_splits(X: np.ndarray, observed_vs_missing: bool = False):
    """Every (feature, threshold, missing_left, left_mask) on the rows of ``X``.

    Thresholds are midpoints between distinct observed values. With
    ``observed_vs_missing`` the split isolating the missing rows is added.
    """
    n, p = X.shape
    for f in range(p):
        col = X[:, f]
        miss = np.isnan(col)
        vals = np.unique(col[~miss])
        dirs = (True, False) if miss.any() else (True,)
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            for ml in dirs:
                left = (col <= thr) | (miss & ml)
                yield f, thr, ml, left
        if observed_vs_missing and miss.any() and vals.size:
            yield f, float(vals[-1]), False, ~miss


def _sse(v):
    return float(np.sum((v - v.mean()) ** 2)) if v.size else 0.0


def _gini_n(v):
    if not v.size:
        return 0.0
    q = v.mean()
    return v.size * 2.0 * q * (1.0 - q)


def brute_cart_gain(X, y, task, min_leaf=1) -> float:
    """Largest impurity decrease (count-weighted Gini or SSE) over all candidates."""
    crit = _gini_n if task == CLASSIFICATION else _sse
    parent = crit(y)
    best = 0.0
    for _, _, _, left in candidate_splits(X):
        nl = int(left.sum())
        if nl < min_leaf or y.size - nl < min_leaf:
            continue
        best = max(best, parent - crit(y[left]) - crit(y[~left]))
    return best


def brute_gbt_gain(X, g, h, lam, gamma, min_child_weight) -> float:
    """Largest regularized second-order gain, ``0.5 * score change - gamma``."""
    def score(m):
        return g[m].sum() ** 2 / (h[m].sum() + lam)
    allrows = np.ones(g.size, dtype=bool)
    best = -np.inf
    for _, _, _, left in candidate_splits(X):
        if not left.any() or left.all():
            continue
        if h[left].sum() < min_child_weight or h[~left].sum() < min_child_weight:
            continue
        best = max(best, 0.5 * (score(left) + score(~left) - score(allrows)) - gamma)
    return best


def node_rows(tree: DecisionTree, X: np.ndarray) -> List[np.ndarray]:
    """Boolean row mask for every node, by walking each row down explicitly."""
    masks = [np.zeros(X.shape[0], dtype=bool) for _ in range(tree.n_nodes)]
    for i in range(X.shape[0]):
        t = 0
        while True:
            masks[t][i] = True
            f = tree.feature[t]
            if f < 0:
                break
            x = X[i, f]
            go_left = tree.missing_left[t] if np.isnan(x) else x <= tree.threshold[t]
            t = int(tree.left[t] if go_left else tree.right[t])
    return masks


# ---------------------------------------------------------------- pruning

def pruned_subtrees(tree: DecisionTree) -> List[frozenset]:
    """Every pruned subtree, as the set of internal nodes it keeps."""
    def opts(t):
        if tree.feature[t] < 0:
            return [frozenset()]
        out = [frozenset()]
        for a in opts(int(tree.left[t])):
            for b in opts(int(tree.right[t])):
                out.append(frozenset({t}) | a | b)
        return out
    return opts(0)


def _kept_error(tree: DecisionTree, kept: frozenset, X, y) -> float:
    """Training error rate of the subtree keeping only ``kept`` splits."""
    pred = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        t = 0
        while t in kept:
            x = X[i, tree.feature[t]]
            go_left = tree.missing_left[t] if np.isnan(x) else x <= tree.threshold[t]
            t = int(tree.left[t] if go_left else tree.right[t])
        pred[i] = tree.value[t]
    if tree.task == CLASSIFICATION:
        return float(np.mean((pred > 0.5) != (y > 0.5)))
    return float(np.mean((pred - y) ** 2))


def check_prune_sequence(tree: DecisionTree, train: Dataset) -> Optional[str]:
    """None if every step is the smallest cost-complexity minimizer at its alpha."""
    X, y = train.matrix(), np.asarray(train.y)
    subs = pruned_subtrees(tree)
    R = np.array([_kept_error(tree, s, X, y) for s in subs])
    size = np.array([len(s) for s in subs])
    steps = prune_sequence(tree, train)
    scale = max(R.max(), 1e-12)
    tol = 1e-9 * scale
    prev = None
    for k, st in enumerate(steps):
        cost = R + st.alpha * size
        best = cost.min()
        mine = float(np.mean((st.tree.predict_matrix(X) > 0.5) != (y > 0.5))
                     if tree.task == CLASSIFICATION else np.mean((st.tree.predict_matrix(X) - y) ** 2))
        if abs(mine - st.train_error) > tol:
            return f"step {k}: reported error {st.train_error} but tree has {mine}"
        if mine + st.alpha * count_splits(st.tree) > best + tol:
            return f"step {k}: cost {mine + st.alpha * count_splits(st.tree)} > optimum {best}"
        smallest = size[cost <= best + tol].min()
        if count_splits(st.tree) != smallest:
            return f"step {k}: {count_splits(st.tree)} splits, smallest minimizer has {smallest}"
        if prev is not None and not st.alpha > prev:
            return f"step {k}: alphas not increasing"
        prev = st.alpha
    if count_splits(steps[-1].tree) != 0:
        return "sequence does not end at the root"
    return None


# ---------------------------------------------------------------- optimal trees

def _leaf_err(y, task):
    if task == CLASSIFICATION:
        c1 = y.sum()
        return float(min(c1, y.size - c1))
    return _sse(y)


def _best_depth1(X, y, task, base, cp, min_leaf):
    best = _leaf_err(y, task) / base
    for _, _, _, left in candidate_splits(X, True):
        nl = int(left.sum())
        if nl < min_leaf or y.size - nl < min_leaf:
            continue
        best = min(best, (_leaf_err(y[left], task) + _leaf_err(y[~left], task)) / base + cp)
    return best


def exhaustive_optimum(X, y, task, depth, cp, min_leaf=1) -> float:
    """Global minimum of ``error / base + cp * splits`` over trees of depth <= 2.

    The objective is additive over the two root subtrees, so each child is
    optimized on its own for every root split.
    """
    if depth not in (1, 2):
        raise ValueError("exhaustive search is limited to depth 1 or 2")
    base = _leaf_err(y, task)
    if base <= 0:
        return 0.0
    if depth == 1:
        return _best_depth1(X, y, task, base, cp, min_leaf)
    best = _leaf_err(y, task) / base
    for _, _, _, left in candidate_splits(X, True):
        nl = int(left.sum())
        if nl < min_leaf or y.size - nl < min_leaf:
            continue
        v = cp + _best_depth1(X[left], y[left], task, base, cp, min_leaf) \
            + _best_depth1(X[~left], y[~left], task, base, cp, min_leaf)
        best = min(best, v)
    return best


# ---------------------------------------------------------------- random instances

def random_instance(rng: np.random.Generator, n: int, p: int, task: str,
                    missing: float = 0.0, levels: Optional[int] = None) -> Dataset:
    X = rng.random((n, p))
    if levels:
        X = np.floor(X * levels) / levels
    if missing > 0:
        X[rng.random((n, p)) < missing] = np.nan
        X[0] = np.where(np.isnan(X[0]), 0.5, X[0])
    if task == CLASSIFICATION:
        w = rng.normal(size=p)
        z = np.nan_to_num(X, nan=0.5) @ w
        y = (z + 0.3 * rng.normal(size=n) > np.median(z)).astype(float)
    else:
        y = np.nan_to_num(X[:, 0], nan=0.3) * 2 + rng.normal(size=n)
    return from_matrix(X, y, task)


def random_tree_on(rng: np.random.Generator, data: Dataset, depth: int) -> DecisionTree:
    hf, ht, hm = K.random_heap_tree(data.matrix(), depth, 1, 0.7, int(rng.integers(2 ** 31)))
    return from_heap(hf, ht, hm, data, data.task)


# ---------------------------------------------------------------- suites

def suite_shap(rng, count=1000) -> Tuple[bool, str]:
    worst = 0.0
    worst_acc = 0.0
    for i in range(count):
        p = int(rng.integers(2, 8))
        task = CLASSIFICATION if i % 2 else REGRESSION
        data = random_instance(rng, int(rng.integers(20, 60)), p, task, missing=0.1 * (i % 3 == 0))
        if i % 4 == 3:
            model = fit_gbt(data, task, GBTParams(rounds=3, max_depth=3, eta=0.5))
        else:
            model = grow_cart(data, task, max_depth=int(rng.integers(1, 6)))
        row = data.matrix()[int(rng.integers(data.n_rows))].copy()
        if rng.random() < 0.3:
            row[int(rng.integers(p))] = np.nan
        fast = fast_tree_shap(model, row)
        ref = brute_force_shap(model, row)
        worst = max(worst, float(np.max(np.abs(fast.phi - ref.phi))), abs(fast.base_value - ref.base_value))
        full = model_value(model, row, range(p))
        worst_acc = max(worst_acc, abs(fast.phi.sum() + fast.base_value - full))
    ok = worst < 1e-9 and worst_acc < 1e-9
    return ok, f"{count} models, max |fast - brute| = {worst:.2e}, max local-accuracy gap = {worst_acc:.2e}"


def suite_prune(rng, count=50) -> Tuple[bool, str]:
    done = 0
    while done < count:
        task = CLASSIFICATION if done % 2 else REGRESSION
        data = random_instance(rng, int(rng.integers(8, 25)), int(rng.integers(1, 4)), task,
                               missing=0.1 * (done % 3 == 0))
        tree = grow_cart(data, task)
        if count_splits(tree) > 10 or count_splits(tree) == 0:
            continue
        msg = check_prune_sequence(tree, data)
        if msg:
            return False, f"tree {done}: {msg}"
        done += 1
    return True, f"{count} trees with <= 10 splits match exhaustive subtree enumeration"


def suite_split_gains(rng, count=30) -> Tuple[bool, str]:
    worst = 0.0
    for i in range(count):
        task = CLASSIFICATION if i % 2 else REGRESSION
        data = random_instance(rng, int(rng.integers(10, 40)), int(rng.integers(1, 5)), task,
                               missing=0.15 * (i % 3 == 0), levels=6 if i % 5 == 0 else None)
        X, y = data.matrix(), np.asarray(data.y)
        tree = grow_cart(data, task)
        for t, m in enumerate(node_rows(tree, X)):
            if tree.feature[t] >= 0:
                ref = brute_cart_gain(X[m], y[m], task)
                worst = max(worst, abs(tree.gain[t] - ref) / max(1.0, abs(ref)))
            elif m.sum() > 1:
                ref = brute_cart_gain(X[m], y[m], task)
                # an unsplit node must have no improving candidate
                if ref > 1e-9 * max(1.0, _sse(y) if task == REGRESSION else y.size):
                    return False, f"cart instance {i}: leaf {t} could still gain {ref}"
    cart_worst = worst
    worst = 0.0
    for i in range(count):
        task = CLASSIFICATION if i % 2 else REGRESSION
        data = random_instance(rng, int(rng.integers(10, 40)), int(rng.integers(1, 5)), task,
                               missing=0.15 * (i % 3 == 0))
        X, y = data.matrix(), np.asarray(data.y)
        lam = float(rng.choice([0.0, 1.0, 3.0]))
        gamma = float(rng.choice([0.0, 0.1]))
        mcw = 1.0 if task == REGRESSION else 0.5
        params = GBTParams(rounds=1, lam=lam, gamma=gamma, max_depth=3, min_child_weight=mcw)
        model = fit_gbt(data, task, params)
        tree = model.trees[0]
        base = model.base_score
        if task == CLASSIFICATION:
            q = 1.0 / (1.0 + np.exp(-base))
            g, h = q - y, np.full(y.size, q * (1 - q))
        else:
            g, h = base - y, np.ones(y.size)
        for t, m in enumerate(node_rows(tree, X)):
            if tree.feature[t] >= 0:
                ref = brute_gbt_gain(X[m], g[m], h[m], lam, gamma, mcw)
                worst = max(worst, abs(tree.gain[t] - ref) / max(1.0, abs(ref)))
    ok = cart_worst < 1e-9 and worst < 1e-9
    return ok, (f"{count} CART + {count} boosting instances, max relative gap "
                f"{cart_worst:.2e} / {worst:.2e}")


def suite_local_search(rng, count=30, restarts=20) -> Tuple[bool, str]:
    misses = []
    for i in range(count):
        task = CLASSIFICATION if i % 2 else REGRESSION
        depth = 1 + (i % 3 != 0)
        data = random_instance(rng, int(rng.integers(12, 40)), int(rng.integers(1, 4)), task,
                               missing=0.1 * (i % 4 == 0))
        cp = float(rng.choice([0.0, 0.01, 0.05]))
        res = local_search_detail(data, task, depth, cp, rng, restarts=restarts)
        ref = exhaustive_optimum(data.matrix(), np.asarray(data.y), task, depth, cp)
        if abs(res.objective - ref) > 1e-9 * max(1.0, ref):
            misses.append((i, depth, cp, res.objective, ref))
    if misses:
        return False, f"{len(misses)} of {count} instances missed the optimum: {misses[:3]}"
    return True, f"{count} instances of depth <= 2 reach the exhaustive optimum"


def _direct_mdi(tree: DecisionTree, X, y) -> np.ndarray:
    crit = _gini_n if tree.task == CLASSIFICATION else _sse
    raw = np.zeros(tree.p_total)
    masks = node_rows(tree, X)
    for t in tree.splits():
        d = crit(y[masks[t]]) - crit(y[masks[tree.left[t]]]) - crit(y[masks[tree.right[t]]])
        raw[tree.feature[t]] += max(d, 0.0)
    return raw / raw.sum() if raw.sum() > 0 else raw


def suite_mdi(rng, count=1000) -> Tuple[bool, str]:
    worst_tel = 0.0
    worst_share = 0.0
    for i in range(count):
        task = CLASSIFICATION if i % 2 else REGRESSION
        data = random_instance(rng, int(rng.integers(10, 60)), int(rng.integers(1, 7)), task,
                               missing=0.1 * (i % 3 == 0))
        tree = random_tree_on(rng, data, int(rng.integers(1, 5)))
        X, y = data.matrix(), np.asarray(data.y)
        cw = tree.cover * tree.impurity
        leaves = tree.leaves()
        tel = abs(split_decreases(tree).sum() - (cw[0] - cw[leaves].sum()))
        worst_tel = max(worst_tel, tel / max(1.0, cw[0]))
        shares = mdi_importance(tree)
        if shares.sum() > 0 and (abs(shares.sum() - 1.0) > 1e-12 or shares.min() < 0):
            return False, f"tree {i}: shares {shares} are not a distribution"
        worst_share = max(worst_share, float(np.max(np.abs(shares - _direct_mdi(tree, X, y)))))
    ok = worst_tel < 1e-9 and worst_share < 1e-9
    return ok, (f"{count} trees, max telescoping gap {worst_tel:.2e}, "
                f"max share gap vs direct recomputation {worst_share:.2e}")


SUITES = {
    "shap": (suite_shap, 1000),
    "prune": (suite_prune, 50),
    "split_gains": (suite_split_gains, 30),
    "local_search": (suite_local_search, 30),
    "mdi": (suite_mdi, 1000),
}


def run_all(scale: float = 1.0, seed: int = 0, names=None):
    """Yield ``(name, passed, detail)`` per suite."""
    for name, (fn, count) in SUITES.items():
        if names and name not in names:
            continue
        rng = np.random.default_rng([seed, len(name)])
        start = time.time()
        ok, detail = fn(rng, max(1, int(round(count * scale))))
        yield name, ok, f"{detail} ({time.time() - start:.1f}s)"
