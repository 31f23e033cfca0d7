"""Second-order gradient boosting of regression trees."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import _kernels as K
from .data import CLASSIFICATION, MISSING, REGRESSION, Dataset
from .tree import DecisionTree, normalize_shares


@dataclass(frozen=True)
class GBTParams:
    rounds: int = 100
    eta: float = 0.3
    lam: float = 1.0
    gamma: float = 0.0
    max_depth: int = 6
    min_child_weight: float = 1.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.lam < 0.0:
            raise ValueError("lambda must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


@dataclass(frozen=True)
class BoostedEnsemble:
    trees: tuple
    base_score: float
    eta: float
    lam: float
    task: str
    p_total: int
    params: Optional[GBTParams] = None

    def margin_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += self.eta * tree.predict_matrix(X)
        return out

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        """Regression predictions, or class-1 probabilities."""
        m = self.margin_matrix(X)
        if self.task == CLASSIFICATION:
            return sigmoid(m)
        return m

    def to_dict(self) -> dict:
        return {"task": self.task, "p_total": self.p_total, "base_score": self.base_score,
                "eta": self.eta, "lambda": self.lam,
                "params": asdict(self.params) if self.params else None,
                "trees": [t.to_dict() for t in self.trees]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "BoostedEnsemble":
        params = GBTParams(**doc["params"]) if doc.get("params") else None
        return cls(tuple(DecisionTree.from_dict(t) for t in doc["trees"]), float(doc["base_score"]),
                   float(doc["eta"]), float(doc["lambda"]), doc["task"], int(doc["p_total"]), params)

    @classmethod
    def from_json(cls, text: str) -> "BoostedEnsemble":
        return cls.from_dict(json.loads(text))


def sigmoid(m):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(m, dtype=np.float64)))


def _fit_round(X, g, h, params: GBTParams, task: str, p: int, gorder):
    S = g.reshape(-1, 1)
    feat, thr, ml, left, right, start, end, delta, perm = K.grow(
        X, S, h, params.lam, 1, params.min_child_weight, params.max_depth, 2.0 * params.gamma, gorder)
    G = K.segment_sums(perm, start, end, g)
    H = K.segment_sums(perm, start, end, h)
    weight = -G / (H + params.lam)
    cover = (end - start).astype(np.float64)
    gain = np.where(feat >= 0, 0.5 * delta - params.gamma, 0.0)
    tree = DecisionTree(feat, thr, ml, left, right, weight, cover, np.zeros(feat.size), gain,
                        REGRESSION, p)
    # training rows' leaf values, read off the row permutation
    leaf_out = np.empty(X.shape[0])
    for t in np.flatnonzero(feat < 0):
        leaf_out[perm[start[t]:end[t]]] = weight[t]
    return tree, leaf_out


def fit_gbt(train: Dataset, task: Optional[str] = None, params: GBTParams = GBTParams(),
            history: Optional[list] = None) -> BoostedEnsemble:
    """Boost ``params.rounds`` trees on squared (regression) or logistic loss.

    If ``history`` is a list, the training objective after each round is
    appended to it.
    """
    task = task or train.task
    X = train.matrix()
    y = np.asarray(train.y, dtype=np.float64)
    n = train.n_rows
    if task == CLASSIFICATION:
        p1 = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        base = float(np.log(p1 / (1 - p1)))
    else:
        base = float(y.mean())
    margin = np.full(n, base)
    gorder = K.presort(X)
    trees = []
    for _ in range(params.rounds):
        if task == CLASSIFICATION:
            prob = sigmoid(margin)
            g = prob - y
            h = prob * (1.0 - prob)
        else:
            g = margin - y
            h = np.ones(n)
        tree, out = _fit_round(X, g, h, params, task, train.p, gorder)
        trees.append(tree)
        margin = margin + params.eta * out
        if history is not None:
            history.append(training_loss(margin, y, task))
    return BoostedEnsemble(tuple(trees), base, params.eta, params.lam, task, train.p, params)


def training_loss(margin, y, task) -> float:
    if task == CLASSIFICATION:
        # mean log-loss on margins, computed stably
        return float(np.mean(np.logaddexp(0.0, margin) - y * margin))
    return float(np.mean((margin - y) ** 2))


def validation_loss(ens: BoostedEnsemble, data: Dataset) -> float:
    return training_loss(ens.margin_matrix(data.matrix()), np.asarray(data.y, dtype=np.float64),
                         ens.task)


@dataclass(frozen=True)
class GBTFit:
    model: BoostedEnsemble
    depth: int
    losses: tuple


def gbt_validation_path(train: Dataset, valid: Dataset, task: Optional[str] = None,
                        depths=range(1, 11), params: GBTParams = GBTParams()) -> GBTFit:
    task = task or train.task
    if train.p != valid.p or train.task != valid.task:
        raise ValueError("train and valid schemas differ")
    best = None
    losses = []
    for d in depths:
        model = fit_gbt(train, task, replace(params, max_depth=d))
        loss = validation_loss(model, valid)
        losses.append(loss)
        # strict improvement needed, so ties keep the smaller depth
        if best is None or loss < best[0]:
            best = (loss, d, model)
    return GBTFit(best[2], best[1], tuple(losses))


def fit_gbt_validated(train: Dataset, valid: Dataset, task: Optional[str] = None) -> BoostedEnsemble:
    return gbt_validation_path(train, valid, task).model


def gain_importance(ens: BoostedEnsemble) -> np.ndarray:
    raw = np.zeros(ens.p_total)
    for tree in ens.trees:
        s = tree.splits()
        np.add.at(raw, tree.feature[s], tree.gain[s])
    return normalize_shares(raw)


def predict_margin(ens: BoostedEnsemble, row) -> float:
    x = np.array([np.nan if v is MISSING else float(v) for v in row], dtype=np.float64)
    return float(ens.margin_matrix(x[None, :])[0])


def predict(ens: BoostedEnsemble, row) -> float:
    m = predict_margin(ens, row)
    if ens.task == CLASSIFICATION:
        return float(sigmoid(m) > 0.5)
    return m


def predict_labels(ens: BoostedEnsemble, X: np.ndarray) -> np.ndarray:
    return (ens.predict_matrix(X) > 0.5).astype(np.float64)
