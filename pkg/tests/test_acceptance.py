"""Acceptance criteria 1-7 at desk scale.

The long experiment runs are cached by ``acceptance_runs.py``; the first
``pytest`` after a learner change recomputes them (hours on one core).
Every criterion prints one PASS/FAIL line in the terminal summary.
"""

import time

import numpy as np
import pytest

import acceptance_runs
from conftest import ACCEPTANCE_LINES
from treelab import harness
from treelab.oracles import run_all

FEATURES = [f"x{j}" for j in range(1, 8)]

CART_T1 = (0.0001, 0.0001, 0.0001, 0.1006, 0.1062, 0.7930)
ORT_T1 = (0.0001, 0.0001, 0.0001, 0.1005, 0.1061, 0.7932)
T3_ACC = {"oct": {500: 0.9826, 5000: 0.9984}, "cart": {500: 0.9675, 5000: 0.9966},
          "gbt": {500: 0.9795, 5000: 0.9981}}


def report(number, ok, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, detail


def summary(run):
    rows = harness.read_summary(acceptance_runs.ensure(run) / f"{run[:4]}_summary.csv")
    table = {}
    for r in rows:
        table[(r.method, r.n, r.sigma, r.feature)] = r
    return table


def shares(table, method, sigma, n=5000):
    return np.array([table[(method, n, sigma, f)].mean_share for f in FEATURES[:6]])


def per_n(table, method, attr):
    return {n: getattr(r, attr) for (m, n, s, f), r in table.items() if m == method and f == "x1"}


@pytest.fixture(scope="module")
def exp1():
    return summary("exp1")


@pytest.fixture(scope="module")
def exp2():
    return summary("exp2_w1")


@pytest.fixture(scope="module")
def exp3():
    return summary("exp3")


def fmt(v):
    return "(" + ", ".join(f"{x:.4f}" for x in v) + ")"


def test_criterion_1_low_noise_tree_importances(exp1):
    problems = []
    parts = []
    for method, target in (("cart", CART_T1), ("oct", ORT_T1)):
        s = shares(exp1, method, 1.0)
        parts.append(f"{method}={fmt(s)}")
        off = np.abs(s - np.array(target))
        if off.max() > 0.02:
            j = int(np.argmax(off))
            problems.append(f"{method} x{j + 1} off by {off[j]:.4f}")
        if s[:3].max() >= 0.005:
            problems.append(f"{method} x1-x3 max {s[:3].max():.4f} >= 0.005")
    elapsed = acceptance_runs.elapsed("exp1") / 60
    detail = "; ".join(parts + problems) + f"; exp1 run took {elapsed:.0f} min for both sigmas"
    report(1, not problems, detail)


def test_criterion_2_high_noise_tree_importances(exp1):
    problems = []
    parts = []
    for method in ("cart", "oct"):
        s = shares(exp1, method, 2.0)
        parts.append(f"{method}={fmt(s)}")
        if abs(s[5] - 0.79) > 0.03:
            problems.append(f"{method} x6 {s[5]:.4f} outside 0.79 +- 0.03")
        if s[:3].max() >= 0.01:
            problems.append(f"{method} x1-x3 max {s[:3].max():.4f} >= 0.01")
    report(2, not problems, "; ".join(parts + problems))


def test_criterion_3_boosting_and_shap_directions(exp1):
    s = {m: shares(exp1, m, 1.0) for m in harness.METHODS}
    problems = []
    for method, floor in (("gbt", 0.002), ("shap", 0.02)):
        for j in range(3):
            v = s[method][j]
            if not v > floor:
                problems.append(f"{method} x{j + 1} {v:.4f} <= {floor}")
            for single in ("cart", "oct"):
                if not v > s[single][j]:
                    problems.append(f"{method} x{j + 1} {v:.4f} <= {single} {s[single][j]:.4f}")
    for m, v in s.items():
        if int(np.argmax(v)) != 5:
            problems.append(f"{m} argmax is x{int(np.argmax(v)) + 1}")
    detail = f"gbt x1-x3={fmt(s['gbt'][:3])} shap x1-x3={fmt(s['shap'][:3])}"
    report(3, not problems, "; ".join([detail] + problems))


def test_criterion_4_no_bias_accuracy(exp2):
    problems = []
    parts = []
    for method, targets in T3_ACC.items():
        acc = per_n(exp2, method, "mean_accuracy")
        for n, want in targets.items():
            parts.append(f"{method}@{n}={acc[n]:.4f}")
            if abs(acc[n] - want) > 0.03:
                problems.append(f"{method} n={n} {acc[n]:.4f} vs {want} +- 0.03")
    ort, cart = per_n(exp2, "oct", "mean_accuracy"), per_n(exp2, "cart", "mean_accuracy")
    for n in sorted(ort):
        if not ort[n] >= cart[n]:
            problems.append(f"oct {ort[n]:.4f} < cart {cart[n]:.4f} at n={n}")
    report(4, not problems, " ".join(parts) + ("; " + "; ".join(problems) if problems else ""))


def test_criterion_5_irrelevant_share_ordering(exp2, exp3):
    problems = []
    parts = []
    for name, table in (("exp2", exp2), ("exp3", exp3)):
        irr = {m: per_n(table, m, "mean_irrelevant") for m in ("oct", "cart", "gbt")}
        for n in (100, 500, 1000):
            o, c, g = irr["oct"][n], irr["cart"][n], irr["gbt"][n]
            parts.append(f"{name}@{n} oct={o:.4f} cart={c:.4f} gbt={g:.4f}")
            if not o < c < g:
                problems.append(f"{name} n={n} ordering fails")
    c2, c3 = per_n(exp2, "cart", "mean_irrelevant")[100], per_n(exp3, "cart", "mean_irrelevant")[100]
    o2, o3 = per_n(exp2, "oct", "mean_irrelevant")[100], per_n(exp3, "oct", "mean_irrelevant")[100]
    if not c3 > c2:
        problems.append(f"cart n=100 exp3 {c3:.4f} <= exp2 {c2:.4f}")
    if not abs(o3 - o2) < 0.02:
        problems.append(f"oct n=100 moved {o3 - o2:+.4f}")
    parts.append(f"cart n=100 exp2->exp3 {c2:.4f}->{c3:.4f}, oct {o2:.4f}->{o3:.4f}")
    report(5, not problems, "; ".join(parts + problems))


def test_criterion_6_oracle_suites():
    start = time.time()
    outcome = list(run_all(scale=1.0, seed=0))
    elapsed = time.time() - start
    failed = [f"{name}: {detail}" for name, ok, detail in outcome if not ok]
    ok = not failed and elapsed < 300
    detail = f"{len(outcome) - len(failed)}/{len(outcome)} suites passed in {elapsed:.0f}s"
    report(6, ok, "; ".join([detail] + failed))


def test_criterion_7_worker_count_determinism():
    a = (acceptance_runs.ensure("exp2_w1") / "exp2_results.csv").read_bytes()
    b = (acceptance_runs.ensure("exp2_w8") / "exp2_results.csv").read_bytes()
    report(7, a == b, f"1-worker and 8-worker results CSVs: {len(a)} bytes each, "
                      f"{'identical' if a == b else 'different'}")
