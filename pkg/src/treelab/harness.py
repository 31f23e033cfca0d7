"""Experiment orchestration: repetition grids, method pipelines, metrics, CSV output.

Every repetition is an independent unit of work seeded from a stable hash of
``(master seed, experiment, n, rep)``, so results do not depend on how the
units are scheduled across worker processes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boosting import fit_gbt_validated, gain_importance
from .boosting import predict_labels as gbt_labels
from .cart import fit_cart_validated
from .data import Dataset, make_dataset, split_train_valid
from .optimal import OptSearchConfig, fit_oct_validated
from .shap import shap_importance
from .synthgen import (Exp1Config, experiment_config, gen_experiment1, gen_random_dataset,
                       gen_random_tree, label_with_tree, sample_features)
from .tree import mdi_importance, predict_labels

METHODS = ("cart", "oct", "gbt", "shap")
DEFAULT_N_GRID = (100, 200, 300, 400, 500, 1000, 5000)
DEFAULT_SIGMAS = (1.0, 2.0)
PRESETS = {"desk": {1: 50, 2: 25, 3: 25}, "paper": {1: 2000, 2: 100, 3: 100}}
MAX_FAILURE_RATE = 0.01

RESULTS_HEADER = ["experiment", "method", "n", "sigma", "rep", "feature", "importance_share",
                  "irrelevant_share", "holdout_accuracy"]
SUMMARY_HEADER = ["experiment", "method", "n", "sigma", "feature", "reps",
                  "mean_importance_share", "se_importance_share",
                  "mean_irrelevant_share", "se_irrelevant_share",
                  "mean_holdout_accuracy", "se_holdout_accuracy"]

# independent random streams inside one repetition
_STREAM_DATA, _STREAM_SPLIT, _STREAM_OCT, _STREAM_HOLDOUT = range(4)


class RunError(RuntimeError):
    """Too many repetitions failed for the aggregates to be trusted."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: int
    n_grid: Tuple[int, ...] = DEFAULT_N_GRID
    sigmas: Tuple[float, ...] = DEFAULT_SIGMAS
    reps: Optional[int] = None
    methods: Tuple[str, ...] = METHODS
    valid_fraction: float = 0.25
    holdout_n: int = 50000
    seed: int = 0
    out: Optional[str] = None
    workers: int = 1
    include_degenerate: bool = True
    oct_search: OptSearchConfig = OptSearchConfig()

    def __post_init__(self):
        if self.experiment not in (1, 2, 3):
            raise ValueError(f"unknown experiment {self.experiment}")
        if self.reps is None:
            object.__setattr__(self, "reps", PRESETS["paper"][self.experiment])
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not self.n_grid:
            raise ValueError("n grid must be nonempty")
        if not self.methods:
            raise ValueError("methods must be nonempty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if self.experiment == 1 and not self.sigmas:
            raise ValueError("experiment 1 needs at least one sigma")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def units(self) -> List[tuple]:
        sig = self.sigmas if self.experiment == 1 else (None,)
        return [(self.experiment, s, int(n), r) for s in sig for n in self.n_grid
                for r in range(self.reps)]


@dataclass
class Record:
    experiment: int
    method: str
    n: int
    sigma: Optional[float]
    rep: int
    shares: Optional[np.ndarray]
    irrelevant_share: Optional[float]
    holdout_accuracy: Optional[float] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def degenerate(self) -> bool:
        return self.shares is not None and not np.any(self.shares > 0)

    def sort_key(self):
        return (self.experiment, METHODS.index(self.method),
                -1.0 if self.sigma is None else self.sigma, self.n, self.rep)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: List[Record] = field(default_factory=list)

    def ok(self) -> List[Record]:
        return [r for r in self.records if not r.failed]

    def failures(self) -> List[Record]:
        return [r for r in self.records if r.failed]


def rep_seed(master: int, experiment: int, n: int, rep: int) -> int:
    """Stable 63-bit seed for one repetition."""
    key = f"{int(master)}|{int(experiment)}|{int(n)}|{int(rep)}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def irrelevant_share(imp, relevant) -> float:
    """Total share on features outside ``relevant`` (0-based indices)."""
    imp = np.asarray(imp, dtype=np.float64)
    mask = np.ones(imp.size, dtype=bool)
    mask[list(relevant)] = False
    return float(min(max(imp[mask].sum(), 0.0), 1.0))


def holdout_accuracy(model, test: Dataset) -> float:
    """Fraction of correctly predicted labels."""
    X = test.matrix()
    if hasattr(model, "trees"):
        pred = gbt_labels(model, X)
    else:
        pred = predict_labels(model, X)
    return float(np.mean(pred == np.asarray(test.y)))


def _stream(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, k])


def run_unit(cfg: ExperimentConfig, unit: tuple) -> List[Record]:
    """All requested methods on one generated dataset."""
    experiment, sigma, n, rep = unit
    seed = rep_seed(cfg.seed, experiment, n, rep)

    def fail(method, exc):
        return Record(experiment, method, n, sigma, rep, None, None, None,
                      f"{type(exc).__name__}: {exc}")

    try:
        rng = _stream(seed, _STREAM_DATA)
        if experiment == 1:
            data, truth, _ = gen_experiment1(Exp1Config(n, sigma), rng)
        else:
            tcfg = experiment_config(experiment)
            truth = gen_random_tree(tcfg, rng)
            data = gen_random_dataset(truth, n, tcfg, rng)
        train, valid = split_train_valid(data, cfg.valid_fraction, _stream(seed, _STREAM_SPLIT))
        test = None
        if experiment != 1:
            cols = sample_features(cfg.holdout_n, tcfg, _stream(seed, _STREAM_HOLDOUT))
            test = make_dataset(cols, label_with_tree(truth, cols))
    except Exception as exc:  # generation failure takes every method down
        return [fail(m, exc) for m in cfg.methods]

    relevant = truth.relevant_features
    out = []
    gbt_model = None
    gbt_exc = None
    for method in cfg.methods:
        try:
            if method == "cart":
                model = fit_cart_validated(train, valid)
                shares = mdi_importance(model)
            elif method == "oct":
                model = fit_oct_validated(train, valid, cfg=cfg.oct_search,
                                          rng=_stream(seed, _STREAM_OCT))
                shares = mdi_importance(model)
            else:
                # shap explains the same boosted model rather than refitting
                if gbt_model is None and gbt_exc is None:
                    try:
                        gbt_model = fit_gbt_validated(train, valid)
                    except Exception as exc:
                        gbt_exc = exc
                if gbt_exc is not None:
                    raise gbt_exc
                model = gbt_model
                shares = gain_importance(model) if method == "gbt" else shap_importance(model, train)
            acc = holdout_accuracy(model, test) if test is not None else None
            out.append(Record(experiment, method, n, sigma, rep, shares,
                              irrelevant_share(shares, relevant), acc))
        except Exception as exc:
            out.append(fail(method, exc))
    return out


def _run_chunk(args):
    cfg, units = args
    return [rec for u in units for rec in run_unit(cfg, u)]


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentResult:
    """Run every (sigma, n, rep) unit, possibly across worker processes.

    Raises ``RunError`` when more than 1% of method fits fail; the failed
    records are still attached to the exception as ``exc.result``.
    """
    units = cfg.units()
    records: List[Record] = []
    if cfg.workers == 1:
        for i, u in enumerate(units):
            records.extend(run_unit(cfg, u))
            if progress:
                progress(i + 1, len(units))
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            done = 0
            for recs in pool.map(_run_chunk, [(cfg, [u]) for u in units]):
                records.extend(recs)
                done += 1
                if progress:
                    progress(done, len(units))
    records.sort(key=Record.sort_key)
    result = ExperimentResult(cfg, records)
    n_fail = len(result.failures())
    if n_fail > MAX_FAILURE_RATE * len(records):
        exc = RunError(f"{n_fail} of {len(records)} method fits failed")
        exc.result = result
        raise exc
    return result


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    # adding 0.0 turns -0.0 into 0.0
    return f"{float(v) + 0.0:.6f}"


def _fmt_sigma(s) -> str:
    return "" if s is None else f"{float(s):g}"


def results_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULTS_HEADER)
    for r in result.records:
        if r.failed:
            continue
        for j, s in enumerate(r.shares):
            w.writerow([r.experiment, r.method, r.n, _fmt_sigma(r.sigma), r.rep, f"x{j + 1}",
                        _fmt(s), _fmt(r.irrelevant_share), _fmt(r.holdout_accuracy)])
    return buf.getvalue()


def failures_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "method", "n", "sigma", "rep", "error"])
    for r in result.failures():
        w.writerow([r.experiment, r.method, r.n, _fmt_sigma(r.sigma), r.rep, r.error])
    return buf.getvalue()


def _mean_se(values) -> Tuple[Optional[float], Optional[float]]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    a = np.asarray(vals, dtype=np.float64)
    if a.size < 2:
        return float(a.mean()), None
    return float(a.mean()), float(a.std(ddof=1) / np.sqrt(a.size))


@dataclass(frozen=True)
class SummaryRow:
    experiment: int
    method: str
    n: int
    sigma: Optional[float]
    feature: str
    reps: int
    mean_share: float
    se_share: Optional[float]
    mean_irrelevant: Optional[float]
    se_irrelevant: Optional[float]
    mean_accuracy: Optional[float]
    se_accuracy: Optional[float]


def aggregate(records: Sequence[Record], include_degenerate: bool = True) -> List[SummaryRow]:
    """Per (method, sigma, n, feature) means and standard errors over repetitions."""
    groups: Dict[tuple, List[Record]] = {}
    for r in sorted(records, key=Record.sort_key):
        if r.failed or (r.degenerate and not include_degenerate):
            continue
        groups.setdefault(r.sort_key()[:4], []).append(r)
    if not groups:
        raise ValueError("nothing to aggregate")
    rows = []
    for key, recs in groups.items():
        first = recs[0]
        mi, si = _mean_se([r.irrelevant_share for r in recs])
        ma, sa = _mean_se([r.holdout_accuracy for r in recs])
        S = np.vstack([r.shares for r in recs])
        for j in range(S.shape[1]):
            m, s = _mean_se(S[:, j])
            rows.append(SummaryRow(first.experiment, first.method, first.n, first.sigma,
                                   f"x{j + 1}", len(recs), m, s, mi, si, ma, sa))
    return rows


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for r in rows:
        w.writerow([r.experiment, r.method, r.n, _fmt_sigma(r.sigma), r.feature, r.reps,
                    _fmt(r.mean_share), _fmt(r.se_share), _fmt(r.mean_irrelevant),
                    _fmt(r.se_irrelevant), _fmt(r.mean_accuracy), _fmt(r.se_accuracy)])
    return buf.getvalue()


def _opt_float(s: str) -> Optional[float]:
    return None if s == "" else float(s)


def read_results(path) -> List[Record]:
    """Rebuild records from a results CSV (failed records are not in it)."""
    recs: Dict[tuple, Record] = {}
    shares: Dict[tuple, list] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULTS_HEADER:
            raise ValueError(f"{path}: not a results CSV (header {reader.fieldnames})")
        for row in reader:
            key = (int(row["experiment"]), row["method"], int(row["n"]),
                   _opt_float(row["sigma"]), int(row["rep"]))
            if key not in recs:
                recs[key] = Record(key[0], key[1], key[2], key[3], key[4], None,
                                   _opt_float(row["irrelevant_share"]),
                                   _opt_float(row["holdout_accuracy"]))
                shares[key] = []
            shares[key].append(float(row["importance_share"]))
    for key, rec in recs.items():
        rec.shares = np.array(shares[key])
    return sorted(recs.values(), key=Record.sort_key)


def read_summary(path) -> List[SummaryRow]:
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_HEADER:
            raise ValueError(f"{path}: not a summary CSV (header {reader.fieldnames})")
        for row in reader:
            rows.append(SummaryRow(int(row["experiment"]), row["method"], int(row["n"]),
                                   _opt_float(row["sigma"]), row["feature"], int(row["reps"]),
                                   float(row["mean_importance_share"]),
                                   _opt_float(row["se_importance_share"]),
                                   _opt_float(row["mean_irrelevant_share"]),
                                   _opt_float(row["se_irrelevant_share"]),
                                   _opt_float(row["mean_holdout_accuracy"]),
                                   _opt_float(row["se_holdout_accuracy"])))
    return rows


def write_outputs(result: ExperimentResult, out_dir) -> Dict[str, Path]:
    """Write ``expN_results.csv``, ``expN_summary.csv`` and, if any, ``expN_failures.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    e = result.config.experiment
    paths = {"results": out / f"exp{e}_results.csv", "summary": out / f"exp{e}_summary.csv"}
    paths["results"].write_bytes(results_csv(result).encode("utf-8"))
    ok = result.ok()
    if ok:
        rows = aggregate(ok, result.config.include_degenerate)
        paths["summary"].write_bytes(summary_csv(rows).encode("utf-8"))
    if result.failures():
        paths["failures"] = out / f"exp{e}_failures.csv"
        paths["failures"].write_bytes(failures_csv(result).encode("utf-8"))
    return paths
