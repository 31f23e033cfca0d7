"""Command-line front end: ``treelab exp1|exp2|exp3|plot|selftest``."""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

from . import harness
from .svg import PlotSpec, render_line_chart

EXIT_OK, EXIT_USAGE, EXIT_RUN = 0, 1, 2
WORKERS_ENV = "TREELAB_WORKERS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse would exit with status 2; usage problems are status 1 here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text: str) -> tuple:
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _float_list(text: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _methods(text: str) -> tuple:
    vals = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [v for v in vals if v not in harness.METHODS]
    if bad or not vals:
        raise argparse.ArgumentTypeError(
            f"methods must be a comma-separated subset of {','.join(harness.METHODS)}")
    return vals


_CONVERT = {"n_grid": _int_list, "sigma": _float_list, "reps": int, "methods": _methods,
            "seed": int, "out": str, "preset": str, "workers": int}


def read_config(path) -> Dict[str, object]:
    """``key = value`` lines mirroring the flags; ``#`` starts a comment."""
    conf = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        value = value.strip("'\"")
        if key not in _CONVERT:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            conf[key] = _CONVERT[key](value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{path}:{lineno}: {exc}")
    return conf


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="treelab", description="Tree-importance benchmark experiments.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for e in (1, 2, 3):
        s = sub.add_parser(f"exp{e}", help=f"run experiment {e}")
        s.add_argument("--n-grid", type=_int_list, help="comma-separated sample sizes")
        if e == 1:
            s.add_argument("--sigma", type=_float_list, help="comma-separated noise levels")
        s.add_argument("--reps", type=int)
        s.add_argument("--methods", type=_methods, help="subset of cart,oct,gbt,shap")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--preset", choices=sorted(harness.PRESETS))
        s.add_argument("--workers", type=int, help=f"worker processes (fallback: ${WORKERS_ENV})")
        s.add_argument("--config", help="key = value file mirroring these flags")
        s.add_argument("--quiet", action="store_true")
        s.set_defaults(experiment=e)
    pl = sub.add_parser("plot", help="render SVG charts from a summary CSV")
    pl.add_argument("--in", dest="inp", required=True)
    pl.add_argument("--out", required=True)
    st = sub.add_parser("selftest", help="run the oracle suites")
    st.add_argument("--scale", type=float, default=1.0, help="multiplier on instance counts")
    st.add_argument("--seed", type=int, default=0)
    return p


def _resolve(args) -> harness.ExperimentConfig:
    conf = read_config(args.config) if args.config else {}

    def pick(name, default=None):
        v = getattr(args, name, None)
        if v is not None:
            return v
        return conf.get(name, default)

    preset = pick("preset")
    reps = pick("reps")
    if reps is None and preset is not None:
        reps = harness.PRESETS[preset][args.experiment]
    workers = pick("workers")
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        try:
            workers = int(env) if env else 1
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {env!r}")
    kw = dict(experiment=args.experiment, n_grid=pick("n_grid", harness.DEFAULT_N_GRID),
              reps=reps, methods=pick("methods", harness.METHODS), seed=pick("seed", 0),
              out=pick("out", "results"), workers=workers)
    if args.experiment == 1:
        kw["sigmas"] = pick("sigma", harness.DEFAULT_SIGMAS)
    try:
        return harness.ExperimentConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc))


def _progress(quiet: bool):
    if quiet:
        return None
    start = time.time()

    def show(done, total):
        print(f"\r{done}/{total} units, {time.time() - start:.0f}s", end="", file=sys.stderr,
              flush=True)
        if done == total:
            print(file=sys.stderr)
    return show


def run_experiment_cmd(args) -> int:
    cfg = _resolve(args)
    try:
        result = harness.run_experiment(cfg, _progress(args.quiet))
    except harness.RunError as exc:
        paths = harness.write_outputs(exc.result, cfg.out)
        print(f"run failed: {exc}; see {paths.get('failures')}", file=sys.stderr)
        return EXIT_RUN
    paths = harness.write_outputs(result, cfg.out)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def _series_tables(rows: List[harness.SummaryRow]):
    """Chart groups: one per sigma for experiment 1, otherwise one per experiment."""
    charts = []
    exps = sorted({r.experiment for r in rows})
    for e in exps:
        sub = [r for r in rows if r.experiment == e]
        methods = [m for m in harness.METHODS if any(r.method == m for r in sub)]
        ns = tuple(sorted({float(r.n) for r in sub}))
        if e == 1:
            for s in sorted({r.sigma for r in sub}, key=lambda v: -1.0 if v is None else v):
                part = [r for r in sub if r.sigma == s]
                table = {}
                for r in part:
                    table.setdefault((r.method, r.feature), {})[float(r.n)] = r.mean_share
                feats = sorted({r.feature for r in part}, key=lambda f: int(f[1:]))
                keys = tuple((m, f) for m in methods for f in feats)
                spec = PlotSpec(ns, keys, title=f"Experiment 1, sigma = {s:g}: importance by feature",
                                y_label="mean importance share")
                charts.append((f"exp1_sigma{s:g}_importance.svg", spec, table))
        else:
            imp, acc = {}, {}
            for r in sub:
                imp.setdefault((r.method,), {})[float(r.n)] = r.mean_irrelevant
                if r.method != "shap":
                    acc.setdefault((r.method,), {})[float(r.n)] = r.mean_accuracy
            keys = tuple((m,) for m in methods)
            charts.append((f"exp{e}_irrelevant_share.svg",
                           PlotSpec(ns, keys, title=f"Experiment {e}: importance on unused features",
                                    y_label="mean irrelevant share"), imp))
            akeys = tuple(k for k in keys if k in acc)
            if akeys:
                lo = min(v for k in akeys for v in acc[k].values() if v is not None)
                y0 = max(0.0, min(0.9, float(int(lo * 20)) / 20))
                charts.append((f"exp{e}_accuracy.svg",
                               PlotSpec(ns, akeys, y_range=(y0, 1.0),
                                        title=f"Experiment {e}: holdout accuracy",
                                        y_label="mean accuracy"), acc))
    return charts


def plot_cmd(args) -> int:
    try:
        rows = harness.read_summary(args.inp)
    except (OSError, ValueError) as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return EXIT_RUN
    if not rows:
        print("plot: summary is empty", file=sys.stderr)
        return EXIT_RUN
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, spec, table in _series_tables(rows):
        (out / name).write_bytes(render_line_chart(spec, table).encode("utf-8"))
        print(out / name)
    return EXIT_OK


def selftest_cmd(args) -> int:
    from .oracles import run_all
    ok = True
    for name, passed, detail in run_all(scale=args.scale, seed=args.seed):
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok = ok and passed
    return EXIT_OK if ok else EXIT_RUN


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "plot":
            return plot_cmd(args)
        if args.command == "selftest":
            return selftest_cmd(args)
        return run_experiment_cmd(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
