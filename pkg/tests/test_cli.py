import os
from pathlib import Path

import pytest

from treelab import cli, harness


def test_unknown_flag_is_usage_error(capsys):
    assert cli.main(["exp1", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_bad_values_are_usage_errors():
    assert cli.main(["exp2", "--methods", "cart,rf"]) == 1
    assert cli.main(["exp2", "--n-grid", "a,b"]) == 1
    assert cli.main(["exp2", "--reps", "0"]) == 1
    assert cli.main(["exp2", "--sigma", "1"]) == 1
    assert cli.main([]) == 1
    assert cli.main(["--help"]) == 0


def _resolve(argv, env=None, monkeypatch=None):
    if monkeypatch is not None:
        monkeypatch.delenv(cli.WORKERS_ENV, raising=False)
        for k, v in (env or {}).items():
            monkeypatch.setenv(k, v)
    return cli._resolve(cli.build_parser().parse_args(argv))


def test_full_table3_grid(monkeypatch):
    cfg = _resolve(["exp2", "--reps", "100", "--n-grid", "100,200,300,400,500,1000,5000"],
                   monkeypatch=monkeypatch)
    assert cfg.experiment == 2 and cfg.reps == 100
    assert cfg.n_grid == (100, 200, 300, 400, 500, 1000, 5000)
    assert cfg.methods == harness.METHODS


def test_presets(monkeypatch):
    assert _resolve(["exp1", "--preset", "desk"], monkeypatch=monkeypatch).reps == 50
    assert _resolve(["exp3", "--preset", "desk"], monkeypatch=monkeypatch).reps == 25
    assert _resolve(["exp1", "--preset", "paper"], monkeypatch=monkeypatch).reps == 2000
    assert _resolve(["exp2"], monkeypatch=monkeypatch).reps == 100
    # an explicit reps flag beats the preset
    assert _resolve(["exp2", "--preset", "desk", "--reps", "3"], monkeypatch=monkeypatch).reps == 3


def test_precedence_flag_config_env(tmp_path, monkeypatch):
    conf = tmp_path / "run.conf"
    conf.write_text("# desk run\nworkers = 3\nseed = 11\nn-grid = 100,200\nout = 'from_conf'\n")
    cfg = _resolve(["exp2", "--config", str(conf)], {cli.WORKERS_ENV: "5"}, monkeypatch)
    assert (cfg.workers, cfg.seed, cfg.n_grid, cfg.out) == (3, 11, (100, 200), "from_conf")
    cfg = _resolve(["exp2", "--config", str(conf), "--workers", "2", "--seed", "4"],
                   {cli.WORKERS_ENV: "5"}, monkeypatch)
    assert (cfg.workers, cfg.seed) == (2, 4)
    cfg = _resolve(["exp2"], {cli.WORKERS_ENV: "5"}, monkeypatch)
    assert cfg.workers == 5
    assert _resolve(["exp2"], monkeypatch=monkeypatch).workers == 1


def test_bad_config_and_env(tmp_path, monkeypatch):
    conf = tmp_path / "bad.conf"
    conf.write_text("colour = blue\n")
    assert cli.main(["exp2", "--config", str(conf)]) == 1
    monkeypatch.setenv(cli.WORKERS_ENV, "many")
    assert cli.main(["exp2", "--reps", "1"]) == 1


def test_exp1_desk_writes_csvs_and_plots(tmp_path, capsys):
    out = tmp_path / "r"
    code = cli.main(["exp1", "--preset", "desk", "--seed", "42", "--out", str(out) + "/",
                     "--n-grid", "100,200", "--methods", "cart,gbt,shap", "--quiet"])
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == ["exp1_results.csv", "exp1_summary.csv"]
    rows = harness.read_summary(out / "exp1_summary.csv")
    assert {r.reps for r in rows} == {50}
    figs = tmp_path / "figs"
    assert cli.main(["plot", "--in", str(out / "exp1_summary.csv"), "--out", str(figs)]) == 0
    names = sorted(p.name for p in figs.iterdir())
    assert names == ["exp1_sigma1_importance.svg", "exp1_sigma2_importance.svg"]
    svg = (figs / names[0]).read_text()
    # one line per (method, feature)
    assert svg.count("<polyline") == 3 * 6
    # nothing escaped the two output directories
    assert sorted(p.name for p in tmp_path.iterdir()) == ["figs", "r"]


def test_exp2_round_trip_plot(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "r2"
    assert cli.main(["exp2", "--reps", "2", "--n-grid", "100,200", "--methods", "cart,gbt,shap",
                     "--seed", "1", "--out", str(out), "--quiet"]) == 0
    assert cli.main(["plot", "--in", str(out / "exp2_summary.csv"), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["exp2_accuracy.svg", "exp2_irrelevant_share.svg", "exp2_results.csv",
                     "exp2_summary.csv"]
    acc = (out / "exp2_accuracy.svg").read_text()
    # shap has no accuracy of its own
    assert acc.count("<polyline") == 2
    assert sorted(p.name for p in tmp_path.iterdir()) == ["r2"]


def test_plot_errors(tmp_path):
    assert cli.main(["plot", "--in", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert cli.main(["plot", "--in", str(bad), "--out", str(tmp_path)]) == 2


def test_run_failure_exit_code(tmp_path, monkeypatch):
    def broken(*a, **k):
        raise RuntimeError("nope")
    monkeypatch.setattr(harness, "fit_cart_validated", broken)
    out = tmp_path / "f"
    assert cli.main(["exp1", "--reps", "1", "--n-grid", "100", "--sigma", "1",
                     "--methods", "cart", "--out", str(out), "--quiet"]) == 2
    assert (out / "exp1_failures.csv").exists()


def test_selftest_small_scale(capsys):
    assert cli.main(["selftest", "--scale", "0.05", "--seed", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 5 and all(line.startswith("PASS") for line in lines)
