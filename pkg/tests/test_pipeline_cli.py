import csv
import json
import math

import numpy as np
import pytest

from fxfusion import net
from fxfusion.cli import _int_list, main
from fxfusion.pipeline import Pipeline, PipelineError, RunConfig, Split
from helpers import small_workspace


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    return small_workspace(tmp_path_factory.mktemp("ws"))


@pytest.fixture(scope="module")
def pipe(workspace):
    return Pipeline(RunConfig.from_dict(json.loads(workspace.read_text()), base=workspace.parent))


def run(*argv):
    return main([str(a) for a in argv])


def only(directory, pattern):
    found = sorted(directory.glob(pattern))
    assert len(found) == 1, found
    return found[0]


# configuration

def test_config_rejects_unknown_keys():
    with pytest.raises(PipelineError):
        RunConfig.from_dict({"bogus": 1})


def test_config_validation(tmp_path):
    with pytest.raises(PipelineError, match="no series"):
        RunConfig().validate()
    cfg = RunConfig(series={"target": str(tmp_path / "missing.csv")})
    with pytest.raises(PipelineError, match="missing input"):
        cfg.validate()
    cfg = RunConfig(series={"x": str(tmp_path)})
    with pytest.raises(PipelineError, match="target"):
        cfg.validate()


def test_digest_ignores_locations():
    a = RunConfig(series={"target": "/a/t.csv"}, texts="/a/x.json")
    b = RunConfig(series={"target": "/b/t.csv"}, texts="/b/x.json")
    assert a.digest() == b.digest()
    b.seed = 1
    assert a.digest() != b.digest()
    b.seed, b.model["epochs"] = 0, 1
    assert a.digest() != b.digest() and a.digest(["model"]) == b.digest(["model"])


def test_section_merge_keeps_defaults():
    cfg = RunConfig.from_dict({"model": {"epochs": 3}})
    assert cfg.model["epochs"] == 3 and cfg.model["hidden"] == 32


def test_int_list():
    assert _int_list("1,2,5-7") == [1, 2, 5, 6, 7]


# split

def _samples(n):
    return [net.WindowSample(np.zeros((1, 1)), float(i), i) for i in range(n)]


def test_split_partition_chronological():
    train, val, test = Split(100, 10, 0.2).partition(_samples(50))
    assert [len(train), len(val), len(test)] == [32, 8, 10]
    days = [s.day for s in train + val + test]
    assert days == sorted(days) == list(range(50))


def test_split_without_validation():
    train, val, test = Split(100, 10, 0.0).partition(_samples(30))
    assert len(train) == 20 and val == []


def test_split_too_large():
    with pytest.raises(PipelineError):
        Split(100, 30, 0.2).partition(_samples(30))


def test_fit_days():
    assert Split(200, 40, 0.2).fit_days == slice(0, 160)


# pipeline stages

def test_raw_target_never_an_input(pipe):
    assert pipe.config.target not in pipe.quantitative
    assert pipe.config.target not in pipe.inputs()
    assert pipe.own in pipe.quantitative


def test_own_copy_lagged_by_at_least_one(pipe):
    lag = pipe.lag_table.lags[pipe.own]
    assert lag >= 1
    np.testing.assert_array_equal(pipe.lagged.row(pipe.own)[lag:], pipe.lagged.row(pipe.config.target)[:-lag])


def test_every_row_has_a_lag(pipe):
    assert set(pipe.lag_table.lags) == set(pipe.combined.features) - {pipe.config.target}


def test_normalisation_uses_training_days_only(pipe):
    fit = pipe.split.fit_days
    for name in pipe.normalized.features:
        z = pipe.normalized.row(name)[fit]
        raw = pipe.lagged.row(name)[fit]
        if np.ptp(raw) > 0:
            assert z.min() == 0.0 and z.max() == 1.0
    lo, hi = pipe.target_bounds
    raw = pipe.lagged.row(pipe.config.target)
    assert lo == raw[fit].min() and hi == raw[fit].max()


def test_lags_do_not_see_test_days(workspace):
    doc = json.loads(workspace.read_text())
    base = Pipeline(RunConfig.from_dict(doc, base=workspace.parent))
    tampered = workspace.parent / "tampered.csv"
    lines = (workspace.parent / doc["series"]["target"]).read_text().splitlines()
    head, tail = lines[:-20], lines[-20:]
    tail = [f"{ln.split(',')[0]},{float(ln.split(',')[1]) * 1.5!r}" for ln in tail]
    tampered.write_text("\n".join(head + tail) + "\n")
    doc["series"]["target"] = "tampered.csv"
    other = Pipeline(RunConfig.from_dict(doc, base=workspace.parent))
    assert other.lag_table.lags == base.lag_table.lags
    assert other.target_bounds == base.target_bounds
    assert other.ranking.kept == base.ranking.kept


def test_rfe_keeps_requested_count(pipe):
    assert len(pipe.ranking.kept) == 6
    assert set(pipe.ranking.kept) <= set(pipe.quantitative)
    assert len(pipe.full_ranking.top(3)) == 3


def test_text_inputs_by_family(pipe):
    assert pipe.text_inputs([]) == []
    all_text = pipe.text_inputs()
    assert all_text and set(all_text) == set(pipe.textual_names)
    assert set(pipe.text_inputs(["A"])) < set(all_text)


def test_fit_and_baselines_share_test_days(pipe):
    model = pipe.config.model_config(epochs=2)
    fitted = pipe.fit(pipe.inputs(), model)
    rep = fitted.report
    assert len(rep.days) == 40 and math.isfinite(rep.mae) and rep.mae <= rep.rmse
    pers = pipe.persistence(model.window)
    forest = pipe.forest_baseline(pipe.inputs(), model.window, 5)
    assert pers.days == rep.days == forest.days
    np.testing.assert_array_equal(pers.actuals, rep.actuals)
    assert rep.days[-1] == pipe.lagged.calendar.days[-1].isoformat()


# command line

def test_simgen_train_evaluate(tmp_path):
    cfg = small_workspace(tmp_path, seed=1)
    assert run("train", "--config", cfg, "--out", tmp_path) == 0
    assert run("evaluate", "--config", cfg, "--out", tmp_path) == 0
    doc = json.loads(only(tmp_path, "evaluation_s1_*.json").read_text())
    for label in ("bilstm", "persistence", "random_forest"):
        assert math.isfinite(doc[label]["mae"]) and doc[label]["mae"] <= doc[label]["rmse"]
    assert doc["bilstm"]["pi"]["reference"] == "persistence"
    assert sorted(doc["order_by_mae"]) == ["bilstm", "persistence", "random_forest"]
    rows = list(csv.reader(only(tmp_path, "report_bilstm_s1_*.csv").open()))
    assert len(rows) == 41
    assert len(list(csv.reader(only(tmp_path, "dm_s1_*.csv").open()))) == 4
    assert len(list(csv.reader(only(tmp_path, "history_s1_*.csv").open()))) == 5


def test_stage_commands(workspace, tmp_path):
    for cmd in ("ingest", "features", "rfe"):
        assert run(cmd, "--config", workspace, "--out", tmp_path) == 0
    assert run("lags", "--config", workspace, "--out", tmp_path, "--p-max", 10) == 0
    lag_files = [p for p in tmp_path.iterdir() if p.name.startswith("lag")]
    assert lag_files
    table = next(p for p in lag_files if p.suffix == ".json")
    doc = json.loads(table.read_text())
    assert "target_own" in json.dumps(doc)


def test_lag_curves_cover_range(workspace, tmp_path):
    assert run("lags", "--config", workspace, "--out", tmp_path, "--p-max", 10) == 0
    curves = [p for p in tmp_path.iterdir() if "curve" in p.name and p.suffix == ".csv"]
    assert curves
    rows = list(csv.reader(curves[0].open()))
    assert {int(r[rows[0].index("p")]) for r in rows[1:]} >= set(range(1, 11))


def test_ablate_sixteen_rows(workspace, tmp_path):
    assert run("ablate", "--config", workspace, "--out", tmp_path) == 0
    rows = list(csv.reader(only(tmp_path, "ablation_*.csv").open()))
    assert len(rows) == 17
    assert sorted(int(r[-1]) for r in rows[1:]) == list(range(1, 17))
    assert "(0)" in [r[0] for r in rows[1:]]


def test_tune_then_train_tuned(workspace, tmp_path):
    assert run("tune", "--config", workspace, "--out", tmp_path, "--trials", 2) == 0
    best = json.loads(only(tmp_path, "best_config_*.json").read_text())
    assert set(best["config"]) == {"hidden", "fc", "dropout", "learning_rate", "batch", "window"}
    assert len(only(tmp_path, "journal_*.jsonl").read_text().splitlines()) == 4
    assert run("train", "--config", workspace, "--out", tmp_path, "--tuned", "--epochs", 2) == 0
    model = json.loads(only(tmp_path, "model_*.json").read_text())
    assert model["config"]["hidden"] == best["config"]["hidden"]


def test_sweeps(workspace, tmp_path):
    assert run("sweep-window", "--config", workspace, "--out", tmp_path, "--sizes", "1-3") == 0
    assert len(list(csv.reader(only(tmp_path, "window_sweep_*.csv").open()))) == 4
    assert run("sweep-rfe", "--config", workspace, "--out", tmp_path, "--counts", "1,3") == 0
    assert len(list(csv.reader(only(tmp_path, "rfe_sweep_*.csv").open()))) == 3


def test_env_output_root(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("FXFUSION_OUT", str(tmp_path / "envout"))
    assert run("ingest", "--config", workspace) == 0
    assert list((tmp_path / "envout").glob("frame_*.csv"))


@pytest.mark.parametrize("argv,message", [
    (["ingest", "--config", "/nonexistent/config.json"], "not found"),
    (["evaluate"], "series"),
    (["sweep-window", "--sizes", "25"], "window sizes"),
])
def test_errors_exit_nonzero(argv, message, workspace, tmp_path, capsys):
    if "--config" not in argv and argv[0] != "evaluate":
        argv = argv + ["--config", str(workspace)]
    assert run(*argv, "--out", tmp_path) == 1
    err = capsys.readouterr().err
    assert err.startswith(f"fxfusion {argv[0]}: error:") and message in err


def test_evaluate_without_checkpoint(workspace, tmp_path, capsys):
    assert run("evaluate", "--config", workspace, "--out", tmp_path) == 1
    assert "run `train` first" in capsys.readouterr().err


def test_train_tuned_without_tune(workspace, tmp_path, capsys):
    assert run("train", "--config", workspace, "--out", tmp_path, "--tuned") == 1
    assert "run `tune` first" in capsys.readouterr().err


def test_invalid_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run("ingest", "--config", bad, "--out", tmp_path) == 1
    assert "not valid JSON" in capsys.readouterr().err
