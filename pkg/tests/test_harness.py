import csv
import json
import os
from collections import Counter

import jsonschema
import numpy as np
import pytest

from streamal import datagen
from streamal.heads import MultiHeadClassifier
from streamal.harness import cli, report, runner
from streamal.harness.config import ConfigError, RunConfig, load_config

SMALL = dict(hidden=(8,), epochs=40, pred_samples=8, bound_samples=8, pretrain_bound_samples=8,
             taus=(0.1, 1.0), alphas=(1.0, 10.0), betas=(0.01, 1.0), budget=4, subsample=8,
             acq_samples=4, pool_size=16, max_queries=2, gamma=0.1, episode_frames=1,
             query_confidence=0.99)
SCENARIO = dict(d=6, n_classes=2, n_tasks=4, frames_per_demo=60, frames_task0=200,
                separation=4.0, drift=2.0)


def small(**changes):
    scenario = dict(SCENARIO, **changes.pop("scenario", {}))
    return RunConfig(scenario=scenario, **dict(SMALL, **changes))


# -- config --------------------------------------------------------------------

def test_ini_loading(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nmode = mean\nseed = 7\nhidden = 16, 8\nout_dir = 123\n"
                    "[bound]\ntaus = 0.5, 2\n[scenario]\nd = 5\ndrift = 1.25\nnew_class_task = 2\n")
    cfg = load_config(path, seed=9)
    assert cfg.mode == "mean" and cfg.seed == 9 and cfg.hidden == (16, 8)
    assert cfg.out_dir == "123"
    assert cfg.taus == (0.5, 2.0)
    assert cfg.scenario["d"] == 5 and cfg.scenario["drift"] == 1.25 and cfg.scenario["new_class_task"] == 2
    assert cfg.scenario["n_classes"] == 3
    assert cfg.arch(5).layer_sizes == (5, 16, 8, 1)


@pytest.mark.parametrize("body", [
    "[run]\nnot_a_key = 1\n",
    "[scenario]\nwidth = 3\n",
    "[run]\nseed = seven\n",
    "[run]\nmode = bayes\n",
    "[run]\nbudget = 100\n",
    "[run]\ngamma = -1\n",
    "no section header\n",
])
def test_bad_ini_raises(tmp_path, body):
    path = tmp_path / "bad.ini"
    path.write_text(body)
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_unknown_scenario_key_in_code():
    with pytest.raises(ConfigError):
        RunConfig(scenario={"depth": 3})


# -- runs ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    cfg = small(mode="full", seed=0, out_dir=str(out), scenario=dict(n_tasks=5, new_class_task=3))
    return cfg, runner.execute(cfg)


def test_report_files_and_schema(full_run):
    cfg, metrics = full_run
    body = report.load_report(os.path.join(cfg.out_dir, "metrics.json"))
    assert body["mode"] == "full" and body["query_predicate"]
    assert len(body["per_task"]) == 4
    with open(os.path.join(cfg.out_dir, "frames.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == report.FRAME_COLUMNS
    assert len(rows) == len(metrics["frames"])
    with open(os.path.join(cfg.out_dir, "curves.csv")) as fh:
        assert [int(r["task"]) for r in csv.DictReader(fh)] == [1, 2, 3, 4]
    broken = dict(body)
    del broken["aggregate"]
    with pytest.raises(jsonschema.ValidationError):
        report.validate(broken)


def test_every_query_is_followed_by_one_update(full_run):
    _, metrics = full_run
    queried = Counter((f["task_id"], f["true_class"]) for f in metrics["frames"] if f["queried"])
    updated = Counter((u["task"], u["class_id"]) for u in metrics["updates"] if u["task"] > 0)
    assert queried == updated
    assert sum(queried.values()) == metrics["aggregate"]["queries"] > 0
    for u in metrics["updates"]:
        if u["task"] > 0:
            assert u["n"] == 2 * SMALL["budget"]


def test_new_class_gets_exactly_one_head(full_run):
    _, metrics = full_run
    assert metrics["add_head_events"] == [{"task": 3, "class_id": 2}]
    assert metrics["aggregate"]["add_heads"] == 1


def test_no_forgetting_of_classes_not_updated(full_run):
    cfg, metrics = full_run
    ckpt = os.path.join(cfg.out_dir, "checkpoints")
    untouched = 0
    for task in range(1, 5):
        before = MultiHeadClassifier.load(os.path.join(ckpt, f"task_{task - 1}"))
        after = MultiHeadClassifier.load(os.path.join(ckpt, f"task_{task}"))
        for c in before.heads:
            updated = any(u["task"] == task and u["class_id"] == c for u in metrics["updates"])
            same = before.head_bytes(c) == after.head_bytes(c)
            assert same != updated
            untouched += same
    assert untouched > 0


def test_determinism_excluding_timing():
    cfg = small(mode="full", seed=3)
    a = runner.run_stream(cfg)
    b = runner.run_stream(cfg)
    assert report.strip_timing(a) == report.strip_timing(b)
    assert report.strip_timing(a) != report.strip_timing(runner.run_stream(cfg.replace(seed=4)))


def test_easy_stream_needs_no_queries():
    cfg = small(mode="vanilla", query_confidence=0.85, episode_frames=5,
                scenario=dict(drift=0.0, separation=8.0))
    metrics = runner.run_stream(cfg)
    assert metrics["aggregate"]["queries"] == 0
    assert metrics["aggregate"]["precision"] == 1.0


def test_pretrained_checkpoint_reused(tmp_path):
    cfg = small(mode="full", seed=1)
    demos = runner.load_demos(cfg)
    clf, reports = runner.pretrain(cfg, demos)
    clf.save(tmp_path)
    direct = runner.run_stream(cfg, demos)
    reused = runner.run_stream(cfg, demos, str(tmp_path), pre_reports=reports)
    assert report.strip_timing(direct) == report.strip_timing(reused)


def test_baseline_table(tmp_path):
    cfg = small()
    runs = runner.run_baseline(cfg, [0, 1], ("vanilla", "full"), str(tmp_path))
    assert [(r["mode"], r["seed"]) for r in runs] == [("vanilla", 0), ("full", 0), ("vanilla", 1), ("full", 1)]
    table = report.comparison_table(runs)
    assert table["full"]["runs"] == 2
    assert "vanilla" in report.format_table(table)
    body = report.load_report(tmp_path / "full_seed0" / "metrics.json")
    assert body["updates"][0]["task"] == 0


def test_stream_without_pretraining_split_aborts():
    cfg = small()
    demos = [dm for dm in runner.load_demos(cfg) if dm.task_id > 0]
    with pytest.raises(runner.RunError):
        runner.run_stream(cfg, demos)


# -- CLI -----------------------------------------------------------------------

def write_ini(path, **extra):
    lines = ["[run]"] + [f"{k} = {', '.join(map(str, v)) if isinstance(v, tuple) else v}"
                         for k, v in dict(SMALL, **extra).items()]
    lines += ["[scenario]"] + [f"{k} = {v}" for k, v in SCENARIO.items()]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_cli_flow(tmp_path, capsys):
    ini = write_ini(tmp_path / "run.ini")
    stream = str(tmp_path / "stream.csv")
    assert cli.main(["gen-data", "--config", ini, "--seed", "2", "--out", stream]) == 0
    assert len(datagen.load_stream(stream)) == 2 * 4
    pre = str(tmp_path / "pre")
    assert cli.main(["pretrain", "--config", ini, "--stream", stream, "--out", pre]) == 0
    out = str(tmp_path / "run")
    assert cli.main(["run", "--config", ini, "--stream", stream, "--pretrained", pre,
                     "--mode", "mean", "--out", out]) == 0
    assert report.load_report(os.path.join(out, "metrics.json"))["mode"] == "mean"
    capsys.readouterr()
    assert cli.main(["eval", "--checkpoint", os.path.join(out, "checkpoints", "task_3"),
                     "--stream", stream]) == 0
    assert 0 <= json.loads(capsys.readouterr().out)["precision"] <= 1
    assert cli.main(["compare", "--config", ini, "--seed-list", "0", "--modes", "vanilla",
                     "--out", str(tmp_path / "cmp")]) == 0
    assert (tmp_path / "cmp" / "comparison.json").exists()


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nmode = nope\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["run", "--stream", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "y")]) == 2
    garbled = tmp_path / "garbled.csv"
    garbled.write_text("task_id,class_id\n1,2\n")
    assert cli.main(["eval", "--checkpoint", str(tmp_path), "--stream", str(garbled)]) == 2
    # a stream without a pretraining split fails at run time
    ini = write_ini(tmp_path / "ok.ini")
    cfg = small()
    stream = tmp_path / "no_task0.csv"
    datagen.save_stream([dm for dm in runner.load_demos(cfg) if dm.task_id > 0], stream)
    assert cli.main(["run", "--config", ini, "--stream", str(stream), "--out", str(tmp_path / "z")]) == 3
