import json
import subprocess
import sys

import numpy as np
import pytest

from takd import cli
from takd import metrics as mt


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def flow(tmp_path_factory):
    """One full gen -> train -> distill -> eval chain shared by the module."""
    root = tmp_path_factory.mktemp("flow")
    data, teach, stud, ev = (root / n for n in ("data", "teach", "stud", "ev"))
    assert run_cli("gen-data", "--out", str(data), "--subjects", "3", "--speeds", "SW",
                   "--windows-per-trial", "3", "--window", "100", "--seed", "9") == 0
    assert run_cli("train-teacher", "--data", str(data), "--out", str(teach),
                   "--encoder", "c3d", "--objective", "ae", "--strategy", "1",
                   "--seed", "9", "train.epochs=3", "train.batch=6") == 0
    assert run_cli("distill", "--data", str(data), "--teacher", str(teach / "teacher.takd"),
                   "--out", str(stud), "--preset", "takd-dagger", "--seed", "9",
                   "train.epochs=2", "train.batch=6") == 0
    assert run_cli("eval", "--data", str(data), "--model", str(stud / "student.takd"),
                   "--out", str(ev), "--loso") == 0
    return {"root": root, "data": data, "teach": teach, "stud": stud, "ev": ev}


def test_flow_artifacts(flow):
    assert (flow["data"] / "manifest.json").exists()
    assert (flow["teach"] / "teacher.takd").exists()
    assert (flow["teach"] / "run.json").exists()
    assert (flow["stud"] / "loss_terms.csv").exists()
    metrics = (flow["ev"] / "metrics.csv").read_text().splitlines()
    assert metrics[0].startswith("method,teacher,preset,strategy,subject,speed,seed,rmse")
    assert len(metrics) == 4  # header + 3 subjects x 1 speed


def test_run_json_echoes_config(flow):
    blob = json.loads((flow["teach"] / "run.json").read_text())
    assert blob["subcommand"] == "train-teacher"
    assert blob["resolved_config"]["train.epochs"] == 3
    assert blob["resolved_config"]["train.seed"] == 9
    assert blob["version"]


def test_distill_run_record_logs_plan(flow):
    blob = json.loads((flow["stud"] / "run.json").read_text())
    assert blob["notes"]["preset"] == "takd-dagger"
    assert len(blob["notes"]["plan"]) == 3


def test_inputs_not_mutated(flow, tmp_path):
    before = (flow["data"] / "manifest.json").read_bytes()
    teacher_before = (flow["teach"] / "teacher.takd").read_bytes()
    assert run_cli("eval", "--data", str(flow["data"]),
                   "--model", str(flow["stud"] / "student.takd"),
                   "--out", str(tmp_path / "ev2")) == 0
    assert (flow["data"] / "manifest.json").read_bytes() == before
    assert (flow["teach"] / "teacher.takd").read_bytes() == teacher_before


def test_compare_aggregates(flow, tmp_path):
    out = tmp_path / "cmp"
    assert run_cli("compare", "--runs", str(flow["ev"].parent), "--out", str(out)) == 0
    agg = (out / "aggregate.csv").read_text().splitlines()
    assert agg[0].startswith("method,n,rmse_mean")
    assert len(agg) >= 2
    assert (out / "ttests.csv").exists()


def test_unknown_config_key_exits_1(tmp_path):
    rc = run_cli("gen-data", "--out", str(tmp_path / "x"), "data.bogus=1")
    assert rc == 1


def test_bad_config_file_exits_1(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("train.epochs = banana\n")
    rc = run_cli("gen-data", "--out", str(tmp_path / "x"), "--config", str(cfg))
    assert rc == 1


def test_unknown_subcommand_exits_1():
    assert run_cli("explode") == 1


def test_missing_dataset_exits_nonzero(tmp_path):
    rc = run_cli("train-teacher", "--data", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "o"))
    assert rc in (1, 2)


def test_config_file_layering(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment line\ndata.subjects = 2\ndata.windows_per_trial = 2\n"
                   "data.speeds = SW\ndata.window = 100\n")
    out = tmp_path / "ds"
    assert run_cli("gen-data", "--out", str(out), "--config", str(cfg),
                   "data.seed=3") == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subjects"] == ["01", "02"]
    blob = json.loads((out / "run.json").read_text())
    assert blob["resolved_config"]["data.seed"] == 3


def test_gen_data_plan_mirrors_table_counts():
    # count bookkeeping only; the full 279-window generation is user-scale
    from takd.synth import trial_plan
    plan = trial_plan(8, ("SW", "RW", "BW", "FW"), 279)
    assert sum(n for (s, sp), n in plan.items() if sp == "SW") == 2232


def test_eval_determinism_same_seed(tmp_path):
    args_first = tmp_path / "a"
    args_second = tmp_path / "b"
    for root in (args_first, args_second):
        data = root / "data"
        teach = root / "teach"
        ev = root / "ev"
        assert run_cli("gen-data", "--out", str(data), "--subjects", "2", "--speeds", "SW",
                       "--windows-per-trial", "2", "--window", "100", "--seed", "4") == 0
        assert run_cli("train-teacher", "--data", str(data), "--out", str(teach),
                       "--seed", "4", "train.epochs=2", "train.batch=4") == 0
        assert run_cli("eval", "--data", str(data), "--model", str(teach / "teacher.takd"),
                       "--out", str(ev), "--loso") == 0
    a = (args_first / "ev" / "metrics.csv").read_bytes()
    b = (args_second / "ev" / "metrics.csv").read_bytes()
    assert a == b


def test_eval_requires_model_or_check(tmp_path):
    assert run_cli("eval", "--out", str(tmp_path / "o")) == 1


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "takd.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "takd" in proc.stdout


def test_check_exit_codes(monkeypatch, tmp_path):
    from takd import acceptance

    monkeypatch.setattr(acceptance, "run", lambda level="fast", out=print: True)
    assert run_cli("eval", "--check", "--out", str(tmp_path / "a")) == 0
    monkeypatch.setattr(acceptance, "run", lambda level="fast", out=print: False)
    assert run_cli("eval", "--check", "--out", str(tmp_path / "b")) == 3


def test_thread_env_does_not_change_results(flow, tmp_path, monkeypatch):
    out1, out2 = tmp_path / "t1", tmp_path / "t2"
    monkeypatch.delenv("TAKD_THREADS", raising=False)
    assert run_cli("eval", "--data", str(flow["data"]),
                   "--model", str(flow["stud"] / "student.takd"),
                   "--out", str(out1), "--loso") == 0
    monkeypatch.setenv("TAKD_THREADS", "3")
    assert run_cli("eval", "--data", str(flow["data"]),
                   "--model", str(flow["stud"] / "student.takd"),
                   "--out", str(out2), "--loso") == 0
    assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()


def test_eval_bodyweight_units(flow, tmp_path):
    out = tmp_path / "bw"
    assert run_cli("eval", "--data", str(flow["data"]),
                   "--model", str(flow["stud"] / "student.takd"),
                   "--out", str(out), "eval.units=bodyweight") == 0
    rows = mt.load_metric_rows(out / "metrics.csv")
    assert rows[0]["rmse"] > 1.0  # percent-bodyweight scale, not [0,1]


@pytest.mark.parametrize("extra", [
    ("--objective", "vae"),
    ("--strategy", "2"),
    ("--strategy", "3"),
])
def test_train_teacher_variants(tmp_path, extra):
    data = tmp_path / "data"
    out = tmp_path / "out"
    assert run_cli("gen-data", "--out", str(data), "--subjects", "2", "--speeds", "SW",
                   "--windows-per-trial", "2", "--window", "100", "--seed", "1") == 0
    assert run_cli("train-teacher", "--data", str(data), "--out", str(out), "--seed", "1",
                   *extra, "train.epochs=2", "train.batch=4") == 0
    assert (out / "teacher.takd").exists()


def test_train_teacher_holdout_excludes_subject(tmp_path):
    data = tmp_path / "data"
    out = tmp_path / "out"
    assert run_cli("gen-data", "--out", str(data), "--subjects", "3", "--speeds", "SW",
                   "--windows-per-trial", "2", "--window", "100", "--seed", "2") == 0
    assert run_cli("train-teacher", "--data", str(data), "--out", str(out), "--seed", "2",
                   "--holdout", "03", "train.epochs=2", "train.batch=4",
                   "train.validate=false") == 0
    blob = json.loads((out / "run.json").read_text())
    assert blob["resolved_config"]["train.holdout"] == "03"
