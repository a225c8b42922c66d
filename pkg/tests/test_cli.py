"""End-to-end command-line pipeline on a miniature corpus."""
import csv
import json
import subprocess
import sys

import pytest

from sketchlite.cli import main, write_csv

TINY_CFG = """
n_classes = 3
n_instances = 3
n_sketches = 2
canvases = 16,32
embed_dim = 16
policy_hidden = 16
teacher_epochs = 2
distill_epochs = 2
selector_epochs = 2
triplet_batch = 4
selector_batch = 4
steps_per_epoch = 3
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the full chain once; the tests below inspect its artifacts."""
    out = tmp_path_factory.mktemp("pipeline")
    cfg = out / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    base = ["--config", str(cfg), "--out", str(out), "--seed", "0"]
    assert main(["gen-data", *base]) == 0
    assert main(["train-teacher", *base]) == 0
    assert main(["distill", *base]) == 0
    assert main(["distill", "--mode", "no-kd", *base]) == 0
    assert main(["train-selector", *base]) == 0
    return out, base


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_artifacts_exist(pipeline):
    out, _ = pipeline
    for name in ("data/train.ndjson", "data/test.ndjson",
                 "data/photos/index.json", "teacher_s0.sklc",
                 "student_kd_s0.sklc", "student_nokd_s0.sklc",
                 "gallery_s0.sklc", "flops_table.json", "policy_s0.sklc"):
        assert (out / name).exists(), name


def test_metric_files_have_rows(pipeline):
    out, _ = pipeline
    teacher = _read_csv(out / "teacher_s0.metrics.csv")
    assert len(teacher) == 2 and "loss" in teacher[0]
    student = _read_csv(out / "student_kd_s0.metrics.csv")
    assert {"loss", "tri", "rkd", "loss_c16", "loss_c32"} <= set(student[0])
    assert "acc1" in student[-1]
    policy = _read_csv(out / "policy_s0.metrics.csv")
    assert {"mean_reward", "mean_canvas"} <= set(policy[0])


def test_flops_table_is_valid_json(pipeline):
    out, _ = pipeline
    table = json.loads((out / "flops_table.json").read_text())
    assert [int(s) for s in table["sizes"]] == [16, 32]
    assert table["flops"][1] > table["flops"][0] > 0


def test_eval_fixed_canvas(pipeline, capsys):
    out, base = pipeline
    assert main(["eval", "--mode", "fixed-canvas", *base]) == 0
    rows = _read_csv(out / "eval_fixed-canvas_s0.csv")
    assert [r["mode"] for r in rows] == ["fixed-16", "fixed-32"]
    assert float(rows[1]["mean_flops"]) > float(rows[0]["mean_flops"])
    assert all(0.0 <= float(r["acc1"]) <= 100.0 for r in rows)
    text = capsys.readouterr().out
    assert "acc1=" in text and "mean_flops=" in text


def test_eval_selector_mode(pipeline):
    out, base = pipeline
    assert main(["eval", "--mode", "selector", *base]) == 0
    rows = _read_csv(out / "eval_selector_s0.csv")
    assert len(rows) == 1
    row = rows[0]
    assert row["mode"] == "selector"
    assert float(row["mean_canvas"]) in (16.0, 32.0) or \
        16.0 < float(row["mean_canvas"]) < 32.0
    # the per-query cost includes the recurrent selector itself
    table = json.loads((out / "flops_table.json").read_text())
    assert float(row["mean_flops"]) > min(table["flops"])


def test_sweep_resolution(pipeline):
    out, base = pipeline
    assert main(["sweep", "--kind", "resolution", *base]) == 0
    rows = _read_csv(out / "sweep_resolution_s0.csv")
    assert [int(r["canvas"]) for r in rows] == [16, 32]
    assert (out / "sweep_resolution_s0.png").stat().st_size > 1000


def test_sweep_lambda_f(pipeline):
    out, base = pipeline
    assert main(["sweep", "--kind", "lambda_f", *base]) == 0
    rows = _read_csv(out / "sweep_lambda_f_s0.csv")
    assert [float(r["lam_f"]) for r in rows] == [0.0, 0.2, 0.35, 0.5, 0.7, 0.9]
    assert (out / "sweep_lambda_f_s0.png").exists()


def test_missing_prerequisite_names_artifact(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    base = ["--config", str(cfg), "--out", str(tmp_path), "--seed", "0"]
    assert main(["distill", *base]) == 2
    err = capsys.readouterr().err
    assert "missing artifact" in err and "gen-data" in err
    assert main(["gen-data", *base]) == 0
    assert main(["distill", *base]) == 2
    err = capsys.readouterr().err
    assert "teacher_s0.sklc" in err and "train-teacher" in err


def test_profile_golden_passes(capsys):
    assert main(["profile", "--golden"]) == 0
    text = capsys.readouterr().out
    assert text.count("golden pass") == 3
    assert "selector @T=100" in text
    assert "vgg16" in text and "resnet18" in text and "mobilenet_v2" in text


def test_profile_verbose_prints_layers(capsys):
    assert main(["profile", "--verbose"]) == 0
    assert "conv" in capsys.readouterr().out


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sketchlite.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "gen-data" in proc.stdout and "train-selector" in proc.stdout


def test_write_csv_unions_columns(tmp_path):
    path = tmp_path / "rows.csv"
    write_csv(path, [{"a": 1}, {"a": 2, "b": 3}])
    rows = _read_csv(path)
    assert rows[0] == {"a": "1", "b": ""}
    assert rows[1] == {"a": "2", "b": "3"}


def test_selector_ablation_flags(pipeline):
    out, base = pipeline
    assert main(["train-selector", "--no-rank", "--tag", "norank", *base]) == 0
    assert (out / "policy_s0_norank.sklc").exists()
    assert main(["train-selector", "--lam-f", "0.0", "--tag", "lf0", *base]) == 0
    assert (out / "policy_s0_lf0.sklc").exists()
