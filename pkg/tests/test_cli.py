import json

import numpy as np
import pytest

from clusternet.cli import _thresholds, main, read_config
from clusternet.postprocess import DetectionSet, write_detections_csv
from clusternet.synthdata import Annotations

SMALL = ["--height", "256", "--width", "256", "--vehicles", "8"]


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    assert main(["synth", "--out", str(d), "--seed", "3", *SMALL]) == 0
    return d


def test_synth_is_reproducible(scene_dir, tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--seed", "3", *SMALL]) == 0
    names = sorted(p.name for p in scene_dir.iterdir())
    assert names == sorted(p.name for p in tmp_path.iterdir())
    assert "annotations.csv" in names and "scene.json" in names
    for n in names:
        assert (scene_dir / n).read_bytes() == (tmp_path / n).read_bytes(), n


def test_eval_of_ground_truth_is_perfect(scene_dir, tmp_path):
    ann = Annotations.from_csv(scene_dir / "annotations.csv")
    write_detections_csv(tmp_path / "d.csv",
                         [DetectionSet(ann.points(2), np.ones(len(ann.points(2))), 2)])
    out = tmp_path / "r.json"
    assert main(["eval", "--detections", str(tmp_path / "d.csv"),
                 "--annotations", str(scene_dir / "annotations.csv"), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["f1"] == 1.0 and rep["fp"] == 0 and rep["fn"] == 0


def test_train_infer_eval_sweep(scene_dir, tmp_path):
    cl, fv = tmp_path / "cl.ckpt", tmp_path / "fv.ckpt"
    common = ["--data", str(scene_dir), "--width", "4", "--steps", "2", "--batch-size", "2"]
    assert main(["train-clusternet", "--out", str(cl), *common]) == 0
    assert main(["train-foveanet", "--out", str(fv), *common]) == 0
    assert cl.with_suffix(".loss.csv").exists()
    out = tmp_path / "run"
    assert main(["infer", "--frames-dir", str(scene_dir), "--cluster", str(cl), "--fovea", str(fv),
                 "--out", str(out), "--tau-gate", "0"]) == 0
    assert (out / "heatmap_00002.png").exists() and (out / "heatmap_00002.npy").exists()
    speed = json.loads((out / "speedup.json").read_text())
    assert speed["mean_fraction_skipped"] == 0.0
    assert main(["eval", "--detections", str(out / "detections.csv"),
                 "--annotations", str(scene_dir / "annotations.csv"), "--out", str(tmp_path / "r.json")]) == 0
    assert main(["sweep", "--heatmaps", str(out), "--annotations", str(scene_dir / "annotations.csv"),
                 "--out", str(tmp_path / "pr.csv"), "--roc", str(tmp_path / "roc.csv")]) == 0
    rows = (tmp_path / "pr.csv").read_text().splitlines()
    assert len(rows) == 10
    recall = [float(r.split(",")[2]) for r in rows[1:]]
    assert all(a >= b for a, b in zip(recall, recall[1:]))
    # a checkpoint of the wrong kind is a runtime failure
    assert main(["infer", "--frames-dir", str(scene_dir), "--cluster", str(fv), "--fovea", str(fv),
                 "--out", str(out)]) == 2


def test_config_file_with_flag_override(scene_dir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# synthetic scene\nheight = 256\nwidth=256\nvehicles = 8\nseed = 3\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--config", str(cfg), "--out", str(a)]) == 0
    assert (a / "annotations.csv").read_bytes() == (scene_dir / "annotations.csv").read_bytes()
    assert main(["synth", "--config", str(cfg), "--out", str(b), "--seed", "4"]) == 0
    assert json.loads((b / "scene.json").read_text())["seed"] == 4
    assert json.loads((b / "scene.json").read_text())["height"] == 256


def test_read_config_rejects_malformed_lines(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("height 256\n")
    assert main(["synth", "--config", str(p), "--out", str(tmp_path / "x")]) == 1
    p.write_text("stopped-fraction = 0.5\n")
    assert read_config(p) == {"stopped_fraction": "0.5"}


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["synth"],
    ["synth", "--out", "x", "--frames", "4"],
    ["eval", "--detections", "missing.csv", "--annotations", "missing.csv", "--out", "r.json"],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_unknown_config_key_exits_1(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("tau = 0.3\n")
    assert main(["synth", "--config", str(p), "--out", str(tmp_path / "x")]) == 1


def test_runtime_failure_exits_2(tmp_path, capsys):
    # 500 vehicles do not fit in a 128-px scene
    assert main(["synth", "--out", str(tmp_path), "--height", "128", "--width", "128",
                 "--vehicles", "500"]) == 2
    assert "InfeasibleSceneError" in capsys.readouterr().err


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "synth" in capsys.readouterr().out


def test_threshold_ranges():
    assert _thresholds("0.1:0.9:0.1") == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    assert _thresholds("0.2,0.5") == [0.2, 0.5]
