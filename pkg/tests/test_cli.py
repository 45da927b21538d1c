import json
import subprocess
import sys

import numpy as np
import pytest

from dpnmrf import io as dio
from dpnmrf.cli import main


@pytest.fixture
def scene(tmp_path):
    d = tmp_path / "scene"
    assert main(["synth", "--seed", "1", "--shape", "2x12x12", "--labels", "3",
                 "--motion", "1,1", "--out", str(d)]) == 0
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"m": 3, "n": 3, "t_m": 3, "t_n": 3, "w1": 1e-4, "w2": 0.05}))
    return d, cfg


def _io_args(d, cfg):
    return ["--unary", str(d / "unary.dpt"), "--image", str(d / "image.ppm"),
            "--flow", str(d / "flow.flo"), "--config", str(cfg)]


def test_infer_matches_oracle(scene, tmp_path, capsys):
    d, cfg = scene
    a, b = tmp_path / "a.dpt", tmp_path / "b.dpt"
    assert main(["infer"] + _io_args(d, cfg) + ["--out", str(a), "--labels", str(tmp_path / "a.pgm")]) == 0
    assert main(["oracle"] + _io_args(d, cfg) + ["--out", str(b), "--iters", "1", "--schedule", "sync"]) == 0
    assert (tmp_path / "b.csv").read_text().startswith("iter,free_energy,max_change\n1,")
    capsys.readouterr()
    assert main(["compare", "--a", str(a), "--b", str(b)]) == 0
    assert "linf" in capsys.readouterr().out
    assert dio.read_pgm_label(tmp_path / "a.pgm", frames=2).shape == (2, 12, 12)


def test_infer_deterministic(scene, tmp_path):
    d, cfg = scene
    for name in ("x.dpt", "y.dpt"):
        assert main(["infer"] + _io_args(d, cfg) + ["--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "x.dpt").read_bytes() == (tmp_path / "y.dpt").read_bytes()


def test_compare_self_and_different(tmp_path, capsys):
    dio.write_tensor(tmp_path / "a.dpt", np.zeros((1, 2, 2, 2)))
    dio.write_tensor(tmp_path / "b.dpt", np.full((1, 2, 2, 2), 0.5))
    assert main(["compare", "--a", str(tmp_path / "a.dpt"), "--b", str(tmp_path / "a.dpt")]) == 0
    assert "linf 0\n" in capsys.readouterr().out
    assert main(["compare", "--a", str(tmp_path / "a.dpt"), "--b", str(tmp_path / "b.dpt")]) == 1


def test_bench_reference(capsys):
    assert main(["bench", "--paper-config"]) == 0
    out = capsys.readouterr().out
    row = next(line for line in out.splitlines() if line.startswith("b12"))
    assert "137625600000" in row and row.endswith("1.3e11")


def test_sequential_oracle_and_train(scene, tmp_path):
    d, cfg = scene
    out = tmp_path / "s.dpt"
    assert main(["oracle"] + _io_args(d, cfg) + ["--out", str(out), "--schedule", "seq",
                                                 "--iters", "3", "--trace", str(tmp_path / "t.csv")]) == 0
    fe = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)[:, 1]
    assert np.all(np.diff(fe) <= 1e-9)
    assert main(["train", "--stage", "label_contexts", "--data", str(d), "--config", str(cfg),
                 "--out", str(tmp_path / "trained.json"), "--iters", "2"]) == 0
    trained = dio.load_config(tmp_path / "trained.json")
    assert trained.w2 == 0.05 and trained.contexts is not None
    assert len((tmp_path / "trained.csv").read_text().splitlines()) == 3


def test_eval(scene, tmp_path, capsys):
    d, _ = scene
    assert main(["eval", "--pred", str(d / "gt.pgm"), "--gt", str(d / "gt.pgm"), "--frames", "2",
                 "--num-labels", "3", "--json", str(tmp_path / "m.json")]) == 0
    report = json.loads((tmp_path / "m.json").read_text())
    assert report["miou"] == 1.0 and report["ba"] == 1.0
    assert "mIoU" in capsys.readouterr().out


def _run(*args):
    return subprocess.run([sys.executable, "-m", "dpnmrf", *args], capture_output=True, text=True)


def test_missing_file_exit_code(tmp_path):
    proc = _run("compare", "--a", str(tmp_path / "nope.dpt"), "--b", str(tmp_path / "nope.dpt"))
    assert proc.returncode == 1 and "error" in proc.stderr and proc.stdout == ""


def test_unknown_flag_exit_code():
    proc = _run("bench", "--frobnicate")
    assert proc.returncode != 0 and "unrecognized" in proc.stderr


def test_bad_config_exit_code(scene, tmp_path):
    d, _ = scene
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"m": 4}))
    proc = _run("infer", *_io_args(d, bad), "--out", str(tmp_path / "o.dpt"))
    assert proc.returncode == 1 and "m:" in proc.stderr
