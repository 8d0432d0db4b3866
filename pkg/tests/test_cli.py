import subprocess
import sys

import pytest

from physichm import report
from physichm.cli import main
from physichm.tensorfile import read_tensor

SMALL = """\
synth.n_train = 16
synth.n_val = 8
synth.n_test = 24
synth.n_bins = 32
synth.n_video = 4
synth.n_audio = 4
synth.n_image = 4
synth.n_angles = 3
synth.feat_dim = 8
synth.text_dim = 8
"""
TRAIN = """\
epochs = 2
batch = 8
model.width = 8
model.latent = 32
model.d_state = 4
model.heads = 2
model.hidden = 16
model.text_dim = 8
loss.k = 8
loss.heatmap_res = 16
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "synth.cfg").write_text(SMALL, encoding="utf-8")
    (d / "train.cfg").write_text(TRAIN, encoding="utf-8")
    assert main(["gen-data", "--config", str(d / "synth.cfg"), "--out", str(d / "data")]) == 0
    assert main(["train", "--config", str(d / "train.cfg"), "--data", str(d / "data" / "train.manifest"),
                 "--out", str(d / "ckpt")]) == 0
    return d


def test_train_outputs(workdir):
    assert (workdir / "ckpt" / "best" / "config.ini").exists()
    assert (workdir / "ckpt" / "loss.png").stat().st_size > 0
    m = report.read_metrics(workdir / "ckpt" / "train_report.txt")
    assert m["train_loss_last"] > 0


def test_eval_report(workdir):
    rep = workdir / "eval.txt"
    assert main(["eval", "--ckpt", str(workdir / "ckpt"), "--data", str(workdir / "data"),
                 "--report", str(rep), "--bench-iters", "10"]) == 0
    m = report.read_metrics(rep)
    assert {"i_auroc", "i_ap", "i_f1_max", "latency_ms", "fps"} <= set(m)
    assert len(report.parse_table(rep.read_text(encoding="utf-8"), "samples")) == 24
    assert (workdir / "eval_scores.png").exists()


def test_ablate_replicates(workdir):
    rep = workdir / "ablate.txt"
    assert main(["ablate", "--variant", "full,image", "--config", str(workdir / "train.cfg"),
                 "--data", str(workdir / "data"), "--report", str(rep), "--replicates", "2"]) == 0
    text = rep.read_text(encoding="utf-8")
    runs = report.parse_table(text, "runs")
    assert [(r["variant"], r["seed"]) for r in runs] == [("full", "42"), ("full", "43"), ("image", "42"), ("image", "43")]
    m = report.parse_metrics(text)
    mean = sum(float(r["i_auroc"]) for r in runs[:2]) / 2
    assert m["full.i_auroc"] == pytest.approx(mean, rel=1e-15)


def test_robust_and_bench(workdir):
    rep = workdir / "robust.txt"
    assert main(["robust", "--ckpt", str(workdir / "ckpt"), "--data", str(workdir / "data"),
                 "--sigmas", "0,0.1,0.2,0.3", "--report", str(rep)]) == 0
    m = report.read_metrics(rep)
    assert {f"sigma_{s}.i_auroc" for s in ("0", "0.1", "0.2", "0.3")} <= set(m)
    assert main(["bench", "--ckpt", str(workdir / "ckpt"), "--data", str(workdir / "data"),
                 "--iters", "10", "--report", str(workdir / "bench.txt")]) == 0
    m = report.read_metrics(workdir / "bench.txt")
    assert m["fps"] == pytest.approx(1000.0 / m["latency_ms"])


def test_heatmap_outputs(workdir):
    out = workdir / "hm"
    assert main(["heatmap", "--ckpt", str(workdir / "ckpt"), "--data", str(workdir / "data"),
                 "--sample", "2", "--out", str(out)]) == 0
    maps = read_tensor(out / "heatmap.phmt")
    assert maps.shape == (3, 16, 16)
    px = report.read_pgm(out / "angle_0.pgm")
    assert px.shape == (16, 16) and px.max() == 255


def test_gradcheck_single_module(capsys):
    assert main(["gradcheck", "--module", "film"]) == 0
    assert "film" in capsys.readouterr().out


def test_failures_are_one_line(workdir, capsys):
    assert main(["eval", "--ckpt", str(workdir / "missing"), "--data", str(workdir / "data"),
                 "--report", str(workdir / "x.txt")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ") and err.count("\n") == 1
    assert main(["heatmap", "--ckpt", str(workdir / "ckpt"), "--data", str(workdir / "data"),
                 "--sample", "999", "--out", str(workdir / "hm2")]) == 1
    assert main(["ablate", "--variant", "bogus", "--data", str(workdir / "data"), "--report", "r"]) == 1


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "physichm", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("physichm ")
    r = subprocess.run([sys.executable, "-m", "physichm", "eval"], capture_output=True, text=True)
    assert r.returncode == 2
