import numpy as np
import pytest

from physichm import report
from physichm.config import (TrainConfig, dump_sections, load_synth_config, load_train_config,
                             train_config_from_sections)


def write(tmp_path, text):
    p = tmp_path / "cfg.txt"
    p.write_text(text, encoding="utf-8")
    return p


def test_load_train_config(tmp_path):
    cfg = load_train_config(write(tmp_path, "epochs = 5  # short\nmodel.width = 32\nloss.k = 8\n"
                                            "bottleneck.mask_prob = 0.1\nmodel.dt_range = 0.01, 0.2\n"))
    assert cfg.epochs == 5 and cfg.model.width == 32 and cfg.loss.k == 8
    assert cfg.model.bottleneck.mask_prob == 0.1 and cfg.model.dt_range == (0.01, 0.2)


def test_load_synth_config(tmp_path):
    cfg = load_synth_config(write(tmp_path, "synth.n_test = 48\nsynth.severity_range = (0.2, 0.4)\n"))
    assert cfg.n_test == 48 and cfg.severity_range == (0.2, 0.4)
    assert load_synth_config(None).n_test == 192


@pytest.mark.parametrize("text, match", [
    ("epochs = 1\n", "epochs"),
    ("nonsense = 1\n", "unknown train option"),
    ("foo.bar = 1\n", "unknown config section"),
    ("epochs = 3\nepochs = 4\n", "duplicate"),
    ("epochs\n", "key = value"),
    ("model.target_grad = maybe\n", "boolean"),
    ("lr = fast\n", "bad value"),
])
def test_bad_configs(tmp_path, text, match):
    with pytest.raises(ValueError, match=match):
        load_train_config(write(tmp_path, text))


def test_dump_round_trip():
    cfg = TrainConfig(epochs=7, lr=3e-4)
    assert train_config_from_sections(dump_sections(cfg)) == cfg


def test_report_round_trip(tmp_path):
    metrics = {"i_auroc": 0.9123456789012345, "fps": 181.5}
    p = report.write_report(tmp_path / "r.txt", "eval", {"data": "x"}, metrics,
                            {"samples": (("index", "score"), [(0, 0.5), (1, 0.25)])})
    text = p.read_text(encoding="utf-8")
    assert text.startswith("physichm report: eval\n")
    assert report.read_metrics(p) == metrics
    assert report.parse_table(text, "samples") == [{"index": "0", "score": "0.5"}, {"index": "1", "score": "0.25"}]
    with pytest.raises(ValueError):
        report.parse_table(text, "nope")


def test_pgm(tmp_path):
    m = np.linspace(0, 1, 12).reshape(3, 4)
    p = report.write_pgm(tmp_path / "m.pgm", m)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n") and len(raw) == len(b"P5\n4 3\n255\n") + 12
    px = report.read_pgm(p)
    assert px.shape == (3, 4) and px[0, 0] == 0 and px[-1, -1] == 255
