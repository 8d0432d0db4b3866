from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from physichm import harness, synth
from physichm.config import TrainConfig
from physichm.dataset import generate_dataset
from physichm.model import ModelConfig

_CRITERIA: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance line (shown in the summary) and assert it."""

    def record(name: str, ok: bool, detail: str):
        ok = bool(ok)
        _CRITERIA.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return record


SMALL_SYNTH = synth.SynthConfig(n_train=16, n_val=8, n_test=24, n_bins=32, n_video=4, n_audio=4,
                                n_image=4, n_angles=3, feat_dim=8, text_dim=8)
SMALL_MODEL = ModelConfig(width=8, latent=32, d_state=4, heads=2, hidden=16, text_dim=8)


def small_train_config(**kw) -> TrainConfig:
    from physichm.objective import LossConfig

    base = TrainConfig(epochs=3, batch=8, model=SMALL_MODEL, loss=LossConfig(k=8, heatmap_res=16))
    return replace(base, **kw)


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("small_data")
    generate_dataset(SMALL_SYNTH, out)
    return out


@pytest.fixture(scope="session")
def small_splits(small_data):
    return harness.load_splits(small_data)


@pytest.fixture(scope="session")
def small_ckpt(small_splits, tmp_path_factory):
    tr, va, _ = small_splits
    out = tmp_path_factory.mktemp("small_ckpt")
    ckpt = harness.train(small_train_config(), tr, va, out)
    return ckpt, out


@pytest.fixture
def rng():
    return np.random.default_rng(0)
