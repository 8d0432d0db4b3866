import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physichm import gradcheck
from physichm import objective as obj

CFG = obj.LossConfig(k=2, topk_weight=1.0)


def diffs_312(latent=8):
    z = np.ones(latent)
    z_hat = z.copy()
    z_hat[:3] -= [3.0, 1.0, 2.0]
    return z, z_hat


def test_recon_zero_at_equality(rng):
    z = rng.standard_normal(16)
    assert float(obj.recon_loss(z, z, obj.LossConfig(k=4)).value) == 0.0


def test_cosine_term_orthogonal():
    z, z_hat = np.eye(512)[0], np.eye(512)[1]
    assert float(obj.cosine_distance(z, z_hat).value) == pytest.approx(1.0, abs=1e-15)


def test_topk_smooth_l1_hand_value():
    z, z_hat = diffs_312()
    assert float(obj.topk_smooth_l1(z, z_hat, 2).value) == pytest.approx(2.0, abs=1e-15)


def text_case(kind, rng):
    w = np.eye(4)
    e = np.array([1.0, 0.0, 0.0, 0.0])
    z_hat = {"parallel": 3 * e, "anti": -2 * e, "orth": np.array([0.0, 1.0, 0.0, 0.0])}[kind]
    return z_hat, w, e


@pytest.mark.parametrize("kind, expected", [("parallel", 0.0), ("anti", 2.0), ("orth", 1.0)])
def test_text_loss_cases(kind, expected, rng):
    z_hat, w, e = text_case(kind, rng)
    assert float(obj.text_loss(z_hat, w, e).value) == pytest.approx(expected, abs=1e-15)


def test_text_anchor_must_be_unit(rng):
    with pytest.raises(ValueError):
        obj.text_loss(np.ones(4), np.eye(4), np.ones(4))


def test_total_loss_composition(rng):
    z, z_hat = rng.standard_normal(8), rng.standard_normal(8)
    w, e = rng.standard_normal((8, 4)), np.array([0.0, 0.6, 0.8, 0.0])
    cfg = obj.LossConfig(k=4, text_weight=0.0)
    assert float(obj.total_loss(z, z_hat, w, e, cfg).value) == float(obj.recon_loss(z, z_hat, cfg).value)
    cfg = obj.LossConfig(k=4, text_weight=1.0)
    assert float(obj.total_loss(z, z, w, e, cfg).value) == pytest.approx(float(obj.text_loss(z, w, e).value))
    cfg = obj.LossConfig(k=4, text_weight=0.5)
    r, t = float(obj.recon_loss(z, z_hat, cfg).value), float(obj.text_loss(z_hat, w, e).value)
    assert float(obj.total_loss(z, z_hat, w, e, cfg).value) == pytest.approx(r + 0.5 * t, rel=1e-14)
    assert 0.3 + 0.5 * 0.2 == pytest.approx(0.4)


def test_score_cases(rng):
    z = rng.standard_normal(10)
    assert float(obj.anomaly_score(z, z, CFG).value) == 0.0
    z, z_hat = diffs_312()
    c = float(obj.cosine_distance(z, z_hat).value)
    assert float(obj.anomaly_score(z, z_hat, CFG).value) == pytest.approx(c + 2.5, rel=1e-14)


def test_score_scaling_decomposition(rng):
    z, z_hat = rng.standard_normal(12), rng.standard_normal(12)
    cfg = obj.LossConfig(k=3)
    c1, c2 = (float(obj.cosine_distance(s * z, s * z_hat).value) for s in (1, 2))
    t1, t2 = (float(obj.topk_abs(s * z, s * z_hat, 3).value) for s in (1, 2))
    assert c2 == pytest.approx(c1, rel=1e-12)
    assert t2 == pytest.approx(2 * t1, rel=1e-14)
    assert float(obj.anomaly_score(2 * z, 2 * z_hat, cfg).value) == pytest.approx(c1 + cfg.topk_weight * 2 * t1)


def test_topk_full_width_is_full_mean(rng):
    z, z_hat = rng.standard_normal(512), rng.standard_normal(512)
    d = z - z_hat
    assert float(obj.topk_abs(z, z_hat, 512).value) == pytest.approx(np.abs(d).mean(), rel=1e-12)
    sl1 = np.where(np.abs(d) < 1, 0.5 * d ** 2, np.abs(d) - 0.5)
    assert float(obj.topk_smooth_l1(z, z_hat, 512).value) == pytest.approx(sl1.mean(), rel=1e-12)


def test_k_larger_than_latent():
    with pytest.raises(ValueError):
        obj.topk_abs(np.ones(4), np.zeros(4), 5)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8), st.floats(0.01, 5.0))
def test_score_non_negative_and_topk_monotone(seed, k, bump):
    r = np.random.default_rng(seed)
    z, z_hat = r.standard_normal(8), r.standard_normal(8)
    cfg = obj.LossConfig(k=k)
    s = float(obj.anomaly_score(z, z_hat, cfg).value)
    assert s >= 0
    d = np.abs(z - z_hat)
    j = int(np.argsort(-d, kind="stable")[0])
    z2 = z.copy()
    z2[j] += np.sign(z[j] - z_hat[j]) * bump
    assert float(obj.topk_abs(z2, z_hat, k).value) >= float(obj.topk_abs(z, z_hat, k).value)


def test_loss_gradient_matches_finite_differences():
    assert gradcheck.run("loss", seeds=range(3))["loss"] < 1e-4


def test_saliency_maps_bounds_and_zero_angle(rng):
    g = rng.standard_normal((3, 16, 5))
    g[1] = 0.0
    maps = obj.saliency_maps(g, (4, 4), 32, 2.0)
    assert maps.shape == (3, 32, 32)
    assert maps.min() >= 0.0 and maps.max() <= 1.0
    np.testing.assert_array_equal(maps[1], 0.0)


def test_token_cell_covers_its_block():
    g = np.zeros((4, 4))
    g[2, 1] = 1.0
    up = obj.cell_upsample(g, 64)
    rows, cols = obj.token_cell(9, (4, 4), 64)
    r, c = np.unravel_index(np.argmax(up), up.shape)
    assert rows.start <= r < rows.stop and cols.start <= c < cols.stop
