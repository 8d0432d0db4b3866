from dataclasses import replace

import numpy as np
import pytest

from physichm import gradcheck
from physichm import objective as obj
from physichm.model import PROCESS_PREFIXES, VARIANTS, TargetNorm, build_model, variant_config, variant_loss

F64 = np.float64


def tiny(variant="full", seed=0, **kw):
    cfg = variant_config(variant, gradcheck.tiny_model_config(latent=16, **kw))
    r = np.random.default_rng(seed)
    b = 3
    data = (r.standard_normal((b, cfg.n_bins, cfg.n_channels)) * 5 + 50,
            r.standard_normal((b, cfg.n_video, cfg.video_dim)),
            r.standard_normal((b, cfg.n_audio, cfg.audio_dim)),
            np.abs(r.standard_normal((b, cfg.n_angles, cfg.n_image, cfg.image_dim))) + 0.1)
    anchor = np.eye(cfg.text_dim)[0]
    m = build_model(cfg, variant_loss(variant, obj.LossConfig(k=4, heatmap_res=16)), data[0], anchor,
                    seed=seed, dtype=F64)
    return m, data


@pytest.mark.parametrize("variant", VARIANTS)
def test_every_variant_runs(variant):
    m, data = tiny(variant)
    g = m.graph(training=True)
    out = g.forward(m.bindings(*data), seed=1)
    assert out["score"].shape == (3,) and np.isfinite(out["loss"])
    grads = g.backward("loss")
    assert set(grads) == set(m.params)


def test_image_variant_has_constant_tokens():
    m, _ = tiny("image")
    assert "const_tokens" in m.params
    assert not any(k.startswith(("video_in.", "audio_in.", "ssm.", "film.")) for k in m.params)


def test_trainable_excludes_frozen_target():
    m, _ = tiny("full")
    assert m.frozen_target and not any(k.startswith("result.") for k in m.trainable())
    m, _ = tiny("reverse_mapping")
    assert not any(k.startswith(PROCESS_PREFIXES) for k in m.trainable())
    m, _ = tiny("bidirectional")
    assert not m.frozen_target and m.trainable() == list(m.params)


def test_eval_is_deterministic():
    m, data = tiny()
    g = m.graph(training=False)
    a, b = g.forward(m.bindings(*data), seed=1)["score"], g.forward(m.bindings(*data), seed=2)["score"]
    assert a.tobytes() == b.tobytes()


def test_score_zero_when_prediction_matches():
    m, data = tiny()
    out = m.graph(training=False).forward(m.bindings(*data), seed=None)
    assert np.all(out["score"] >= 0)
    z = out["prediction"]
    assert float(obj.anomaly_score(z, z, m.loss_cfg).value.max()) == 0.0


def test_heatmap_bounds_and_shape():
    m, data = tiny()
    maps = m.heatmap(*(d[0] for d in data))
    assert maps.shape == (m.cfg.n_angles, 16, 16)
    assert maps.min() >= 0 and maps.max() <= 1


def test_heatmap_zero_for_an_ignored_angle():
    m, data = tiny()
    m.params["result.gate"][:] = -60.0        # pure max across angles
    image = data[3][0].copy()
    image[1] *= 1e-3                          # angle 1 never holds the max
    raw = m.heatmap(data[0][0], data[1][0], data[2][0], image, raw=True)
    assert raw[1].max() < 1e-15 * raw.max()


def test_target_norm_fit():
    raw = np.random.default_rng(0).standard_normal((1, 50, 6)) * 3 + 7
    raw[0, :, 2] = 1.0
    tn = TargetNorm.fit(raw)
    np.testing.assert_allclose(tn.mean[0], raw[0].mean(0))
    assert tn.std[0, 2] == 1.0


def test_full_pipeline_grad_check_trainable():
    assert gradcheck.check_full() < 1e-4


def test_variant_errors():
    with pytest.raises(ValueError):
        variant_config("nope", gradcheck.tiny_model_config())
    with pytest.raises(ValueError):
        variant_loss("nope", obj.LossConfig())
    assert variant_loss("no_text_loss", obj.LossConfig()).text_weight == 0.0
    assert replace(variant_config("plain_decoder", gradcheck.tiny_model_config())).attention == "softmax"
