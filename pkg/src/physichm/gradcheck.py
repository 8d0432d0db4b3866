"""Finite-difference checks of the backward pass, per building block and end to end.

Every check builds a small float64 graph, reduces its output to a scalar with
a fixed random projection (so no coordinate cancels by symmetry) and compares
the analytic gradient of every trainable leaf against central differences.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import decoder as dec
from . import encoders as enc
from . import objective as obj
from . import phm
from .autodiff import CompGraph
from .model import ModelConfig, build_model, variant_config

F64 = np.float64


def _readout(out: ad.Var, rng: np.random.Generator) -> ad.Var:
    return ad.sum_(out * rng.standard_normal(out.shape))


def _worst(graph: CompGraph, bindings, params, eps: float, seed: int = 0) -> float:
    return max(ad.grad_check(graph, bindings, "loss", name, eps=eps, seed=seed) for name in params)


def _single(build_params, forward, inputs: dict[str, np.ndarray], eps: float, seed: int) -> float:
    """Check one block: ``forward(params, inputs)`` -> Var, read out to a scalar."""
    rng = np.random.default_rng(seed)
    params = {k: np.asarray(v, F64) for k, v in build_params(rng).items()}

    def build(ctx):
        return {"loss": _readout(forward(ctx.params, ctx.inputs), np.random.default_rng([seed, 1]))}

    g = CompGraph(build, params, tuple(inputs))
    return _worst(g, inputs, params, eps)


def check_film(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng([seed, 2])
    x = {"f": rng.standard_normal((2, 5, 6)), "h": rng.standard_normal((2, 4))}

    def fwd(p, x):
        gamma, beta = phm.project_affine(x["h"], p)
        return phm.film_modulate(x["f"], gamma, beta)

    return _single(lambda r: phm.init_head(r, 4, 6, scale=1.0, dtype=F64), fwd, x, eps, seed)


def check_ssm(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng([seed, 2])
    x = {"x": rng.standard_normal((2, 12, 3))}
    # large enough steps that the decay rates shape the output visibly
    return _single(lambda r: phm.init_ssm(r, 3, 5, 4, dt_range=(0.05, 0.5), dtype=F64),
                   lambda p, x: phm.ssm_encode(x["x"], p), x, eps, seed)


def check_linear_attention(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng([seed, 2])
    x = {"t": rng.standard_normal((2, 6, 4))}

    def params(r):
        return {n: r.standard_normal((4, 4)) for n in ("W_Q", "W_K", "W_V")}

    return _single(params, lambda p, x: dec.linear_attention(x["t"] @ p["W_Q"], x["t"] @ p["W_K"],
                                                             x["t"] @ p["W_V"]), x, eps, seed)


def check_cross_attention(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng([seed, 2])
    x = {"v": rng.standard_normal((2, 5, 8)), "a": rng.standard_normal((2, 3, 8))}

    def params(r):
        p = enc.init_cross_attention(r, 8, F64)
        p["gate"] = r.standard_normal(8)
        return p

    return _single(params, lambda p, x: enc.cross_attention(x["v"], x["a"], p, heads=2), x, eps, seed)


def check_gem(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng([seed, 2])
    x = {"x": np.abs(rng.standard_normal((2, 7, 5))) + 0.1}

    def params(r):
        return {"gem_raw": np.array(r.uniform(-1.0, 2.0))}

    return _single(params, lambda p, x: enc.gem_pool(x["x"], enc.gem_exponent(p["gem_raw"])), x, eps, seed)


def check_result_encoder(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng([seed, 2])
    x = {"img": np.abs(rng.standard_normal((2, 3, 4, 5))) + 0.1}

    def params(r):
        p = enc.init_result_encoder(r, 5, 6, 4, dtype=F64)
        p["gate"] = r.standard_normal(5)
        return p

    return _single(params, lambda p, x: enc.result_encode(x["img"], p), x, eps, seed)


def check_decoder(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng([seed, 2])
    x = {"t": rng.standard_normal((2, 5, 6))}
    return _single(lambda r: dec.init_decoder(r, 6, 2, 4, dtype=F64),
                   lambda p, x: dec.decode(x["t"], p), x, eps, seed)


def check_loss(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng([seed, 2])
    x = {"z": rng.standard_normal((3, 10))}
    anchor = rng.standard_normal(5)
    anchor /= np.linalg.norm(anchor)
    cfg = obj.LossConfig(k=4)

    def params(r):
        return {"z_hat": r.standard_normal((3, 10)), "W_text": r.standard_normal((10, 5))}

    def fwd(p, x):
        return obj.total_loss(x["z"], p["z_hat"], p["W_text"], anchor, cfg) + obj.anomaly_score(x["z"], p["z_hat"], cfg)

    return _single(params, fwd, x, eps, seed)


def tiny_model_config(**overrides) -> ModelConfig:
    """Reduced sizes for the end-to-end check; dt is raised so A_log gradients are not vanishingly small."""
    base = ModelConfig(n_bins=16, n_channels=6, n_video=4, n_audio=3, n_image=4, n_angles=3,
                       video_dim=6, audio_dim=5, image_dim=6, width=8, latent=64, d_state=4,
                       heads=2, hidden=16, text_dim=8, dt_range=(0.05, 0.5))
    return replace(base, **overrides)


def check_full(seed: int = 0, eps: float = 1e-5, variant: str = "full", every_param: bool = False) -> float:
    """Whole pipeline on a 4-sample batch with frozen bottleneck noise.

    By default only the trainable set is probed: the target encoder sits behind
    a stop-gradient.  ``every_param`` lets gradients reach the target so every
    leaf is checked.
    """
    cfg = variant_config(variant, tiny_model_config(target_grad=every_param))
    rng = np.random.default_rng(seed)
    b = 4
    sensor = rng.standard_normal((b, cfg.n_bins, cfg.n_channels)) * 10 + 100
    video = rng.standard_normal((b, cfg.n_video, cfg.video_dim))
    audio = rng.standard_normal((b, cfg.n_audio, cfg.audio_dim))
    image = np.abs(rng.standard_normal((b, cfg.n_angles, cfg.n_image, cfg.image_dim))) + 0.1
    anchor = rng.standard_normal(cfg.text_dim)
    anchor /= np.linalg.norm(anchor)
    m = build_model(cfg, obj.LossConfig(k=8), sensor, anchor, seed=seed + 1, dtype=F64)
    g = m.graph(training=True)
    names = list(m.params) if every_param else m.trainable()
    return _worst(g, m.bindings(sensor, video, audio, image), names, eps, seed=seed + 3)


PRIMITIVES: dict[str, Callable[..., float]] = {
    "film": check_film,
    "ssm": check_ssm,
    "linear_attention": check_linear_attention,
    "cross_attention": check_cross_attention,
    "gem": check_gem,
    "result_encoder": check_result_encoder,
    "decoder": check_decoder,
    "loss": check_loss,
}
MODULES = tuple(PRIMITIVES) + ("full",)


def run(module: str | None = None, seeds=range(10)) -> dict[str, float]:
    """Worst relative error per module; primitives over ``seeds``, the pipeline once."""
    names = MODULES if module is None else (module,)
    out = {}
    for name in names:
        if name == "full":
            out[name] = max(check_full(), check_full(every_param=True))
        elif name in PRIMITIVES:
            out[name] = max(PRIMITIVES[name](seed=s) for s in seeds)
        else:
            raise ValueError(f"unknown module '{name}' (choose from {', '.join(MODULES)})")
    return out
