"""Process and result encoders."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Var

GEM_FLOOR = 1e-6


def _dense(rng, n_in, n_out):
    return rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)


def gem_exponent_raw(p: float) -> float:
    """Raw parameter whose ``1 + softplus`` equals ``p``."""
    return float(np.log(np.expm1(p - 1.0)))


def gem_exponent(raw) -> Var:
    return 1.0 + ad.softplus(raw)


def init_cross_attention(rng, width: int, dtype=np.float32) -> dict[str, np.ndarray]:
    p = {name: _dense(rng, width, width) for name in ("W_Q", "W_K", "W_V", "W_O")}
    p["gate"] = np.zeros(width)
    return {k: v.astype(dtype) for k, v in p.items()}


def _split_heads(x: Var, heads: int) -> Var:
    b, n, d = x.shape
    return ad.transpose(ad.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Var) -> Var:
    b, h, n, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def cross_attention(f_video, f_audio, p: Mapping[str, Var], heads: int = 4,
                    return_weights: bool = False):
    """Video tokens query audio tokens; sigmoid-gated residual on the output.

    ``out = f_video + sigmoid(gate) * MultiHead(Q=f_video, K=V=f_audio) @ W_O``.
    """
    f_video = ad.as_var(f_video, p["W_Q"])
    f_audio = ad.as_var(f_audio, p["W_Q"])
    squeeze = f_video.ndim == 2
    if squeeze:
        f_video, f_audio = ad.expand_dims(f_video, 0), ad.expand_dims(f_audio, 0)
    width = f_video.shape[-1]
    if width % heads:
        raise ValueError(f"{heads} heads do not divide width {width}")
    if f_audio.shape[-1] != width:
        raise ValueError("video and audio widths differ")
    q = _split_heads(f_video @ p["W_Q"], heads)
    k = _split_heads(f_audio @ p["W_K"], heads)
    v = _split_heads(f_audio @ p["W_V"], heads)
    scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(width // heads))
    weights = ad.softmax(scores, axis=-1)
    attn = _merge_heads(weights @ v) @ p["W_O"]
    out = f_video + ad.sigmoid(p["gate"]) * attn
    if squeeze:
        out, weights = out[0], weights[0]
    return (out, weights) if return_weights else out


def init_mlp(rng, n_in: int, hidden: int, n_out: int, dtype=np.float32) -> dict[str, np.ndarray]:
    p = {
        "W1": _dense(rng, n_in, hidden), "b1": np.zeros(hidden),
        "W2": _dense(rng, hidden, n_out), "b2": np.zeros(n_out),
    }
    return {k: v.astype(dtype) for k, v in p.items()}


def mlp(x, p: Mapping[str, Var]) -> Var:
    return ad.linear(ad.elu(ad.linear(x, p["W1"], p["b1"])), p["W2"], p["b2"])


def pool_process(tokens, p: Mapping[str, Var]) -> tuple[Var, Var]:
    """Mean-pool process tokens and lift to the shared latent width.

    Returns ``(Z_p, tokens)``; the unpooled tokens feed the decoder.
    """
    tokens = ad.as_var(tokens, p["W1"])
    return mlp(ad.mean(tokens, axis=-2), p), tokens


def gem_pool(x, p, axis: int = -2) -> Var:
    """Generalized mean ``mean(x^p)^(1/p)`` over ``axis`` after clamping at 1e-6."""
    x = ad.as_var(x)
    p_val = p.value if isinstance(p, Var) else p
    if np.any(np.asarray(p_val) < 1.0):
        raise ValueError("GeM exponent must be >= 1")
    clamped = ad.clamp_min(x, GEM_FLOOR)
    if not isinstance(p, Var) and float(p) == 1.0:
        return ad.mean(clamped, axis=axis)
    return ad.power(ad.mean(ad.power(clamped, p), axis=axis), 1.0 / p)


def init_result_encoder(rng, width: int, hidden: int, latent: int, gem_p: float = 3.0,
                        dtype=np.float32) -> dict[str, np.ndarray]:
    p = {"gem_raw": np.array(gem_exponent_raw(gem_p)), "gate": np.zeros(width)}
    p.update(init_mlp(rng, width, hidden, latent, dtype))
    return {k: np.asarray(v, dtype=dtype) for k, v in p.items()}


def angle_vectors(f_image, p: Mapping[str, Var]) -> Var:
    """GeM over the tokens of each angle: (B, M, N, D) -> (B, M, D)."""
    return gem_pool(f_image, gem_exponent(p["gem_raw"]), axis=-2)


def gated_angle_aggregate(f_image, p: Mapping[str, Var], return_vectors: bool = False):
    """Blend GeM and max across angles with a learnable per-feature gate."""
    f_image = ad.as_var(f_image, p["gate"])
    v = angle_vectors(f_image, p)
    gem = gem_pool(v, gem_exponent(p["gem_raw"]), axis=-2)
    peak = ad.max_(v, axis=-2)
    g = ad.sigmoid(p["gate"])
    out = g * gem + (1.0 - g) * peak
    return (out, v) if return_vectors else out


def result_encode(f_image, p: Mapping[str, Var], return_vectors: bool = False):
    agg, v = gated_angle_aggregate(f_image, p, return_vectors=True)
    z_r = mlp(agg, p)
    return (z_r, v) if return_vectors else z_r
