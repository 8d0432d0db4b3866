"""Noisy bottleneck and the kernelized linear-attention decoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .encoders import gem_exponent, gem_exponent_raw, gem_pool


@dataclass(frozen=True)
class BottleneckConfig:
    mask_prob: float = 0.2
    noise_std: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.mask_prob < 1.0:
            raise ValueError("mask_prob must lie in [0, 1)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def noisy_bottleneck(z, cfg: BottleneckConfig, rng: np.random.Generator,
                     training: bool = True) -> Var:
    """Inverted-dropout Bernoulli mask plus Gaussian noise; identity at eval."""
    z = ad.as_var(z)
    if not training:
        return z
    keep = 1.0 - cfg.mask_prob
    out = z
    if cfg.mask_prob > 0:
        mask = (rng.random(z.shape) < keep).astype(z.dtype) / np.asarray(keep, dtype=z.dtype)
        out = out * mask
    if cfg.noise_std > 0:
        out = out + (cfg.noise_std * rng.standard_normal(z.shape)).astype(z.dtype)
    return out


def feature_map(x) -> Var:
    """``elu(x) + 1``, written as ``exp(min(x, 0)) + max(x, 0)`` so it stays > 0 for very negative x."""
    x = ad.as_var(x)
    pos = ad.clamp_min(x, 0.0)
    return ad.exp(x - pos) + pos


def linear_attention(q, k, v) -> Var:
    """``phi(Q) (phi(K)^T V) / (phi(Q) sum_j phi(K_j))`` with ``phi = elu + 1``.

    Cost is linear in the number of keys: the key/value summary is a
    (d x d_v) matrix built once and shared by every query.
    """
    fq, fk = feature_map(q), feature_map(k)
    v = ad.as_var(v, fq)
    kv = ad.swapaxes(fk, -1, -2) @ v
    k_sum = ad.sum_(fk, axis=-2, keepdims=True)
    den = ad.sum_(fq * k_sum, axis=-1, keepdims=True)
    if np.any(den.value < 1e-12):
        raise FloatingPointError("linear attention normalizer underflow")
    return (fq @ kv) / den


def softmax_attention(q, k, v) -> Var:
    q = ad.as_var(q)
    scores = (q @ ad.swapaxes(ad.as_var(k, q), -1, -2)) * (1.0 / np.sqrt(q.shape[-1]))
    return ad.softmax(scores, axis=-1) @ ad.as_var(v, q)


def init_decoder(rng, width: int, n_blocks: int, latent: int, ff_mult: int = 2,
                 gem_p: float = 3.0, dtype=np.float32) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {}
    s = 1.0 / np.sqrt(width)
    for i in range(n_blocks):
        for name in ("W_Q", "W_K", "W_V"):
            p[f"{i}.{name}"] = rng.standard_normal((width, width)) * s
        p[f"{i}.W_O"] = rng.standard_normal((width, width)) * s * 0.5
        p[f"{i}.W1"] = rng.standard_normal((width, ff_mult * width)) * s
        p[f"{i}.b1"] = np.zeros(ff_mult * width)
        p[f"{i}.W2"] = rng.standard_normal((ff_mult * width, width)) / np.sqrt(ff_mult * width) * 0.5
        p[f"{i}.b2"] = np.zeros(width)
    p["gem_raw"] = np.array(gem_exponent_raw(gem_p))
    p["W_head"] = rng.standard_normal((width, latent)) * s
    p["b_head"] = np.zeros(latent)
    return {k: np.asarray(v, dtype=dtype) for k, v in p.items()}


def n_blocks(p: Mapping[str, object]) -> int:
    return len({k.split(".")[0] for k in p if k[0].isdigit()})


def decode(tokens, p: Mapping[str, Var], attention: str = "linear") -> Var:
    """Residual attention + feed-forward blocks, then GeM of phi(tokens) and a linear head."""
    attend = {"linear": linear_attention, "softmax": softmax_attention}[attention]
    t = ad.as_var(tokens, p["W_head"])
    for i in range(n_blocks(p)):
        q, k, v = t @ p[f"{i}.W_Q"], t @ p[f"{i}.W_K"], t @ p[f"{i}.W_V"]
        t = t + attend(q, k, v) @ p[f"{i}.W_O"]
        ff = ad.linear(ad.elu(ad.linear(t, p[f"{i}.W1"], p[f"{i}.b1"])), p[f"{i}.W2"], p[f"{i}.b2"])
        t = t + ff
    # phi keeps every feature strictly positive, so no feature dies at the GeM clamp
    pooled = gem_pool(feature_map(t), gem_exponent(p["gem_raw"]), axis=-2)
    return ad.linear(pooled, p["W_head"], p["b_head"])
