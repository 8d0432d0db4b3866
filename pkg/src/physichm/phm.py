"""Sensor-governed modulation: selective state-space encoder and FiLM."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Var


def init_ssm(rng: np.random.Generator, n_channels: int, d_model: int, d_state: int,
             dt_range=(1e-3, 1e-1), dtype=np.float32) -> dict[str, np.ndarray]:
    dt = np.exp(rng.uniform(np.log(dt_range[0]), np.log(dt_range[1]), d_model))
    p = {
        "W_in": rng.standard_normal((n_channels, d_model)) / np.sqrt(n_channels),
        "W_dt": rng.standard_normal((d_model, d_model)) / np.sqrt(d_model) * 0.1,
        "b_dt": dt + np.log(-np.expm1(-dt)),  # inverse softplus
        "W_B": rng.standard_normal((d_model, d_state)) / np.sqrt(d_model),
        "W_C": rng.standard_normal((d_model, d_state)) / np.sqrt(d_model),
        "A_log": np.log(np.tile(np.arange(1, d_state + 1, dtype=float), (d_model, 1))),
        "W_out": rng.standard_normal((d_model, d_model)) / np.sqrt(d_model),
    }
    return {k: v.astype(dtype) for k, v in p.items()}


def ssm_encode(x, p: Mapping[str, Var]) -> Var:
    """Selective scan over a (batch, T, C) sensor series; returns the final readout.

    Per step: ``h_t = exp(dt_t * A) * h_{t-1} + dt_t * B_t * x_t`` with
    input-dependent ``dt, B, C`` and ``A = -exp(A_log) < 0``.  Only the last
    state is read out, so the recurrence is evaluated in closed form as a sum
    of inputs weighted by exclusive suffix sums of the log-decays.
    """
    x = ad.as_var(x, p["W_in"])
    squeeze = x.ndim == 2
    if squeeze:
        x = ad.expand_dims(x, 0)
    batch, T, _ = x.shape
    d, n = p["A_log"].shape

    u = x @ p["W_in"]                                         # (B, T, d)
    dt = ad.softplus(u @ p["W_dt"] + p["b_dt"])               # (B, T, d)
    b_sel = u @ p["W_B"]                                      # (B, T, n)
    c_last = (u[:, T - 1, :]) @ p["W_C"]                      # (B, n)
    a = -ad.exp(p["A_log"])                                   # (d, n)

    # log-decay dt_s * A factorizes, so the suffix sum only runs over dt
    suffix = ad.cumsum(dt, axis=1, reverse=True)
    tail = np.zeros((batch, 1, d), dtype=x.dtype)
    exclusive = ad.concat([suffix[:, 1:], tail], axis=1)     # sum_{s>t} dt_s
    weight = ad.exp(ad.reshape(exclusive, (batch, T, d, 1)) * a)
    h_last = ad.einsum("btin,bti,btn->bin", weight, dt * u, b_sel)
    y_last = ad.sum_(h_last * ad.reshape(c_last, (batch, 1, n)), axis=-1)
    h_s = y_last @ p["W_out"]
    return h_s[0] if squeeze else h_s


def ssm_states(x: np.ndarray, p: Mapping[str, np.ndarray]) -> np.ndarray:
    """Step-by-step recurrence for one (T, C) series; returns every h_t as (T, d, n)."""
    u = x @ p["W_in"]
    dt = np.logaddexp(0.0, u @ p["W_dt"] + p["b_dt"])
    b_sel = u @ p["W_B"]
    a = -np.exp(p["A_log"])
    h = np.zeros_like(a)
    out = []
    for t in range(len(x)):
        h = np.exp(dt[t][:, None] * a) * h + (dt[t] * u[t])[:, None] * b_sel[t][None, :]
        out.append(h)
    return np.stack(out)


def init_head(rng: np.random.Generator, d_model: int, width: int, scale: float = 0.1,
              dtype=np.float32) -> dict[str, np.ndarray]:
    p = {
        "W_gamma": scale * rng.standard_normal((d_model, width)) / np.sqrt(d_model),
        "b_gamma": np.zeros(width),
        "W_beta": scale * rng.standard_normal((d_model, width)) / np.sqrt(d_model),
        "b_beta": np.zeros(width),
    }
    return {k: v.astype(dtype) for k, v in p.items()}


def project_affine(h_s, head: Mapping[str, Var]) -> tuple[Var, Var]:
    gamma = ad.linear(h_s, head["W_gamma"], head["b_gamma"])
    beta = ad.linear(h_s, head["W_beta"], head["b_beta"])
    return gamma, beta


def film_modulate(f, gamma, beta) -> Var:
    """``f * (1 + gamma) + beta`` with gamma, beta broadcast over tokens."""
    f = ad.as_var(f)
    gamma, beta = ad.as_var(gamma, f), ad.as_var(beta, f)
    if gamma.shape[-1] != f.shape[-1] or beta.shape[-1] != f.shape[-1]:
        raise ValueError(f"width mismatch: features {f.shape[-1]}, "
                         f"gamma {gamma.shape[-1]}, beta {beta.shape[-1]}")
    if gamma.ndim == f.ndim - 1:
        gamma, beta = ad.expand_dims(gamma, -2), ad.expand_dims(beta, -2)
    return f * (1.0 + gamma) + beta
