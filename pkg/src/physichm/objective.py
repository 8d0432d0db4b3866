"""Training objective, consistency score and saliency post-processing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .autodiff import Var


@dataclass(frozen=True)
class LossConfig:
    text_weight: float = 0.1      # lambda
    topk_weight: float = 0.5      # eta, score only
    k: int = 32
    smooth_l1_delta: float = 1.0
    recon_cos_weight: float = 1.0
    recon_topk_weight: float = 1.0
    heatmap_sigma: float = 2.0
    heatmap_res: int = 64

    def __post_init__(self):
        if not 1 <= self.k <= 512:
            raise ValueError("k must lie in [1, 512]")
        if self.text_weight < 0 or self.topk_weight < 0:
            raise ValueError("loss weights must be non-negative")


def _topk_indices(x: np.ndarray, k: int) -> np.ndarray:
    if k > x.shape[-1]:
        raise ValueError(f"k={k} exceeds latent width {x.shape[-1]}")
    # selected coordinates keep their original order, so k = width reduces exactly like a plain mean
    return np.sort(np.argsort(-x, axis=-1, kind="stable")[..., :k], axis=-1)


def cosine_distance(z, z_hat) -> Var:
    return 1.0 - ad.cosine_similarity(z, z_hat)


def topk_smooth_l1(z, z_hat, k: int, delta: float = 1.0) -> Var:
    diff = ad.sub(z, z_hat)
    idx = _topk_indices(np.abs(diff.value), k)
    return ad.mean(ad.smooth_l1(ad.take_along_axis(diff, idx, -1), delta), axis=-1)


def topk_abs(z, z_hat, k: int) -> Var:
    diff = ad.sub(z, z_hat)
    idx = _topk_indices(np.abs(diff.value), k)
    return ad.mean(ad.abs_(ad.take_along_axis(diff, idx, -1)), axis=-1)


def recon_loss(z, z_hat, cfg: LossConfig) -> Var:
    """Cosine distance plus Smooth-L1 over the k largest coordinate errors."""
    return (cfg.recon_cos_weight * cosine_distance(z, z_hat)
            + cfg.recon_topk_weight * topk_smooth_l1(z, z_hat, cfg.k, cfg.smooth_l1_delta))


def text_loss(z_hat, w_text, e_text) -> Var:
    """Cosine distance between the projected prediction and the frozen anchor."""
    e_text = np.asarray(e_text)
    if abs(np.linalg.norm(e_text) - 1.0) > 1e-6:
        raise ValueError("text anchor must be a unit vector")
    z_hat = ad.as_var(z_hat)
    flat = z_hat.ndim == 1
    proj = ad.matmul(ad.expand_dims(z_hat, 0) if flat else z_hat, w_text)
    if flat:
        proj = proj[0]
    return 1.0 - ad.cosine_similarity(proj, e_text.astype(proj.dtype))


def total_loss(z, z_hat, w_text, e_text, cfg: LossConfig) -> Var:
    loss = recon_loss(z, z_hat, cfg)
    if cfg.text_weight:
        loss = loss + cfg.text_weight * text_loss(z_hat, w_text, e_text)
    return loss


def anomaly_score(z, z_hat, cfg: LossConfig) -> Var:
    """``1 - cos(z, z_hat) + eta * mean(TopK(|z - z_hat|))``; higher is more anomalous."""
    return cosine_distance(z, z_hat) + cfg.topk_weight * topk_abs(z, z_hat, cfg.k)


def saliency_maps(token_grads: np.ndarray, grid: tuple[int, int], out_res: int,
                  sigma: float) -> np.ndarray:
    """Turn per-token gradients (M, N, D) into M normalized out_res x out_res maps."""
    m, n, _ = token_grads.shape
    gh, gw = grid
    if gh * gw != n:
        raise ValueError(f"{n} tokens do not form a {gh}x{gw} grid")
    mag = np.linalg.norm(token_grads, axis=-1).reshape(m, gh, gw)
    maps = []
    for g in mag:
        up = cell_upsample(g, out_res)
        if sigma > 0:
            up = ndimage.gaussian_filter(up, sigma, mode="nearest")
        lo, hi = up.min(), up.max()
        maps.append((up - lo) / (hi - lo) if hi > lo else np.zeros_like(up))
    return np.stack(maps)


def cell_upsample(g: np.ndarray, out_res: int) -> np.ndarray:
    """Bilinear upsample with cell-centred sampling (token i covers its own block)."""
    gh, gw = g.shape
    return ndimage.zoom(g, (out_res / gh, out_res / gw), order=1, mode="nearest", grid_mode=True)


def token_grid(n_tokens: int) -> tuple[int, int]:
    side = int(round(np.sqrt(n_tokens)))
    if side * side != n_tokens:
        raise ValueError(f"{n_tokens} image tokens are not a perfect square grid")
    return side, side


def token_cell(token: int, grid: tuple[int, int], out_res: int) -> tuple[slice, slice]:
    """Pixel block of ``token`` in an out_res x out_res map."""
    gh, gw = grid
    r, c = divmod(token, gw)
    return (slice(r * out_res // gh, (r + 1) * out_res // gh),
            slice(c * out_res // gw, (c + 1) * out_res // gw))
