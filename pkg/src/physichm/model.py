"""Full pipeline assembly and ablation topologies."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import autodiff as ad
from . import decoder as dec
from . import encoders as enc
from . import objective as obj
from . import phm
from .autodiff import CompGraph, GraphContext, Var

INPUTS = ("sensor", "video", "audio", "image")

VARIANTS = ("full", "reverse_mapping", "plain_decoder", "no_text_loss", "bidirectional",
            "symmetric_fusion", "image", "image+video", "image+video+audio")


@dataclass(frozen=True)
class ModelConfig:
    n_bins: int = 256
    n_channels: int = 6
    n_video: int = 16
    n_audio: int = 16
    n_image: int = 16
    n_angles: int = 5
    video_dim: int = 64
    audio_dim: int = 64
    image_dim: int = 64
    width: int = 64                 # D
    latent: int = 512               # d
    d_state: int = 16
    dt_range: tuple[float, float] = (1e-3, 1e-1)
    heads: int = 4
    hidden: int = 256
    decoder_blocks: int = 2
    text_dim: int = 64
    bottleneck: dec.BottleneckConfig = field(default_factory=dec.BottleneckConfig)
    # topology switches, set by the ablation variant
    use_video: bool = True
    use_audio: bool = True
    sensor_mode: str = "phm"        # phm | concat | none
    direction: str = "forward"      # forward | reverse | both
    attention: str = "linear"       # linear | softmax
    target_grad: bool = False       # let the reconstruction loss train the target encoder

    @property
    def has_process(self) -> bool:
        return self.use_video or self.use_audio or self.sensor_mode != "none"


def variant_config(variant: str, base: ModelConfig) -> ModelConfig:
    """Graph topology for an ablation tag."""
    if variant in ("full", "no_text_loss"):
        return base
    if variant == "reverse_mapping":
        return replace(base, direction="reverse")
    if variant == "bidirectional":
        return replace(base, direction="both")
    if variant == "plain_decoder":
        return replace(base, attention="softmax", bottleneck=dec.BottleneckConfig(0.0, 0.0))
    if variant == "symmetric_fusion":
        return replace(base, sensor_mode="concat")
    if variant == "image":
        return replace(base, use_video=False, use_audio=False, sensor_mode="none")
    if variant == "image+video":
        return replace(base, use_audio=False, sensor_mode="none")
    if variant == "image+video+audio":
        return replace(base, sensor_mode="none")
    raise ValueError(f"unknown variant '{variant}'")


def variant_loss(variant: str, base: obj.LossConfig) -> obj.LossConfig:
    if variant == "no_text_loss":
        return replace(base, text_weight=0.0)
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant '{variant}'")
    return base


def _prefixed(prefix: str, p: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in p.items()}


def init_params(cfg: ModelConfig, seed: int = 42, dtype=np.float32) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    D = cfg.width
    p: dict[str, np.ndarray] = {}

    def dense(n_in, n_out):
        return (rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)).astype(dtype)

    if cfg.use_video:
        p["video_in.W"], p["video_in.b"] = dense(cfg.video_dim, D), np.zeros(D, dtype)
        p["video_in.pos"] = (0.1 * rng.standard_normal((cfg.n_video, D))).astype(dtype)
    if cfg.use_audio:
        p["audio_in.W"], p["audio_in.b"] = dense(cfg.audio_dim, D), np.zeros(D, dtype)
        p["audio_in.pos"] = (0.1 * rng.standard_normal((cfg.n_audio, D))).astype(dtype)
    if cfg.sensor_mode in ("phm", "concat"):
        p.update(_prefixed("ssm", phm.init_ssm(rng, cfg.n_channels, D, cfg.d_state,
                                                   dt_range=cfg.dt_range, dtype=dtype)))
    if cfg.sensor_mode == "phm":
        p.update(_prefixed("film", phm.init_head(rng, D, D, dtype=dtype)))
    if cfg.use_video and cfg.use_audio:
        p.update(_prefixed("xattn", enc.init_cross_attention(rng, D, dtype)))
    if not (cfg.use_video or cfg.use_audio):
        p["const_tokens"] = (0.5 * rng.standard_normal((cfg.n_video, D))).astype(dtype)
    p.update(_prefixed("result", enc.init_result_encoder(rng, cfg.image_dim, cfg.hidden, cfg.latent,
                                                         dtype=dtype)))
    if cfg.direction in ("forward", "both"):
        p.update(_prefixed("dec", dec.init_decoder(rng, D, cfg.decoder_blocks, cfg.latent, dtype=dtype)))
    if cfg.direction in ("reverse", "both"):
        p.update(_prefixed("process_pool", enc.init_mlp(rng, D, cfg.hidden, cfg.latent, dtype)))
        p["result_tok.W"], p["result_tok.b"] = dense(cfg.image_dim, D), np.zeros(D, dtype)
        p.update(_prefixed("rdec", dec.init_decoder(rng, D, cfg.decoder_blocks, cfg.latent, dtype=dtype)))
    p["text.W"] = dense(cfg.latent, cfg.text_dim)
    return p


def sub(params: Mapping[str, Var], prefix: str) -> dict[str, Var]:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix + ".")}


@dataclass
class Normalizer:
    """Per-channel z-scoring of raw sensor series (training-split statistics)."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, sensor_raw: np.ndarray) -> "Normalizer":
        flat = np.asarray(sensor_raw, dtype=np.float64).reshape(-1, sensor_raw.shape[-1])
        std = flat.std(axis=0)
        return cls(flat.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def process_tokens(ctx: GraphContext, cfg: ModelConfig) -> Var:
    """Sensor-modulated, cross-attended process token sequence (B, N, D)."""
    p, x = ctx.params, ctx.inputs
    batch = x["image"].shape[0]
    gamma = beta = h_s = None
    if cfg.sensor_mode in ("phm", "concat"):
        h_s = phm.ssm_encode(x["sensor"], sub(p, "ssm"))
    if cfg.sensor_mode == "phm":
        gamma, beta = phm.project_affine(h_s, sub(p, "film"))

    def modality(name, key):
        # token order is time order; the stand-in features carry no position of their own
        f = ad.linear(x[name], p[f"{key}.W"], p[f"{key}.b"]) + p[f"{key}.pos"]
        return f if gamma is None else phm.film_modulate(f, gamma, beta)

    if cfg.use_video and cfg.use_audio:
        tokens = enc.cross_attention(modality("video", "video_in"), modality("audio", "audio_in"),
                                     sub(p, "xattn"), heads=cfg.heads)
    elif cfg.use_video:
        tokens = modality("video", "video_in")
    elif cfg.use_audio:
        tokens = modality("audio", "audio_in")
    else:
        const = p["const_tokens"]
        tokens = ad.broadcast_to(ad.expand_dims(const, 0), (batch,) + const.shape)
    if cfg.sensor_mode == "concat":
        # same sensor embedding as PHM, appended as one more token instead of modulating
        tokens = ad.concat([tokens, ad.expand_dims(h_s, 1)], axis=1)
    return tokens


PROCESS_PREFIXES = ("video_in.", "audio_in.", "ssm.", "film.", "xattn.",
                    "const_tokens", "process_pool.")


@dataclass
class TargetNorm:
    """Fixed per-dimension standardization of the targets, one row per direction.

    Without it the targets share a large common offset and the cosine term
    barely sees the per-sample variation the decoder has to predict.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, raw_targets: np.ndarray) -> "TargetNorm":
        """``raw_targets``: (directions, samples, latent)."""
        raw = np.asarray(raw_targets, dtype=np.float64)
        std = raw.std(axis=1)
        floor = 1e-6 * max(float(std.max()), 1e-12)
        return cls(raw.mean(axis=1), np.where(std > floor, std, 1.0))

    @classmethod
    def identity(cls, directions: int, latent: int) -> "TargetNorm":
        return cls(np.zeros((directions, latent)), np.ones((directions, latent)))


def n_directions(cfg: ModelConfig) -> int:
    return 2 if cfg.direction == "both" else 1


def build_outputs(ctx: GraphContext, cfg: ModelConfig, loss_cfg: obj.LossConfig,
                  text_anchor: np.ndarray, target_norm: TargetNorm | None = None) -> dict[str, Var]:
    p = ctx.params
    tokens = process_tokens(ctx, cfg)
    z_r, angle_vecs = enc.result_encode(ctx.inputs["image"], sub(p, "result"), return_vectors=True)
    pairs = []
    if cfg.direction in ("forward", "both"):
        noisy = dec.noisy_bottleneck(tokens, cfg.bottleneck, ctx.rng, ctx.training)
        pairs.append((z_r, dec.decode(noisy, sub(p, "dec"), cfg.attention)))
    if cfg.direction in ("reverse", "both"):
        z_p, _ = enc.pool_process(tokens, sub(p, "process_pool"))
        r_tokens = ad.linear(angle_vecs, p["result_tok.W"], p["result_tok.b"])
        noisy = dec.noisy_bottleneck(r_tokens, cfg.bottleneck, ctx.rng, ctx.training)
        pairs.append((z_p, dec.decode(noisy, sub(p, "rdec"), cfg.attention)))

    outputs: dict[str, Var] = {}
    per_sample = score = consistency = None
    for i, (target, pred) in enumerate(pairs):
        outputs[f"raw_target_{i}"] = target
        if target_norm is not None:
            dt = target.dtype
            target = (target - target_norm.mean[i].astype(dt)) / target_norm.std[i].astype(dt)
        if i == 0:
            outputs["target"], outputs["prediction"] = target, pred
        # without the stop-gradient a constant target is a trivial minimizer
        fit = target if cfg.target_grad else ad.stop_gradient(target)
        l = obj.total_loss(fit, pred, p["text.W"], text_anchor, loss_cfg)
        s = obj.anomaly_score(target, pred, loss_cfg)
        c = obj.cosine_distance(target, pred)
        per_sample = l if per_sample is None else per_sample + l
        score = s if score is None else score + s
        consistency = c if consistency is None else consistency + c
    outputs.update(loss=ad.mean(per_sample), sample_loss=per_sample, score=score,
                   cos_score=ad.sum_(consistency))
    return outputs


@dataclass
class PhysicHM:
    cfg: ModelConfig
    loss_cfg: obj.LossConfig
    params: dict[str, np.ndarray]
    normalizer: Normalizer
    text_anchor: np.ndarray
    target_norm: TargetNorm | None = None

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    @property
    def frozen_target(self) -> bool:
        """True when no loss gradient reaches the target encoder, so its statistics hold."""
        return not self.cfg.target_grad and self.cfg.direction != "both"

    def trainable(self) -> list[str]:
        """Parameters that receive a training gradient; a frozen target encoder is excluded."""
        if not self.frozen_target:
            return list(self.params)
        if self.cfg.direction == "forward":
            return [k for k in self.params if not k.startswith("result.")]
        return [k for k in self.params if not k.startswith(PROCESS_PREFIXES)]

    def graph(self, training: bool) -> CompGraph:
        anchor, norm = self.text_anchor, self.target_norm
        cfg, loss_cfg = self.cfg, self.loss_cfg
        return CompGraph(lambda ctx: build_outputs(ctx, cfg, loss_cfg, anchor, norm),
                         self.params, INPUTS, training=training)

    def fit_target_norm(self, data, batch_size: int = 32) -> TargetNorm:
        """Standardize each target dimension with statistics of ``data`` (normal samples)."""
        names = tuple(f"raw_target_{i}" for i in range(n_directions(self.cfg)))
        raw = self.evaluate_batches(data, names, batch_size)
        self.target_norm = TargetNorm.fit(np.stack([raw[n] for n in names]))
        return self.target_norm

    def bindings(self, sensor_raw, video, audio, image) -> dict[str, np.ndarray]:
        dt = self.dtype
        return {
            "sensor": self.normalizer(sensor_raw).astype(dt),
            "video": np.asarray(video, dtype=dt),
            "audio": np.asarray(audio, dtype=dt),
            "image": np.asarray(image, dtype=dt),
        }

    def batch_bindings(self, data, idx) -> dict[str, np.ndarray]:
        return self.bindings(data.sensor_raw[idx], data.feat_video[idx],
                             data.feat_audio[idx], data.feat_image[idx])

    def evaluate_batches(self, data, outputs=("score",), batch_size: int = 32) -> dict[str, np.ndarray]:
        g = self.graph(training=False)
        chunks: dict[str, list] = {k: [] for k in outputs}
        for start in range(0, len(data), batch_size):
            idx = np.arange(start, min(start + batch_size, len(data)))
            out = g.forward(self.batch_bindings(data, idx), seed=None)
            for k in outputs:
                chunks[k].append(np.atleast_1d(out[k]))
        return {k: np.concatenate(v) for k, v in chunks.items()}

    def scores(self, data, batch_size: int = 32) -> np.ndarray:
        return self.evaluate_batches(data, ("score",), batch_size)["score"].astype(np.float64)

    def heatmap(self, sensor_raw, video, audio, image, grid: tuple[int, int] | None = None,
                out_res: int | None = None, sigma: float | None = None,
                raw: bool = False) -> np.ndarray:
        """Saliency of the cosine consistency term w.r.t. each surface token.

        Returns (angles, out_res, out_res) maps in [0, 1], or the raw per-token
        gradient norms (angles, tokens) when ``raw`` is set.
        """
        grid = grid or obj.token_grid(image.shape[-2])
        out_res = out_res or self.loss_cfg.heatmap_res
        sigma = self.loss_cfg.heatmap_sigma if sigma is None else sigma
        g = self.graph(training=False)
        b = self.bindings(sensor_raw[None], video[None], audio[None], image[None])
        g.forward(b, seed=None, grad_inputs=("image",))
        grads = g.backward("cos_score", wrt_inputs=("image",))["image"][0].astype(np.float64)
        if raw:
            return np.linalg.norm(grads, axis=-1)
        return obj.saliency_maps(grads, grid, out_res, sigma)


def build_model(cfg: ModelConfig, loss_cfg: obj.LossConfig, train_sensor: np.ndarray,
                text_anchor: np.ndarray, seed: int = 42, dtype=np.float32) -> PhysicHM:
    return PhysicHM(cfg, loss_cfg, init_params(cfg, seed, dtype), Normalizer.fit(train_sensor),
                    np.asarray(text_anchor, dtype=np.float64))
