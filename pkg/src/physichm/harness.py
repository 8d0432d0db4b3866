"""Training, evaluation, checkpoints, ablations, robustness sweep and latency bench."""

from __future__ import annotations

import configparser
import logging
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics, synth
from . import objective as obj
from .config import TrainConfig, dump_sections, train_config_from_sections
from .dataset import Dataset, load_split
from .model import VARIANTS, ModelConfig, Normalizer, PhysicHM, TargetNorm, build_model, variant_config, variant_loss
from .optim import AdamW, cosine_lr
from .tensorfile import read_tensor, write_tensor

log = logging.getLogger(__name__)


@dataclass
class Checkpoint:
    config: TrainConfig
    model: PhysicHM
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)  # epoch, lr, train, val
    best_epoch: int = -1


@dataclass
class EvalReport:
    scores: np.ndarray
    labels: np.ndarray
    kinds: list[str]
    auroc: float
    ap: float
    f1_max: float
    per_kind: dict[str, float]
    latency_ms: float | None = None
    fps: float | None = None

    def metrics_block(self) -> dict[str, float]:
        out = {"i_auroc": self.auroc, "i_ap": self.ap, "i_f1_max": self.f1_max}
        out.update({f"auroc_{k}": v for k, v in self.per_kind.items()})
        if self.latency_ms is not None:
            out["latency_ms"] = self.latency_ms
            out["fps"] = self.fps
        return out


def _model_config(cfg: TrainConfig, data: Dataset) -> ModelConfig:
    """Fill data-dependent sizes from the split and apply the variant topology."""
    _, n_bins, n_ch = data.sensor_raw.shape
    m = replace(cfg.model, n_bins=n_bins, n_channels=n_ch,
                n_video=data.feat_video.shape[1], video_dim=data.feat_video.shape[2],
                n_audio=data.feat_audio.shape[1], audio_dim=data.feat_audio.shape[2],
                n_angles=data.feat_image.shape[1], n_image=data.feat_image.shape[2],
                image_dim=data.feat_image.shape[3])
    return variant_config(cfg.variant, m)


def _batch_seed(seed: int, epoch: int, batch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, batch]).generate_state(1)[0])


def mean_loss(model: PhysicHM, data: Dataset, batch_size: int = 32) -> float:
    return float(np.mean(model.evaluate_batches(data, ("sample_loss",), batch_size)["sample_loss"]))


def train(cfg: TrainConfig, train_data: Dataset, val_data: Dataset | None = None,
          out_dir: str | os.PathLike | None = None) -> Checkpoint:
    """Fit on the (all-normal) training split; keeps the best-by-validation weights.

    Validation uses normal samples only.  When ``out_dir`` is set the final and
    best checkpoints are written to ``out_dir/final`` and ``out_dir/best``.
    """
    if train_data.labels.any():
        raise ValueError("training split must contain only normal samples")
    if val_data is not None:
        val_data = val_data.subset(np.flatnonzero(~val_data.labels))
    if train_data.text_anchor is None:
        raise ValueError("training split has no text anchor")
    mcfg = _model_config(cfg, train_data)
    model = build_model(mcfg, variant_loss(cfg.variant, cfg.loss), train_data.sensor_raw,
                        train_data.text_anchor, seed=cfg.seed)
    model.fit_target_norm(train_data)
    trainable = model.trainable()
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    order_rng = np.random.default_rng(cfg.seed)
    graph = model.graph(training=True)
    ckpt = Checkpoint(replace(cfg, model=mcfg), model)
    best_val, best_params, best_norm = np.inf, None, None
    n = len(train_data)

    for epoch in range(cfg.epochs):
        opt.lr = cosine_lr(epoch, cfg.epochs, cfg.lr)
        perm = order_rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, cfg.batch)):
            idx = perm[start:start + cfg.batch]
            out = graph.forward(model.batch_bindings(train_data, idx), seed=_batch_seed(cfg.seed, epoch, b))
            loss = float(out["loss"])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.step({k: model.params[k] for k in trainable}, graph.backward("loss"))
            losses.append(loss)
        if not model.frozen_target:
            model.fit_target_norm(train_data)
        val = mean_loss(model, val_data) if val_data is not None and len(val_data) else float(np.mean(losses))
        ckpt.trace.append((epoch, opt.lr, float(np.mean(losses)), val))
        log.info("epoch %d lr %.3g train %.5f val %.5f", epoch, opt.lr, np.mean(losses), val)
        if val < best_val:
            best_val, ckpt.best_epoch = val, epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
            best_norm = model.target_norm

    if out_dir is not None:
        save_checkpoint(ckpt, Path(out_dir) / "final")
    model.params.update(best_params)
    model.target_norm = best_norm
    if out_dir is not None:
        save_checkpoint(ckpt, Path(out_dir) / "best")
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> Path:
    path = Path(path)
    (path / "params").mkdir(parents=True, exist_ok=True)
    for old in (path / "params").glob("*.phmt"):
        old.unlink()
    m = ckpt.model
    for name, arr in m.params.items():
        write_tensor(path / "params" / f"{name}.phmt", arr)
    write_tensor(path / "normalizer_mean.phmt", m.normalizer.mean)
    write_tensor(path / "normalizer_std.phmt", m.normalizer.std)
    write_tensor(path / "text_anchor.phmt", m.text_anchor)
    if m.target_norm is not None:
        write_tensor(path / "target_mean.phmt", m.target_norm.mean)
        write_tensor(path / "target_std.phmt", m.target_norm.std)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for section, values in dump_sections(ckpt.config).items():
        cp[section] = values
    cp["checkpoint"] = {"best_epoch": str(ckpt.best_epoch)}
    with open(path / "config.ini", "w", encoding="utf-8") as fh:
        cp.write(fh)
    with open(path / "trace.tsv", "w", encoding="utf-8") as fh:
        fh.write("epoch\tlr\ttrain_loss\tval_loss\n")
        for e, lr, tr, va in ckpt.trace:
            fh.write(f"{e}\t{lr!r}\t{tr!r}\t{va!r}\n")
    return path


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    path = Path(path)
    if not (path / "config.ini").exists() and (path / "best" / "config.ini").exists():
        path = path / "best"
    if not (path / "config.ini").exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read(path / "config.ini", encoding="utf-8")
    cfg = train_config_from_sections({s: dict(cp[s]) for s in cp.sections()})
    params = {p.name[:-len(".phmt")]: read_tensor(p) for p in sorted((path / "params").glob("*.phmt"))}
    model = PhysicHM(cfg.model, variant_loss(cfg.variant, cfg.loss), params,
                     Normalizer(read_tensor(path / "normalizer_mean.phmt"),
                                read_tensor(path / "normalizer_std.phmt")),
                     read_tensor(path / "text_anchor.phmt"))
    if (path / "target_mean.phmt").exists():
        model.target_norm = TargetNorm(read_tensor(path / "target_mean.phmt"),
                                       read_tensor(path / "target_std.phmt"))
    trace = []
    with open(path / "trace.tsv", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            e, lr, tr, va = line.split("\t")
            trace.append((int(e), float(lr), float(tr), float(va)))
    return Checkpoint(cfg, model, trace, int(cp["checkpoint"]["best_epoch"]))


def report_from_scores(scores: np.ndarray, data: Dataset) -> EvalReport:
    labels = data.labels
    per_kind = {}
    for kind in synth.DEFECT_KINDS[1:]:
        sel = np.array([k in ("none", kind) for k in data.kinds])
        if labels[sel].any():
            per_kind[kind] = metrics.auroc(scores[sel], labels[sel])
    return EvalReport(scores, labels, list(data.kinds), metrics.auroc(scores, labels),
                      metrics.average_precision(scores, labels), metrics.f1_max(scores, labels), per_kind)


def evaluate(model: PhysicHM | Checkpoint, data: Dataset, batch_size: int = 32) -> EvalReport:
    """Score every sample in eval mode (bottleneck is the identity)."""
    if isinstance(model, Checkpoint):
        model = model.model
    return report_from_scores(model.scores(data, batch_size), data)


def run_ablation(variant: str, base: TrainConfig, train_data: Dataset, val_data: Dataset,
                 test_data: Dataset, out_dir: str | os.PathLike | None = None) -> tuple[Checkpoint, EvalReport]:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant '{variant}'")
    ckpt = train(replace(base, variant=variant), train_data, val_data, out_dir)
    return ckpt, evaluate(ckpt, test_data)


def robustness_sweep(model: PhysicHM | Checkpoint, data: Dataset, sigmas=(0.0, 0.1, 0.2, 0.3),
                     seed: int = 42) -> dict[float, EvalReport]:
    """Re-evaluate with Gaussian noise on the raw sensors.

    ``sigma`` is in units of each channel's training standard deviation, so
    one sigma means the same relative corruption on every channel.
    """
    if isinstance(model, Checkpoint):
        model = model.model
    out = {}
    for sigma in sigmas:
        noisy = synth.add_sensor_noise(data.sensor_raw, sigma, seed, scale=model.normalizer.std)
        out[float(sigma)] = evaluate(model, data.replace_sensors(noisy))
    return out


def latency_bench(model: PhysicHM | Checkpoint, data: Dataset, warmup: int = 5,
                  iters: int = 50) -> tuple[float, float]:
    """Median single-sample end-to-end scoring time (ms) and the matching fps."""
    if iters < 10:
        raise ValueError("iters must be >= 10")
    if isinstance(model, Checkpoint):
        model = model.model
    g = model.graph(training=False)
    times = []
    for i in range(warmup + iters):
        j = i % len(data)
        t0 = time.perf_counter()
        g.forward(model.bindings(data.sensor_raw[j:j + 1], data.feat_video[j:j + 1],
                                 data.feat_audio[j:j + 1], data.feat_image[j:j + 1]), seed=None)
        dt = time.perf_counter() - t0
        if i >= warmup:
            times.append(dt)
    ms = float(np.median(times) * 1e3)
    return ms, 1000.0 / ms


def load_splits(data: str | os.PathLike) -> tuple[Dataset, Dataset, Dataset]:
    from .dataset import resolve
    return tuple(load_split(resolve(data, s)) for s in synth.SPLITS)


def replicate_seeds(base_seed: int, n: int) -> list[int]:
    if n < 1:
        raise ValueError("replicates must be >= 1")
    return [base_seed + i for i in range(n)]


def sample_heatmap(model: PhysicHM | Checkpoint, data: Dataset, index: int) -> np.ndarray:
    if isinstance(model, Checkpoint):
        model = model.model
    if not 0 <= index < len(data):
        raise IndexError(f"sample {index} out of range (split has {len(data)})")
    return model.heatmap(data.sensor_raw[index], data.feat_video[index],
                         data.feat_audio[index], data.feat_image[index])


def heatmap_localization(model: PhysicHM | Checkpoint, data: Dataset, trials: int = 50,
                         scale: float = 2.0, seed: int = 42) -> float:
    """Fraction of trials whose map peak lands on a single perturbed token.

    Each trial takes a normal sample, adds ``scale`` times the feature spread
    of white noise to one token of one angle, and checks that angle's map.
    """
    if isinstance(model, Checkpoint):
        model = model.model
    normal = np.flatnonzero(~data.labels)
    if not len(normal):
        raise ValueError("split has no normal samples")
    hits = 0
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        i = int(rng.choice(normal))
        image = data.feat_image[i].copy()
        angle, token = int(rng.integers(image.shape[0])), int(rng.integers(image.shape[1]))
        image[angle, token] += scale * image.std() * rng.standard_normal(image.shape[-1])
        maps = model.heatmap(data.sensor_raw[i], data.feat_video[i], data.feat_audio[i], image)
        r, c = np.unravel_index(np.argmax(maps[angle]), maps[angle].shape)
        rows, cols = obj.token_cell(token, obj.token_grid(image.shape[1]), maps.shape[-1])
        hits += rows.start <= r < rows.stop and cols.start <= c < cols.stop
    return hits / trials
