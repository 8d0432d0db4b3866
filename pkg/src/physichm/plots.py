"""Report figures (PNG, non-interactive backend)."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.linewidth": 0.6,
    "legend.frameon": False,
    "lines.linewidth": 1.2,
}
KIND_COLORS = {"none": "0.55", "surface": "C0", "process_hidden": "C3", "both": "C2"}


def _save(fig, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def roc_curve(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) at every distinct threshold, starting at (0, 0)."""
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order].astype(bool)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = last + 1 - tp
    return np.r_[0.0, fp / max(fp[-1], 1)], np.r_[0.0, tp / max(tp[-1], 1)]


def score_figure(scores, labels, kinds: Sequence[str], path, title: str = "") -> Path:
    """Score histogram per defect kind next to the ROC curve."""
    scores, labels = np.asarray(scores), np.asarray(labels)
    kinds = np.asarray(kinds)
    with plt.rc_context(STYLE):
        fig, (ax_h, ax_r) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        bins = np.linspace(scores.min(), scores.max(), 30)
        for kind in dict.fromkeys(kinds):
            ax_h.hist(scores[kinds == kind], bins=bins, alpha=0.6, label=kind,
                      color=KIND_COLORS.get(kind))
        ax_h.set_xlabel("anomaly score")
        ax_h.set_ylabel("samples")
        ax_h.legend()
        fpr, tpr = roc_curve(scores, labels)
        ax_r.plot(fpr, tpr, color="k")
        ax_r.plot([0, 1], [0, 1], ls=":", color="0.6")
        ax_r.set_xlabel("false positive rate")
        ax_r.set_ylabel("true positive rate")
        ax_r.set_aspect("equal")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def loss_figure(trace: Sequence[tuple[int, float, float, float]], path) -> Path:
    t = np.asarray(trace, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(t[:, 0] + 1, t[:, 2], label="train")
        ax.plot(t[:, 0] + 1, t[:, 3], label="validation")
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        lr = ax.twinx()
        lr.plot(t[:, 0] + 1, t[:, 1], color="0.7", ls="--", lw=0.8)
        lr.set_ylabel("learning rate", color="0.5")
        lr.spines["right"].set_visible(True)
        ax.legend()
        return _save(fig, path)


def robustness_figure(rows: Mapping[float, Mapping[str, float]], path) -> Path:
    """AUROC columns (``i_auroc``, ``auroc_<kind>``) against sensor noise level."""
    sigmas = sorted(rows)
    keys = [k for k in rows[sigmas[0]] if k == "i_auroc" or k.startswith("auroc_")]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for k in keys:
            ax.plot(sigmas, [rows[s][k] for s in sigmas], marker="o", ms=3,
                    label=k.removeprefix("auroc_"),
                    color=KIND_COLORS.get(k.removeprefix("auroc_"), "k"))
        ax.set_xlabel("sensor noise (train std units)")
        ax.set_ylabel("AUROC")
        ax.set_ylim(0.4, 1.02)
        ax.legend()
        return _save(fig, path)


def ablation_figure(rows: Mapping[str, Mapping[str, float]], path, key: str = "auroc_process_hidden") -> Path:
    names = list(rows)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(names)), 3.2))
        ax.bar(range(len(names)), [rows[n]["i_auroc"] for n in names], width=0.4, label="all defects")
        ax.bar(np.arange(len(names)) + 0.4, [rows[n].get(key, np.nan) for n in names], width=0.4,
               label=key.removeprefix("auroc_"))
        ax.set_xticks(np.arange(len(names)) + 0.2, names, rotation=30, ha="right")
        ax.set_ylim(0.4, 1.0)
        ax.set_ylabel("AUROC")
        ax.legend()
        return _save(fig, path)


def heatmap_figure(maps: np.ndarray, path, image: np.ndarray | None = None) -> Path:
    """One panel per camera angle; optional token-energy row underneath."""
    m = len(maps)
    rows = 1 if image is None else 2
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, m, figsize=(1.8 * m, 1.9 * rows), squeeze=False)
        for a in range(m):
            axes[0, a].imshow(maps[a], cmap="inferno", vmin=0, vmax=1)
            axes[0, a].set_title(f"angle {a}")
            if image is not None:
                side = int(round(np.sqrt(image.shape[1])))
                axes[1, a].imshow(np.linalg.norm(image[a], axis=-1).reshape(side, side), cmap="gray")
        for ax in axes.ravel():
            ax.set_xticks([])
            ax.set_yticks([])
        return _save(fig, path)
