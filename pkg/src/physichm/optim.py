"""AdamW with decoupled weight decay, and a warmup-free cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


@dataclass
class AdamW:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        missing = [k for k in params if k not in grads]
        if missing:
            raise KeyError(f"missing gradient for: {', '.join(missing)}")
        for k in params:
            if not np.all(np.isfinite(grads[k])):
                raise FloatingPointError(f"non-finite gradient for '{k}'")

        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, p in params.items():
            g = np.asarray(grads[k], dtype=p.dtype)
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def cosine_lr(epoch: int, total_epochs: int, lr_max: float, lr_min: float = 0.0) -> float:
    if total_epochs < 2:
        raise ValueError("cosine schedule needs at least 2 epochs")
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * epoch / (total_epochs - 1)))
