"""Key-value configuration files.

One ``key = value`` pair per line, ``#`` starts a comment.  Bare keys set
training options; ``model.``, ``loss.``, ``bottleneck.`` and ``synth.``
prefixes address the matching sub-configuration.  Example::

    epochs = 60
    model.width = 64
    loss.k = 32
    synth.n_test = 192
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping

from . import decoder as dec
from . import objective as obj
from .model import VARIANTS, ModelConfig
from .synth import SynthConfig

SECTIONS = ("train", "model", "loss", "bottleneck", "synth")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch: int = 16
    epochs: int = 60
    seed: int = 42
    weight_decay: float = 1e-4
    variant: str = "full"
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: obj.LossConfig = field(default_factory=obj.LossConfig)

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.epochs < 2:
            raise ValueError("epochs must be >= 2")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}'")


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in out:
                raise ValueError(f"{path}:{n}: duplicate key '{key}'")
            out[key] = value
    return out


def _coerce(raw: str, default: Any, name: str):
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{name}: expected a boolean, got '{raw}'")
        return raw.lower() in ("true", "1", "yes")
    if isinstance(default, tuple):
        return tuple(float(x) for x in raw.strip("()").split(",") if x.strip())
    return type(default)(raw)


def _build(cls, values: Mapping[str, str], section: str, base=None):
    base = base if base is not None else cls()
    known = {f.name: getattr(base, f.name) for f in fields(cls)
             if not hasattr(getattr(base, f.name), "__dataclass_fields__")}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ValueError(f"unknown {section} option '{key}'")
        try:
            kwargs[key] = _coerce(raw, known[key], f"{section}.{key}")
        except ValueError as exc:
            raise ValueError(f"bad value for {section}.{key}: {exc}") from None
    return replace(base, **kwargs)


def split_sections(kv: Mapping[str, str]) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {s: {} for s in SECTIONS}
    for key, value in kv.items():
        section, _, name = key.rpartition(".")
        section = section or "train"
        if section not in out:
            raise ValueError(f"unknown config section '{section}' in key '{key}'")
        out[section][name] = value
    return out


def train_config_from_sections(sections: Mapping[str, Mapping[str, str]]) -> TrainConfig:
    bottleneck = _build(dec.BottleneckConfig, sections.get("bottleneck", {}), "bottleneck")
    model = _build(ModelConfig, sections.get("model", {}), "model", ModelConfig(bottleneck=bottleneck))
    loss = _build(obj.LossConfig, sections.get("loss", {}), "loss")
    return _build(TrainConfig, sections.get("train", {}), "train", TrainConfig(model=model, loss=loss))


def synth_config_from_sections(sections: Mapping[str, Mapping[str, str]]) -> SynthConfig:
    return _build(SynthConfig, sections.get("synth", {}), "synth")


def load_train_config(path: str | os.PathLike | None) -> TrainConfig:
    return TrainConfig() if path is None else train_config_from_sections(split_sections(read_kv(path)))


def load_synth_config(path: str | os.PathLike | None) -> SynthConfig:
    return SynthConfig() if path is None else synth_config_from_sections(split_sections(read_kv(path)))


def _flat(obj_) -> dict[str, str]:
    out = {}
    for f in fields(obj_):
        v = getattr(obj_, f.name)
        if hasattr(v, "__dataclass_fields__"):
            continue
        out[f.name] = ",".join(repr(x) for x in v) if isinstance(v, tuple) else repr(v) if isinstance(v, float) else str(v)
    return out


def dump_sections(cfg: TrainConfig) -> dict[str, dict[str, str]]:
    return {"train": _flat(cfg), "model": _flat(cfg.model), "loss": _flat(cfg.loss),
            "bottleneck": _flat(cfg.model.bottleneck)}
