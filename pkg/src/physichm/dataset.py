"""Dataset manifests and split storage.

A split is stored as one PHMT file per modality (samples stacked along the
first axis) plus a UTF-8 manifest in INI syntax listing shapes, files and
per-sample labels.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import synth
from .tensorfile import read_tensor, write_tensor

MODALITIES = ("sensor_raw", "feat_video", "feat_audio", "feat_image")


@dataclass
class Dataset:
    split: str
    sensor_raw: np.ndarray
    feat_video: np.ndarray
    feat_audio: np.ndarray
    feat_image: np.ndarray
    labels: np.ndarray
    kinds: list[str]
    severity: np.ndarray
    text_anchor: np.ndarray | None = None
    theta: np.ndarray | None = None
    manifest_path: Path | None = None
    token_grid: tuple[int, int] | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.split, self.sensor_raw[idx], self.feat_video[idx], self.feat_audio[idx],
            self.feat_image[idx], self.labels[idx], [self.kinds[i] for i in idx],
            self.severity[idx], self.text_anchor,
            None if self.theta is None else self.theta[idx], self.manifest_path, self.token_grid)

    def replace_sensors(self, sensor_raw: np.ndarray) -> "Dataset":
        out = self.subset(np.arange(len(self)))
        out.sensor_raw = sensor_raw
        return out


def _shape_str(shape) -> str:
    return "x".join(str(int(n)) for n in shape)


def write_split(out_dir: Path, split: str, records: list[synth.SampleRecord],
                cfg: synth.SynthConfig, anchor_file: str | None = None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in MODALITIES:
        arr = np.stack([getattr(r, name) for r in records]).astype(np.float32)
        files[name] = f"{split}_{name}.phmt"
        write_tensor(out_dir / files[name], arr)
    files["theta"] = f"{split}_theta.phmt"
    write_tensor(out_dir / files["theta"], np.stack([r.theta for r in records]).astype(np.float64))
    if anchor_file:
        files["text_anchor"] = anchor_file

    mf = configparser.ConfigParser(interpolation=None)
    mf.optionxform = str
    grid = int(round(np.sqrt(cfg.n_image)))
    mf["dataset"] = {
        "split": split,
        "count": str(len(records)),
        "seed": str(cfg.seed),
        "token_grid": f"{grid}x{grid}" if grid * grid == cfg.n_image else "none",
    }
    r0 = records[0]
    mf["shapes"] = {name: _shape_str(getattr(r0, name).shape) for name in MODALITIES}
    mf["channels"] = {c: u for c, u in zip(synth.CHANNELS, synth.CHANNEL_UNITS)}
    mf["files"] = files
    hist = {k: 0 for k in synth.DEFECT_KINDS}
    for r in records:
        hist[r.defect_kind] += 1
    mf["defect_kinds"] = {k: str(v) for k, v in hist.items()}
    mf["generator"] = {f.name: str(getattr(cfg, f.name)) for f in fields(cfg)}
    mf["samples"] = {str(i): f"{r.label} {r.defect_kind} {r.severity!r}" for i, r in enumerate(records)}
    path = out_dir / f"{split}.manifest"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# physichm dataset manifest\n")
        mf.write(fh)
    return path


def generate_dataset(cfg: synth.SynthConfig, out_dir: str | os.PathLike) -> dict[str, Path]:
    """Generate train/val/test splits under ``out_dir``; returns manifest paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = synth.make_world(cfg)
    write_tensor(out_dir / "text_anchor.phmt", synth.text_anchor(cfg))
    paths = {}
    for split in synth.SPLITS:
        plan = synth.split_plan(cfg, split)
        records = [synth.make_sample(world, split, i, kind, sev) for i, (kind, sev) in enumerate(plan)]
        paths[split] = write_split(out_dir, split, records, cfg, "text_anchor.phmt")
    return paths


def read_manifest(path: str | os.PathLike) -> configparser.ConfigParser:
    mf = configparser.ConfigParser(interpolation=None)
    mf.optionxform = str
    with open(path, encoding="utf-8") as fh:
        mf.read_file(fh)
    return mf


def load_split(path: str | os.PathLike) -> Dataset:
    path = Path(path)
    mf = read_manifest(path)
    base = path.parent
    files = mf["files"]
    arrays = {}
    for name in MODALITIES:
        arr = read_tensor(base / files[name])
        declared = tuple(int(n) for n in mf["shapes"][name].split("x"))
        if arr.shape[1:] != declared:
            raise ValueError(f"{name}: file shape {arr.shape[1:]} != manifest {declared}")
        arrays[name] = arr
    count = int(mf["dataset"]["count"])
    rows = [mf["samples"][str(i)].split() for i in range(count)]
    labels = np.array([r[0] == "anomalous" for r in rows], dtype=bool)
    kinds = [r[1] for r in rows]
    severity = np.array([float(r[2]) for r in rows])
    for name, arr in arrays.items():
        if len(arr) != count:
            raise ValueError(f"{name}: {len(arr)} samples, manifest says {count}")
    anchor = read_tensor(base / files["text_anchor"]) if "text_anchor" in files else None
    theta = read_tensor(base / files["theta"]) if "theta" in files else None
    grid = mf["dataset"].get("token_grid", "none")
    token_grid = None if grid == "none" else tuple(int(n) for n in grid.split("x"))
    return Dataset(mf["dataset"]["split"], labels=labels, kinds=kinds, severity=severity,
                   text_anchor=anchor, theta=theta, manifest_path=path, token_grid=token_grid,
                   **arrays)


def resolve(data: str | os.PathLike, split: str) -> Path:
    """Manifest of ``split`` given its dataset directory or any sibling manifest."""
    p = Path(data)
    p = p / f"{split}.manifest" if p.is_dir() else p.parent / f"{split}.manifest"
    if not p.exists():
        raise FileNotFoundError(f"no manifest at {p}")
    return p


def synth_config_from_manifest(path: str | os.PathLike) -> synth.SynthConfig:
    gen = read_manifest(path)["generator"]
    kwargs = {}
    for f in fields(synth.SynthConfig):
        if f.name in gen:
            default = getattr(synth.SynthConfig(), f.name)
            raw = gen[f.name]
            if isinstance(default, tuple):
                kwargs[f.name] = tuple(float(x) for x in raw.strip("()").split(",") if x.strip())
            else:
                kwargs[f.name] = type(default)(raw)
    return synth.SynthConfig(**kwargs)

