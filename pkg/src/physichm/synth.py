"""Synthetic causal weld-process data.

Every sample starts from a latent process trajectory ``theta`` (time x
process dims).  The process modalities are read out of ``theta`` directly:
sensors per time bin, video and audio tokens from windowed statistics.  The
result modality (multi-angle surface tokens) depends on ``theta`` only through
the integrated process energy, so result = f(process) holds exactly while
the converse map loses information.

Random streams are keyed by ``(seed, split, index, purpose)`` which makes
generation order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

SPLITS = {"train": 0, "val": 1, "test": 2}
DEFECT_KINDS = ("none", "surface", "process_hidden", "both")

CHANNELS = ("current", "voltage", "wire_feed", "gas_pressure", "gas_flow", "stickout")
CHANNEL_UNITS = ("A", "V", "m/min", "bar", "L/min", "mm")
_CHANNEL_OFFSET = np.array([180.0, 24.0, 8.0, 2.0, 15.0, 12.0])
_CHANNEL_SCALE = np.array([40.0, 3.0, 1.5, 0.2, 2.0, 1.5])

_STREAM_THETA, _STREAM_SENSOR, _STREAM_VIDEO, _STREAM_AUDIO, _STREAM_IMAGE, _STREAM_DEFECT = range(6)


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 128
    n_val: int = 64
    n_test: int = 192
    seed: int = 42
    n_bins: int = 256
    n_channels: int = 6
    n_video: int = 16
    n_audio: int = 16
    n_image: int = 16
    n_angles: int = 5
    feat_dim: int = 64
    theta_dim: int = 4
    theta_nominal: tuple[float, float] = (1.2, 0.9)
    walk_rho: float = 0.97
    walk_std: float = 0.02
    setpoint_std: float = 0.05
    jitter_range: tuple[float, float] = (0.01, 0.08)
    sensor_noise: float = 0.02
    video_noise: float = 0.05
    audio_noise: float = 0.05
    image_noise: float = 0.05
    image_gain: float = 2.0
    severity_range: tuple[float, float] = (0.5, 0.9)
    surface_shift: float = 0.5
    test_normal_frac: float = 1.0 / 3.0
    defect_mix: tuple[float, float, float] = (1.0, 1.0, 1.0)
    text_dim: int = 64

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) <= 0:
            raise ValueError("sample counts must be positive")
        lo, hi = self.severity_range
        if not 0 < lo <= hi:
            raise ValueError("severity range must be positive")
        if self.n_channels != len(CHANNELS):
            raise ValueError(f"the generator emits {len(CHANNELS)} sensor channels")
        if self.n_bins % self.n_video or self.n_bins % self.n_audio or self.n_bins % self.n_image:
            raise ValueError("n_bins must split evenly into video, audio and surface windows")


@dataclass
class SampleRecord:
    sensor_raw: np.ndarray
    feat_video: np.ndarray
    feat_audio: np.ndarray
    feat_image: np.ndarray
    label: str = "normal"
    defect_kind: str = "none"
    severity: float = 0.0
    theta: np.ndarray | None = None
    key: tuple[int, ...] = ()

    @property
    def is_anomalous(self) -> bool:
        return self.label == "anomalous"


@dataclass
class World:
    """Fixed random maps shared by every sample of one dataset seed."""

    cfg: SynthConfig
    theta_nominal: np.ndarray
    readout: np.ndarray
    video_w: np.ndarray
    video_b: np.ndarray
    audio_w: np.ndarray
    audio_b: np.ndarray
    image_w: np.ndarray
    image_b: np.ndarray
    angle_offset: np.ndarray
    energy_nominal: np.ndarray = field(init=False)

    def __post_init__(self):
        self.energy_nominal = energy(np.tile(self.theta_nominal, (self.cfg.n_bins, 1)), self.cfg.n_image)


def make_world(cfg: SynthConfig) -> World:
    rng = np.random.default_rng([cfg.seed, 99])
    d, D = cfg.theta_dim, cfg.feat_dim
    theta_nominal = np.linspace(*cfg.theta_nominal, d)
    readout = np.eye(cfg.n_channels, d) + 0.3 * rng.standard_normal((cfg.n_channels, d))
    n_stats = 2 * d
    return World(
        cfg=cfg,
        theta_nominal=theta_nominal,
        readout=readout,
        video_w=rng.standard_normal((n_stats, D)) / np.sqrt(n_stats) * 2.0,
        video_b=0.1 * rng.standard_normal(D),
        audio_w=rng.standard_normal((n_stats, D)) / np.sqrt(n_stats) * 2.0,
        audio_b=0.1 * rng.standard_normal(D),
        image_w=rng.standard_normal((d, D)) / np.sqrt(d),
        image_b=0.5 * rng.standard_normal(D) + 0.1 * rng.standard_normal((cfg.n_image, D)),
        angle_offset=0.1 * rng.standard_normal((cfg.n_angles, D)),
    )


def stream(key, purpose: int) -> np.random.Generator:
    return np.random.default_rng([*key, purpose])


def draw_theta(world: World, rng: np.random.Generator) -> np.ndarray:
    """Smooth AR(1) walk around a per-sample setpoint, plus fast jitter."""
    cfg = world.cfg
    T, d = cfg.n_bins, cfg.theta_dim
    setpoint = world.theta_nominal + cfg.setpoint_std * rng.standard_normal(d)
    eps = rng.standard_normal((T, d))
    walk = np.empty((T, d))
    walk[0] = cfg.walk_std / np.sqrt(1.0 - cfg.walk_rho ** 2) * eps[0]
    for t in range(1, T):
        walk[t] = cfg.walk_rho * walk[t - 1] + cfg.walk_std * eps[t]
    jitter = rng.uniform(*cfg.jitter_range) * rng.standard_normal((T, d))
    return setpoint + walk + jitter


def energy(theta: np.ndarray, n_segments: int = 1) -> np.ndarray:
    """Process energy integrated over each of ``n_segments`` consecutive weld segments.

    Surface token n is laid down while segment n is welded, so it depends on
    that segment's energy only.  Returns (n_segments, theta_dim).
    """
    T, d = theta.shape
    if T % n_segments:
        raise ValueError("n_bins must split evenly into weld segments")
    g = theta + 0.2 * theta ** 2
    return g.reshape(n_segments, T // n_segments, d).mean(axis=1)


def sensor_readout(theta: np.ndarray, world: World, rng: np.random.Generator) -> np.ndarray:
    cfg = world.cfg
    z = theta @ world.readout.T + cfg.sensor_noise * rng.standard_normal((cfg.n_bins, cfg.n_channels))
    return _CHANNEL_OFFSET + _CHANNEL_SCALE * z


def _window_stats(theta: np.ndarray, n_windows: int, jitter: bool) -> np.ndarray:
    T, d = theta.shape
    w = theta.reshape(n_windows, T // n_windows, d)
    if jitter:
        second = np.abs(np.diff(w, axis=1)).mean(axis=1) * 5.0
    else:
        second = w.std(axis=1) * 3.0
    return np.concatenate([w.mean(axis=1) - 1.0, second], axis=1)


def video_features(theta: np.ndarray, world: World, rng: np.random.Generator) -> np.ndarray:
    cfg = world.cfg
    s = _window_stats(theta, cfg.n_video, jitter=False)
    return np.tanh(s @ world.video_w + world.video_b) + cfg.video_noise * rng.standard_normal(
        (cfg.n_video, cfg.feat_dim))


def audio_features(theta: np.ndarray, world: World, rng: np.random.Generator) -> np.ndarray:
    cfg = world.cfg
    s = _window_stats(theta, cfg.n_audio, jitter=True)
    return np.tanh(s @ world.audio_w + world.audio_b) + cfg.audio_noise * rng.standard_normal(
        (cfg.n_audio, cfg.feat_dim))


def image_features(theta: np.ndarray, world: World, rng: np.random.Generator,
                   energy_shift: np.ndarray | None = None) -> np.ndarray:
    """Surface tokens for every angle, shape (angles, tokens, feat_dim)."""
    cfg = world.cfg
    e = energy(theta, cfg.n_image) - world.energy_nominal
    if energy_shift is not None:
        e = e + energy_shift
    # one energy-to-appearance law along the whole bead, small per-patch offsets
    base = cfg.image_gain * e @ world.image_w + world.image_b
    noise = cfg.image_noise * rng.standard_normal((cfg.n_angles, cfg.n_image, cfg.feat_dim))
    return np.logaddexp(0.0, base[None] + world.angle_offset[:, None, :] + noise)


def render_sample(theta: np.ndarray, world: World, key: tuple[int, ...],
                  theta_result: np.ndarray | None = None,
                  energy_shift: np.ndarray | None = None) -> SampleRecord:
    theta_result = theta if theta_result is None else theta_result
    return SampleRecord(
        sensor_raw=sensor_readout(theta, world, stream(key, _STREAM_SENSOR)),
        feat_video=video_features(theta, world, stream(key, _STREAM_VIDEO)),
        feat_audio=audio_features(theta, world, stream(key, _STREAM_AUDIO)),
        feat_image=image_features(theta_result, world, stream(key, _STREAM_IMAGE), energy_shift),
        theta=theta,
        key=tuple(key),
    )


def normal_sample(world: World, key: tuple[int, ...]) -> SampleRecord:
    return render_sample(draw_theta(world, stream(key, _STREAM_THETA)), world, key)


def inject_defect(sample: SampleRecord, kind: str, severity: float, world: World,
                  rng: np.random.Generator | None = None) -> SampleRecord:
    """Return an anomalous copy of a normal ``sample``.

    ``process_hidden`` multiplies one theta component by ``1 - severity`` over
    a window of 8..32 bins; the process modalities see the dip but the surface
    tokens keep coming from the undisturbed trajectory.  ``surface`` renders the
    surface from a shifted energy while leaving every process modality alone.
    """
    if kind not in DEFECT_KINDS[1:]:
        raise ValueError(f"unknown defect kind '{kind}'")
    if severity < 0:
        raise ValueError("severity must be non-negative")
    if sample.label != "normal" or sample.theta is None:
        raise ValueError("defects are injected into normal samples with a known trajectory")
    cfg = world.cfg
    rng = stream(sample.key, _STREAM_DEFECT) if rng is None else rng
    theta = sample.theta
    out = replace(sample, label="anomalous", defect_kind=kind, severity=float(severity))

    if kind in ("process_hidden", "both"):
        length = int(rng.integers(8, 33))
        start = int(rng.integers(0, cfg.n_bins - length + 1))
        comp = int(rng.integers(0, cfg.theta_dim))
        dipped = theta.copy()
        dipped[start:start + length, comp] *= 1.0 - severity
        proc = render_sample(dipped, world, sample.key)
        out.sensor_raw, out.feat_video, out.feat_audio = proc.sensor_raw, proc.feat_video, proc.feat_audio
        out.theta = dipped
    if kind in ("surface", "both"):
        direction = rng.standard_normal(cfg.theta_dim)
        direction /= np.linalg.norm(direction)
        shift = cfg.surface_shift * severity * direction
        out.feat_image = image_features(theta, world, stream(sample.key, _STREAM_IMAGE), shift)
    return out


def add_sensor_noise(x: np.ndarray, sigma: float, seed, scale: np.ndarray | float = 1.0) -> np.ndarray:
    """Additive Gaussian corruption; ``scale`` maps unit noise to channel units."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return np.array(x, copy=True)
    eps = np.random.default_rng(seed).standard_normal(np.shape(x))
    return x + sigma * eps * scale


def sensors_to_pseudo_pointcloud(x: np.ndarray, out_res: int) -> np.ndarray:
    """Map a T x C sensor series to a 3 x out_res x out_res (X, Y, Z) surface."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or min(x.shape) < 2:
        raise ValueError("need a T x C series with T, C >= 2")
    if out_res < 2:
        raise ValueError("out_res must be at least 2")
    T, C = x.shape
    gx, gy = np.meshgrid(np.linspace(0.0, 1.0, T), np.linspace(0.0, 1.0, C), indexing="ij")
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = hi - lo
    flat = span == 0
    z = (x - lo) / np.where(flat, 1.0, span)
    z[:, flat] = 0.5
    grid = np.stack([gx, gy, z])
    if (T, C) == (out_res, out_res):
        return grid
    return np.stack([ndimage.zoom(g, (out_res / T, out_res / C), order=1, mode="nearest",
                                  grid_mode=False) for g in grid])


def text_anchor(cfg: SynthConfig) -> np.ndarray:
    """Frozen unit vector standing in for the embedding of "a normal weld"."""
    v = np.random.default_rng([cfg.seed, 7]).standard_normal(cfg.text_dim)
    return v / np.linalg.norm(v)


def split_plan(cfg: SynthConfig, split: str) -> list[tuple[str, float]]:
    """Per-sample (defect kind, severity) for a split, in index order."""
    n = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}[split]
    if split != "test":
        return [("none", 0.0)] * n
    n_normal = int(round(n * cfg.test_normal_frac))
    mix = np.asarray(cfg.defect_mix, dtype=float)
    counts = np.floor(mix / mix.sum() * (n - n_normal)).astype(int)
    counts[: (n - n_normal) - counts.sum()] += 1
    kinds = ["none"] * n_normal
    for kind, c in zip(DEFECT_KINDS[1:], counts):
        kinds += [kind] * int(c)
    rng = np.random.default_rng([cfg.seed, SPLITS[split], 1234])
    order = rng.permutation(n)
    sev = rng.uniform(*cfg.severity_range, size=n)
    return [(kinds[i], 0.0 if kinds[i] == "none" else float(sev[j])) for j, i in enumerate(order)]


def make_sample(world: World, split: str, index: int, kind: str = "none",
                severity: float = 0.0) -> SampleRecord:
    key = (world.cfg.seed, SPLITS[split], index)
    s = normal_sample(world, key)
    if kind != "none":
        s = inject_defect(s, kind, severity, world)
    return s
