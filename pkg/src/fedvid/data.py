"""Synthetic moving-patch videos.

Each video shows one bright square drifting at constant velocity across a
toroidal frame. The class label combines a direction bin (angle of the
velocity) and a size bin (patch side), so it can be read off the clip but is
never needed by the pretext tasks.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .seeding import box_muller, mix

# Fraction of a direction bin kept clear at each edge so the stored label
# always matches the one recomputed from (vx, vy).
_ANGLE_MARGIN = 0.01


@dataclass(frozen=True)
class GenParams:
    x0: float
    y0: float
    vx: float
    vy: float
    s: int
    intensity: float


@dataclass(frozen=True)
class Video:
    frames: np.ndarray  # [T_raw, H, W]
    label: int
    gen_params: GenParams


@dataclass(frozen=True)
class DatasetConfig:
    n_direction_bins: int = 8
    sizes: tuple[int, ...] = (2, 3, 4, 5)
    videos_per_class_train: int = 100
    videos_per_class_test: int = 20
    T_raw: int = 32
    H: int = 16
    W: int = 16
    speed_range: tuple[float, float] = (1.0, 4.0)
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "speed_range", tuple(float(v) for v in self.speed_range))
        if self.n_direction_bins < 2:
            raise ConfigError("dataset.n_direction_bins must be >= 2")
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise ConfigError("dataset.sizes must be a nonempty list of positive ints")
        if list(self.sizes) != sorted(set(self.sizes)):
            raise ConfigError("dataset.sizes must be strictly increasing")
        if self.T_raw < 16:
            raise ConfigError("dataset.T_raw must be >= 16")
        if self.H < 8 or self.W < 8:
            raise ConfigError("dataset.H and dataset.W must be >= 8")
        if max(self.sizes) > min(self.H, self.W):
            raise ConfigError("patch sizes must fit inside the frame")
        if len(self.speed_range) != 2:
            raise ConfigError("dataset.speed_range must have two entries")
        lo, hi = self.speed_range
        if not 0 <= lo <= hi or hi <= 0:
            raise ConfigError("dataset.speed_range must be [lo, hi] with 0 <= lo <= hi, hi > 0")
        if self.noise_sigma < 0:
            raise ConfigError("dataset.noise_sigma must be >= 0")
        if self.videos_per_class_train < 1 or self.videos_per_class_test < 0:
            raise ConfigError("videos per class must be positive")

    @property
    def n_size_bins(self) -> int:
        return len(self.sizes)

    @property
    def n_classes(self) -> int:
        return self.n_direction_bins * self.n_size_bins

    @property
    def v_max(self) -> float:
        return self.speed_range[1]


def class_of(direction_bin: int, size_bin: int, cfg: DatasetConfig) -> int:
    return direction_bin * cfg.n_size_bins + size_bin


def label_from_params(p: GenParams, cfg: DatasetConfig) -> int:
    angle = math.atan2(p.vy, p.vx) % (2 * math.pi)
    d = min(int(angle / (2 * math.pi) * cfg.n_direction_bins), cfg.n_direction_bins - 1)
    return class_of(d, cfg.sizes.index(p.s), cfg)


def _coverage(starts, side: int, n: int) -> np.ndarray:
    """Overlap of [start, start+side) (mod n) with each unit cell.

    ``starts`` may be a scalar or 1-D array; the result has a trailing axis
    of length ``n``.
    """
    start = np.mod(np.asarray(starts, dtype=np.float64), n)[..., None]
    cells = np.arange(n, dtype=np.float64)
    cov = np.zeros(start.shape[:-1] + (n,))
    # The interval can cross the torus seam once, so examine two shifted copies.
    for shift in (0.0, -float(n)):
        lo = start + shift
        hi = lo + side
        cov += np.clip(np.minimum(cells + 1.0, hi) - np.maximum(cells, lo), 0.0, None)
    return cov


def render_patch(p: GenParams, t, H: int, W: int) -> np.ndarray:
    """Noise-free frame(s) at time(s) ``t``: area-weighted square on a torus."""
    cx = _coverage(p.x0 + np.asarray(t) * p.vx, p.s, W)
    cy = _coverage(p.y0 + np.asarray(t) * p.vy, p.s, H)
    return p.intensity * cy[..., :, None] * cx[..., None, :]


def _check_params(p: GenParams, cfg: DatasetConfig) -> None:
    if p.s not in cfg.sizes:
        raise ConfigError(f"patch size {p.s} not among configured sizes {cfg.sizes}")
    if not 0.5 <= p.intensity <= 1.0:
        raise ConfigError(f"intensity {p.intensity} outside [0.5, 1]")
    if not (0 <= p.x0 < cfg.W and 0 <= p.y0 < cfg.H):
        raise ConfigError(f"start position ({p.x0}, {p.y0}) outside the frame")
    vmax = cfg.v_max
    if abs(p.vx) > vmax + 1e-12 or abs(p.vy) > vmax + 1e-12:
        raise ConfigError(f"velocity ({p.vx}, {p.vy}) exceeds v_max={vmax}")


def generate_video(p: GenParams, cfg: DatasetConfig, gen: np.random.Generator) -> Video:
    """Render ``cfg.T_raw`` frames for ``p`` and add clipped Gaussian noise."""
    _check_params(p, cfg)
    frames = render_patch(p, np.arange(cfg.T_raw), cfg.H, cfg.W)
    if cfg.noise_sigma > 0:
        noise = box_muller(gen, frames.size).reshape(frames.shape)
        frames = frames + cfg.noise_sigma * noise
    frames = np.clip(frames, 0.0, 1.0)
    frames.flags.writeable = False
    return Video(frames=frames, label=label_from_params(p, cfg), gen_params=p)


def _sample_params(cls: int, gen: np.random.Generator, cfg: DatasetConfig) -> GenParams:
    d, sb = divmod(cls, cfg.n_size_bins)
    u = gen.random(5)
    width = 2 * math.pi / cfg.n_direction_bins
    angle = (d + _ANGLE_MARGIN + (1 - 2 * _ANGLE_MARGIN) * u[0]) * width
    lo, hi = cfg.speed_range
    speed = lo + (hi - lo) * u[1]
    return GenParams(
        x0=float(u[2] * cfg.W),
        y0=float(u[3] * cfg.H),
        vx=speed * math.cos(angle),
        vy=speed * math.sin(angle),
        s=cfg.sizes[sb],
        intensity=0.5 + 0.5 * float(u[4]),
    )


def make_video(cfg: DatasetConfig, cls: int, index: int) -> Video:
    gen = np.random.default_rng(mix(cfg.seed, cls, index))
    return generate_video(_sample_params(cls, gen, cfg), cfg, gen)


def make_dataset(cfg: DatasetConfig) -> tuple[list[Video], list[Video]]:
    """Class-balanced train/test splits, ordered class-major.

    Video ``i`` of class ``c`` uses sub-seed ``mix(seed, c, i)``; test videos
    continue the per-class index after the training ones.
    """
    n_tr, n_te = cfg.videos_per_class_train, cfg.videos_per_class_test
    train, test = [], []
    for c in range(cfg.n_classes):
        train.extend(make_video(cfg, c, i) for i in range(n_tr))
        test.extend(make_video(cfg, c, n_tr + i) for i in range(n_te))
    return train, test


def labels_of(videos) -> np.ndarray:
    return np.array([v.label for v in videos], dtype=np.int64)


def dump_dataset(videos, out_dir, prefix: str = "video") -> Path:
    """Write each video as raw little-endian float32 plus a JSON index."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for i, v in enumerate(videos):
        name = f"{prefix}_{i:05d}.f32"
        v.frames.astype("<f4").tofile(out / name)
        index.append({
            "path": name,
            "shape": list(v.frames.shape),
            "label": v.label,
            "gen_params": asdict(v.gen_params),
        })
    idx_path = out / f"{prefix}_index.json"
    idx_path.write_text(json.dumps(index, indent=1))
    return idx_path
