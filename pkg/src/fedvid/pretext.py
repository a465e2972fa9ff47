"""Self-supervised batches for the three toy pretext tasks.

* ``ctp``: regress the patch trajectory code (start position, velocity, size).
* ``speed``: classify the temporal stride k in {1, 2, 3, 4} of an 8-frame clip.
* ``vcop``: classify which of the 6 permutations shuffled three 4-frame sub-clips.

Builders read only ``video.frames`` and ``video.gen_params``; class labels
never enter a pseudo-label.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .data import DatasetConfig

TASKS = ("ctp", "speed", "vcop")
CLIP_LEN = 8
SPEED_STRIDES = (1, 2, 3, 4)
VCOP_SUBCLIPS = 3
VCOP_SUBCLIP_LEN = 4
# Lexicographic over permutation tuples; index 0 is the identity.
VCOP_PERMUTATIONS: tuple[tuple[int, ...], ...] = tuple(itertools.permutations(range(VCOP_SUBCLIPS)))


@dataclass(frozen=True)
class PretextBatch:
    task: str
    inputs: np.ndarray  # [B, 8, H, W], or [B, 3, 4, H, W] for vcop
    targets: np.ndarray  # [B, 5] float for ctp, [B] int otherwise
    source_indices: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)


def _indices(videos, source_indices):
    if source_indices is None:
        return np.arange(len(videos))
    return np.asarray(source_indices)


def ctp_target(p, cfg: DatasetConfig) -> np.ndarray:
    vmax = cfg.v_max
    s_min, s_max = cfg.sizes[0], cfg.sizes[-1]
    size = 0.0 if s_max == s_min else (p.s - s_min) / (s_max - s_min)
    return np.array([
        p.x0 / cfg.W,
        p.y0 / cfg.H,
        (p.vx + vmax) / (2 * vmax),
        (p.vy + vmax) / (2 * vmax),
        size,
    ])


def make_ctp_batch(videos, rng: np.random.Generator, cfg: DatasetConfig,
                   source_indices=None) -> PretextBatch:
    """First 8 frames paired with the normalized trajectory code.

    ``rng`` is accepted for a uniform builder signature and left untouched.
    """
    inputs = np.stack([v.frames[:CLIP_LEN] for v in videos])
    targets = np.stack([ctp_target(v.gen_params, cfg) for v in videos])
    return PretextBatch("ctp", inputs, targets, _indices(videos, source_indices))


def make_speed_batch(videos, rng: np.random.Generator, cfg: DatasetConfig | None = None,
                     source_indices=None) -> PretextBatch:
    need = (CLIP_LEN - 1) * max(SPEED_STRIDES) + 1
    strides = rng.integers(0, len(SPEED_STRIDES), size=len(videos))
    clips = []
    for v, si in zip(videos, strides):
        if v.frames.shape[0] < need:
            raise ValueError(
                f"clip of {v.frames.shape[0]} frames too short for stride "
                f"{max(SPEED_STRIDES)} (needs {need})"
            )
        k = SPEED_STRIDES[si]
        clips.append(v.frames[0:CLIP_LEN * k:k])
    return PretextBatch("speed", np.stack(clips), strides.astype(np.int64),
                        _indices(videos, source_indices))


def make_vcop_batch(videos, rng: np.random.Generator, cfg: DatasetConfig | None = None,
                    source_indices=None) -> PretextBatch:
    need = VCOP_SUBCLIPS * VCOP_SUBCLIP_LEN
    labels = rng.integers(0, len(VCOP_PERMUTATIONS), size=len(videos))
    clips = []
    for v, lab in zip(videos, labels):
        if v.frames.shape[0] < need:
            raise ValueError(f"clip of {v.frames.shape[0]} frames too short (needs {need})")
        sub = v.frames[:need].reshape(VCOP_SUBCLIPS, VCOP_SUBCLIP_LEN, *v.frames.shape[1:])
        clips.append(sub[list(VCOP_PERMUTATIONS[lab])])
    return PretextBatch("vcop", np.stack(clips), labels.astype(np.int64),
                        _indices(videos, source_indices))


_BUILDERS = {"ctp": make_ctp_batch, "speed": make_speed_batch, "vcop": make_vcop_batch}


def make_batch(task: str, videos, rng: np.random.Generator, cfg: DatasetConfig,
               source_indices=None) -> PretextBatch:
    try:
        builder = _BUILDERS[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}") from None
    return builder(videos, rng, cfg, source_indices=source_indices)
