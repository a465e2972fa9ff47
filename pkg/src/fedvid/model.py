"""Frame-encoder backbone, pretext heads, backpropagation and plain SGD.

The backbone encodes a clip ``[T, H, W]`` as::

    h_t = relu(W1 @ flatten(frame_t) + b1)
    embedding = relu(W2 @ mean_t(h_t) + b2)

Heads are small MLPs on the embedding (for ``vcop``, on the concatenated
embeddings of the three sub-clips). Weight matrices are stored
``[out, in]`` so that a row is one output unit's incoming weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .params import BACKBONE, HEAD, WeightSet, axpy
from .pretext import (SPEED_STRIDES, TASKS, VCOP_PERMUTATIONS, VCOP_SUBCLIPS, PretextBatch,
                      make_batch)
from .seeding import TAG_EPOCH, TAG_EVAL_BATCH, rng

CTP_OUTPUTS = 5

DEFAULT_CLIENT_LR = {"ctp": 0.01, "speed": 0.01, "vcop": 0.001}


@dataclass(frozen=True)
class ModelSpec:
    frame_shape: tuple[int, int] = (16, 16)
    hidden1: int = 64
    embed_dim: int = 32
    vcop_hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "frame_shape", tuple(int(d) for d in self.frame_shape))
        if min(*self.frame_shape, self.hidden1, self.embed_dim, self.vcop_hidden) < 1:
            raise ConfigError("model dimensions must all be >= 1")

    @property
    def frame_dim(self) -> int:
        return self.frame_shape[0] * self.frame_shape[1]

    def backbone_layers(self) -> list[tuple[str, int, int]]:
        return [
            ("backbone.fc1", self.frame_dim, self.hidden1),
            ("backbone.fc2", self.hidden1, self.embed_dim),
        ]

    def head_layers(self, task: str) -> list[tuple[str, int, int]]:
        e = self.embed_dim
        if task == "ctp":
            return [("head.ctp.fc0", e, CTP_OUTPUTS)]
        if task == "speed":
            return [("head.speed.fc0", e, len(SPEED_STRIDES))]
        if task == "vcop":
            return [
                ("head.vcop.fc0", VCOP_SUBCLIPS * e, self.vcop_hidden),
                ("head.vcop.fc1", self.vcop_hidden, len(VCOP_PERMUTATIONS)),
            ]
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


@dataclass(frozen=True)
class TrainingConfig:
    client_lr: float | None = None  # None -> per-task default
    batch_size: int = 4
    local_epochs: int = 1
    momentum: float = 0.0
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.client_lr is not None and not self.client_lr >= 0:
            raise ConfigError("client_lr must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if self.momentum != 0.0:
            raise ConfigError("only plain SGD (momentum 0) is supported")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")

    def lr_for(self, task: str) -> float:
        return DEFAULT_CLIENT_LR[task] if self.client_lr is None else self.client_lr


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_weights(spec: ModelSpec, seed: int, tasks=TASKS, roles=(BACKBONE, HEAD)) -> WeightSet:
    """Glorot-uniform weights and zero biases for the backbone and the given heads."""
    layers = []
    if BACKBONE in roles:
        layers += [(n, i, o, BACKBONE) for n, i, o in spec.backbone_layers()]
    if HEAD in roles:
        for t in tasks:
            layers += [(n, i, o, HEAD) for n, i, o in spec.head_layers(t)]
    gen = np.random.default_rng(seed)
    entries = {}
    for name, fan_in, fan_out, role in sorted(layers):
        a = glorot_bound(fan_in, fan_out)
        entries[f"{name}.weight"] = (role, gen.uniform(-a, a, size=(fan_out, fan_in)))
        entries[f"{name}.bias"] = (role, np.zeros(fan_out))
    return WeightSet(entries)


def _relu(z):
    return np.maximum(z, 0.0)


def _layer(w: WeightSet, name: str):
    try:
        return w[f"{name}.weight"], w[f"{name}.bias"]
    except KeyError:
        raise ShapeMismatchError(f"weights lack layer {name!r}", name=name) from None


# -- backbone ----------------------------------------------------------------


def _backbone_forward(w: WeightSet, clips: np.ndarray):
    W1, b1 = _layer(w, "backbone.fc1")
    W2, b2 = _layer(w, "backbone.fc2")
    n, t = clips.shape[:2]
    x = clips.reshape(n * t, -1)
    if x.shape[1] != W1.shape[1]:
        raise ShapeMismatchError(
            f"frame has {x.shape[1]} pixels, backbone expects {W1.shape[1]}", name="backbone.fc1.weight"
        )
    z1 = x @ W1.T + b1
    a1 = _relu(z1)
    m = a1.reshape(n, t, -1).mean(axis=1)
    z2 = m @ W2.T + b2
    return _relu(z2), (x, z1, m, z2, n, t)


def _backbone_backward(w: WeightSet, cache, d_emb: np.ndarray) -> dict:
    x, z1, m, z2, n, t = cache
    W2 = w["backbone.fc2.weight"]
    dz2 = d_emb * (z2 > 0)
    grads = {"backbone.fc2.weight": dz2.T @ m, "backbone.fc2.bias": dz2.sum(axis=0)}
    dm = dz2 @ W2
    da1 = np.repeat(dm / t, t, axis=0)
    dz1 = da1 * (z1 > 0)
    grads["backbone.fc1.weight"] = dz1.T @ x
    grads["backbone.fc1.bias"] = dz1.sum(axis=0)
    return grads


def embed_clips(w: WeightSet, clips: np.ndarray) -> np.ndarray:
    """Embeddings for a batch of clips ``[N, T, H, W]`` -> ``[N, embed_dim]``."""
    return _backbone_forward(w, np.asarray(clips, dtype=np.float64))[0]


def forward_backbone(w: WeightSet, clip: np.ndarray) -> np.ndarray:
    clip = np.asarray(clip, dtype=np.float64)
    if not np.isfinite(clip).all():
        raise ValueError("clip contains non-finite values")
    return embed_clips(w, clip[None])[0]


# -- heads -------------------------------------------------------------------


def _head_names(w: WeightSet, task: str) -> list[str]:
    prefix = f"head.{task}."
    names = sorted({n.rsplit(".", 1)[0] for n in w if n.startswith(prefix)})
    if not names:
        raise ValueError(f"weights carry no head for task {task!r}")
    return names


def _mlp_forward(w: WeightSet, layers: list[str], h: np.ndarray):
    cache = []
    for i, name in enumerate(layers):
        W, b = _layer(w, name)
        if h.shape[1] != W.shape[1]:
            raise ShapeMismatchError(f"layer {name!r} expects {W.shape[1]} inputs, got {h.shape[1]}",
                                     name=f"{name}.weight")
        z = h @ W.T + b
        cache.append((h, z))
        h = z if i == len(layers) - 1 else _relu(z)
    return h, cache


def _mlp_backward(w: WeightSet, layers: list[str], cache, d_out: np.ndarray):
    grads = {}
    dz = d_out
    for i in reversed(range(len(layers))):
        name = layers[i]
        h_in, _ = cache[i]
        grads[f"{name}.weight"] = dz.T @ h_in
        grads[f"{name}.bias"] = dz.sum(axis=0)
        dh = dz @ w[f"{name}.weight"]
        if i > 0:
            dz = dh * (cache[i - 1][1] > 0)
    return grads, dh


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    logp = _log_softmax(logits)
    b = len(labels)
    loss = -float(logp[np.arange(b), labels].mean())
    d = np.exp(logp)
    d[np.arange(b), labels] -= 1.0
    return loss, d / b


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _batch_loss(w: WeightSet, batch: PretextBatch, task: str, need_grad: bool):
    if batch.task != task:
        raise ValueError(f"batch built for {batch.task!r}, loss requested for {task!r}")
    layers = _head_names(w, task)
    x = np.asarray(batch.inputs, dtype=np.float64)
    b = len(batch)
    if task == "vcop":
        clips = x.reshape(b * VCOP_SUBCLIPS, *x.shape[2:])
    else:
        clips = x
    emb, bb_cache = _backbone_forward(w, clips)
    feats = emb.reshape(b, -1)
    out, head_cache = _mlp_forward(w, layers, feats)
    if task == "ctp":
        loss, d_out = mse(out, np.asarray(batch.targets, dtype=np.float64))
    else:
        loss, d_out = cross_entropy(out, np.asarray(batch.targets))
    if not need_grad:
        return loss, None
    grads, d_feats = _mlp_backward(w, layers, head_cache, d_out)
    grads.update(_backbone_backward(w, bb_cache, d_feats.reshape(emb.shape)))
    return loss, grads


def task_loss(w: WeightSet, batch: PretextBatch, task: str | None = None) -> float:
    """Mean pretext loss on ``batch`` without the weight-decay term."""
    return _batch_loss(w, batch, task or batch.task, need_grad=False)[0]


def _sq_norm(w: WeightSet) -> float:
    return sum(float(np.dot(a.ravel(), a.ravel())) for _, _, a in w.items())


def loss_and_grads(w: WeightSet, batch: PretextBatch, task: str | None = None,
                   weight_decay: float = 0.0) -> tuple[float, float, WeightSet]:
    """Return ``(pretext_loss, total_loss, grads)``.

    ``total_loss`` adds ``weight_decay / 2 * ||w||^2`` over every entry of
    ``w``; ``grads`` has exactly the signature of ``w`` (entries not touched
    by the task carry only the decay gradient).
    """
    task = task or batch.task
    loss, g = _batch_loss(w, batch, task, need_grad=True)
    entries = {}
    for name, role, arr in w.items():
        grad = g.get(name)
        if grad is None:
            grad = np.zeros_like(arr)
        if weight_decay:
            grad = grad + weight_decay * arr
        entries[name] = (role, grad)
    total = loss + 0.5 * weight_decay * _sq_norm(w) if weight_decay else loss
    return loss, total, WeightSet(entries)


def task_loss_and_grads(w: WeightSet, batch: PretextBatch, task: str | None = None,
                        weight_decay: float = 0.0) -> tuple[float, WeightSet]:
    _, total, grads = loss_and_grads(w, batch, task, weight_decay)
    return total, grads


def sgd_step(w: WeightSet, grads: WeightSet, lr: float) -> WeightSet:
    return axpy(-lr, grads, w)


def train_epochs(w: WeightSet, videos, task: str, cfg: TrainingConfig, dataset_cfg,
                 seed: int, epochs: int | None = None,
                 train_roles=None) -> tuple[WeightSet, list[float]]:
    """Mini-batch SGD over ``videos`` for ``epochs`` (default ``cfg.local_epochs``).

    Each epoch shuffles sample order with sub-seed ``mix(seed, TAG_EPOCH, e)``
    and draws the pretext randomness from the same stream. Returns the new
    weights and the sample-weighted mean pretext loss of every epoch, each
    batch loss taken before its update. ``train_roles`` restricts which
    roles receive updates; the rest stay bitwise frozen.
    """
    if not videos:
        raise ValueError("cannot train on an empty dataset")
    epochs = cfg.local_epochs if epochs is None else epochs
    lr = cfg.lr_for(task)
    n = len(videos)
    history = []
    for e in range(epochs):
        gen = rng(seed, TAG_EPOCH, e)
        order = gen.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = make_batch(task, [videos[i] for i in idx], gen, dataset_cfg, idx)
            loss, _, grads = loss_and_grads(w, batch, task, cfg.weight_decay)
            total += loss * len(idx)
            if not lr:
                continue
            if train_roles is None:
                w = sgd_step(w, grads, lr)
            else:
                frozen = tuple(r for r in (BACKBONE, HEAD) if r not in train_roles)
                w = sgd_step(w.filter_role(train_roles), grads.filter_role(train_roles), lr).merge(
                    w.filter_role(frozen))
        history.append(total / n)
    return w, history


def make_eval_batches(videos, task: str, dataset_cfg, seed: int,
                      batch_size: int = 256) -> list[PretextBatch]:
    """Fixed pretext batches over ``videos``; the same ``seed`` always yields
    the same strides/permutations."""
    gen = rng(seed, TAG_EVAL_BATCH)
    return [
        make_batch(task, videos[s:s + batch_size], gen, dataset_cfg, np.arange(s, min(s + batch_size, len(videos))))
        for s in range(0, len(videos), batch_size)
    ]


def batches_loss(w: WeightSet, batches) -> float:
    """Sample-weighted mean pretext loss over precomputed batches."""
    total = sum(task_loss(w, b) * len(b) for b in batches)
    return total / sum(len(b) for b in batches)


def mean_task_loss(w: WeightSet, videos, task: str, dataset_cfg, seed: int,
                   batch_size: int = 256) -> float:
    return batches_loss(w, make_eval_batches(videos, task, dataset_cfg, seed, batch_size))
