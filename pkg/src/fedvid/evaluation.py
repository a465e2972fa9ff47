"""Representation probes on a frozen backbone.

Retrieval ranks training clips by Euclidean distance to each test clip and
counts a hit at ``k`` when any of the ``k`` nearest shares the test label.
Ties in distance go to the lower training index.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import labels_of
from .model import (ModelSpec, TrainingConfig, batches_loss, cross_entropy, embed_clips,
                    init_weights, make_eval_batches, train_epochs)
from .params import (BACKBONE, HEAD, WeightSet, check_compatible, l2_distance, load_checkpoint,
                     weights_from_json)
from .pretext import CLIP_LEN
from .seeding import TAG_LANDSCAPE, TAG_PERTURB, TAG_PROBE, mix, rng

DEFAULT_LEVELS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


# -- embeddings and retrieval ------------------------------------------------


def embed_all(backbone: WeightSet, videos, clip_len: int = CLIP_LEN, chunk: int = 512) -> np.ndarray:
    """Row ``i`` is the embedding of the first ``clip_len`` frames of video ``i``."""
    rows = []
    for s in range(0, len(videos), chunk):
        clips = np.stack([v.frames[:clip_len] for v in videos[s:s + chunk]])
        rows.append(embed_clips(backbone, clips))
    return np.concatenate(rows) if rows else np.zeros((0, 0))


@dataclass
class RetrievalReport:
    k_values: list[int]
    recall_at_k: dict[int, float]
    n_test: int
    n_train: int
    distance_metric: str = "euclidean"

    def to_json(self) -> dict:
        d = asdict(self)
        d["recall_at_k"] = {str(k): v for k, v in self.recall_at_k.items()}
        return d


def knn_ranking(train_emb: np.ndarray, test_emb: np.ndarray, k: int, chunk: int = 64) -> np.ndarray:
    """Indices of the ``k`` nearest training rows for every test row."""
    train_emb = np.asarray(train_emb, dtype=np.float64)
    test_emb = np.asarray(test_emb, dtype=np.float64)
    out = np.empty((len(test_emb), k), dtype=np.int64)
    for s in range(0, len(test_emb), chunk):
        q = test_emb[s:s + chunk]
        diff = q[:, None, :] - train_emb[None, :, :]
        d2 = np.einsum("qnd,qnd->qn", diff, diff)
        out[s:s + chunk] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def knn_retrieval(train_emb, train_labels, test_emb, test_labels, ks=(1, 5)) -> RetrievalReport:
    ks = [int(k) for k in ks]
    if ks != sorted(ks) or not ks or ks[0] < 1:
        raise ValueError(f"ks must be positive and ascending, got {ks}")
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    n_train, n_test = len(train_labels), len(test_labels)
    if n_train == 0:
        raise ValueError("retrieval needs a nonempty training set")
    if n_test == 0:
        raise ValueError("retrieval needs a nonempty test set")
    kmax = min(ks[-1], n_train)
    nn = knn_ranking(train_emb, test_emb, kmax)
    hits = train_labels[nn] == test_labels[:, None]
    first_hit = np.where(hits.any(axis=1), hits.argmax(axis=1), ks[-1])
    recall = {k: float(np.mean(first_hit < k)) for k in ks}
    return RetrievalReport(ks, recall, n_test, n_train)


def evaluate_retrieval(backbone: WeightSet, train, test, ks=(1, 5)) -> RetrievalReport:
    return knn_retrieval(embed_all(backbone, train), labels_of(train),
                         embed_all(backbone, test), labels_of(test), ks)


# -- linear probe --------------------------------------------------------------


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 32
    weight_decay: float = 0.0
    seed: int = 0


@dataclass
class ProbeResult:
    accuracy: float
    train_accuracy: float
    n_classes: int
    epochs: int


def _standardize(train_x, test_x):
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0)
    sd[sd == 0] = 1.0
    return (train_x - mu) / sd, (test_x - mu) / sd


def train_linear_classifier(x, y, n_classes: int, cfg: ProbeConfig):
    """Softmax regression by mini-batch SGD; returns ``(W, b)``."""
    gen = rng(cfg.seed, TAG_PROBE)
    d = x.shape[1]
    a = math.sqrt(6.0 / (d + n_classes))
    W = gen.uniform(-a, a, size=(n_classes, d))
    b = np.zeros(n_classes)
    n = len(y)
    for _ in range(cfg.epochs):
        order = gen.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            _, dz = cross_entropy(x[idx] @ W.T + b, y[idx])
            W -= cfg.lr * (dz.T @ x[idx] + cfg.weight_decay * W)
            b -= cfg.lr * dz.sum(axis=0)
    return W, b


def linear_probe(backbone: WeightSet, train, test, cfg: ProbeConfig = ProbeConfig(),
                 train_labels=None, n_classes: int | None = None) -> ProbeResult:
    """Top-1 test accuracy of a linear classifier on frozen embeddings.

    Only embeddings leave the backbone, so its weights cannot change.
    ``train_labels`` overrides the training labels (used for sanity checks).
    """
    if not train or not test:
        raise ValueError("linear probe needs nonempty train and test splits")
    ytr = labels_of(train) if train_labels is None else np.asarray(train_labels)
    yte = labels_of(test)
    n_classes = n_classes or int(max(ytr.max(), yte.max())) + 1
    xtr, xte = _standardize(embed_all(backbone, train), embed_all(backbone, test))
    W, b = train_linear_classifier(xtr, ytr, n_classes, cfg)
    acc = float(np.mean(np.argmax(xte @ W.T + b, axis=1) == yte))
    tr_acc = float(np.mean(np.argmax(xtr @ W.T + b, axis=1) == ytr))
    return ProbeResult(acc, tr_acc, n_classes, cfg.epochs)


# -- perturbation stability ----------------------------------------------------


@dataclass
class PerturbationCurve:
    levels: list[float]
    recall_at_1: list[float]
    seed: int


def gaussian_like(w: WeightSet, gen: np.random.Generator) -> WeightSet:
    """Standard normal draws shaped like ``w``, filled in name order."""
    return WeightSet({n: (r, gen.standard_normal(a.shape)) for n, r, a in w.items()})


def perturb(backbone: WeightSet, level: float, level_index: int, seed: int) -> WeightSet:
    if level == 0.0:
        return backbone
    eps = gaussian_like(backbone, rng(seed, TAG_PERTURB, level_index))
    return WeightSet({n: (r, a + level * eps[n]) for n, r, a in backbone.items()})


def perturb_and_eval(backbone: WeightSet, levels, seed: int, train, test) -> PerturbationCurve:
    """R@1 after adding ``level * N(0, 1)`` noise to every backbone weight."""
    levels = [float(x) for x in levels]
    if 0.0 not in levels:
        raise ValueError("perturbation levels must include 0.0")
    backbone = backbone.filter_role(BACKBONE)
    r1 = []
    for i, level in enumerate(levels):
        rep = evaluate_retrieval(perturb(backbone, level, i, seed), train, test, ks=(1,))
        r1.append(rep.recall_at_k[1])
    return PerturbationCurve(levels, r1, seed)


# -- loss landscape ------------------------------------------------------------


def filter_normalize(direction: WeightSet, reference: WeightSet) -> WeightSet:
    """Rescale each filter of ``direction`` to the norm of the matching
    filter of ``reference``.

    A filter is one row of a weight matrix; each bias element is a filter of
    its own. Rows whose direction or reference norm is zero become zero.
    """
    check_compatible(direction, reference)
    out = {}
    for name, role, d in direction.items():
        ref = reference[name]
        d2 = d.reshape(d.shape[0], -1) if d.ndim > 1 else d.reshape(-1, 1)
        r2 = ref.reshape(d2.shape)
        dn = np.sqrt(np.einsum("ij,ij->i", d2, d2))
        rn = np.sqrt(np.einsum("ij,ij->i", r2, r2))
        factor = np.divide(rn, dn, out=np.zeros_like(rn), where=(dn > 0) & (rn > 0))
        out[name] = (role, (d2 * factor[:, None]).reshape(d.shape))
    return WeightSet(out)


@dataclass
class LandscapeGrid:
    a: list[float]
    b: list[float]  # [0.0] in 1-D mode
    loss: np.ndarray  # [len(b), len(a)]
    direction_seeds: list[int]
    normalization: str
    center_loss: float

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["a", "b", "loss"])
            for j, bv in enumerate(self.b):
                for i, av in enumerate(self.a):
                    wr.writerow([repr(av), repr(bv), repr(float(self.loss[j, i]))])
        return path


def grid_axis(n: int, lo: float, hi: float) -> list[float]:
    if n < 1 or n % 2 == 0:
        raise ValueError(f"grid size must be odd so the origin is a grid point, got {n}")
    if lo != -hi or hi <= 0:
        raise ValueError(f"grid range must be symmetric about 0, got [{lo}, {hi}]")
    axis = [float(x) for x in np.linspace(lo, hi, n)]
    axis[n // 2] = 0.0
    return axis


def landscape_directions(backbone: WeightSet, seed: int, normalization: str = "filter"):
    dirs, seeds = [], []
    for i in range(2):
        s = mix(seed, TAG_LANDSCAPE, i)
        d = gaussian_like(backbone, np.random.default_rng(s))
        if normalization == "filter":
            d = filter_normalize(d, backbone)
        elif normalization != "none":
            raise ValueError(f"unknown normalization {normalization!r}")
        dirs.append(d)
        seeds.append(s)
    return dirs, seeds


def loss_landscape(weights: WeightSet, videos, task: str, dataset_cfg, grid: int = 41,
                   span: tuple[float, float] = (-1.0, 1.0), seed: int = 0, one_d: bool = False,
                   normalization: str = "filter", eval_seed: int = 0,
                   directions=None) -> LandscapeGrid:
    """Mean pretext loss at ``theta + a*d1 + b*d2`` with directions on the backbone.

    The head stays fixed. ``directions`` overrides the random ones (two
    backbone-shaped weight sets).
    """
    a_axis = grid_axis(grid, *span)
    b_axis = [0.0] if one_d else a_axis
    backbone = weights.filter_role(BACKBONE)
    head = weights.filter_role(HEAD)
    if not len(head):
        raise ValueError("loss landscape needs a head; fit one with fit_head() first")
    if directions is None:
        directions, seeds = landscape_directions(backbone, seed, normalization)
    else:
        seeds = []
    d1, d2 = directions
    batches = make_eval_batches(videos, task, dataset_cfg, eval_seed)
    center = batches_loss(weights, batches)
    loss = np.empty((len(b_axis), len(a_axis)))
    for j, bv in enumerate(b_axis):
        for i, av in enumerate(a_axis):
            if av == 0.0 and bv == 0.0:
                loss[j, i] = center
                continue
            moved = {n: (r, t + av * d1[n] + bv * d2[n]) for n, r, t in backbone.items()}
            loss[j, i] = batches_loss(WeightSet(moved).merge(head), batches)
    return LandscapeGrid(a_axis, b_axis, loss, seeds, normalization, center)


def fit_head(backbone: WeightSet, videos, task: str, spec: ModelSpec, training: TrainingConfig,
             dataset_cfg, epochs: int, seed: int) -> WeightSet:
    """Train a fresh task head on a frozen backbone (for head-less checkpoints)."""
    head = init_weights(spec, mix(seed, TAG_PROBE), tasks=(task,), roles=(HEAD,))
    w, _ = train_epochs(backbone.filter_role(BACKBONE).merge(head), videos, task, training,
                        dataset_cfg, mix(seed, TAG_PROBE, 1), epochs=epochs, train_roles=(HEAD,))
    return w.filter_role(HEAD)


# -- divergence ------------------------------------------------------------------


@dataclass
class DivergenceRow:
    round: int
    backbone_mean: float
    backbone_std: float
    head_mean: float | None
    head_std: float | None


def _opt(x: str):
    return None if x == "" else float(x)


def divergence_summary(run_dir) -> list[DivergenceRow]:
    """Per-round divergence statistics as recorded in ``metrics.csv``."""
    path = Path(run_dir) / "metrics.csv"
    if not path.exists():
        raise FileNotFoundError(f"missing telemetry: {path}")
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(DivergenceRow(int(rec["round"]), float(rec["div_backbone_mean"]),
                                      float(rec["div_backbone_std"]), _opt(rec["div_head_mean"]),
                                      _opt(rec["div_head_std"])))
    return rows


def recompute_divergence(run_dir) -> list[DivergenceRow]:
    """Offline recomputation from per-round checkpoints and wire records.

    Needs a run made with ``checkpoint_every=1`` and ``record_wire=True``.
    """
    run_dir = Path(run_dir)
    rows = []
    r = 1
    while (run_dir / f"wire_round_{r}.json").exists():
        prev, _ = load_checkpoint(run_dir / f"ckpt_round_{r - 1}.ckpt.json")
        doc = json.loads((run_dir / f"wire_round_{r}.json").read_text())
        uploads = [weights_from_json(u["params"]) for u in doc["uploads"]]
        stats = {}
        for role in (BACKBONE, HEAD):
            if role not in prev.roles():
                stats[role] = (None, None)
                continue
            d = np.array([l2_distance(prev, u, role) for u in uploads])
            stats[role] = (float(d.mean()), float(d.std()))
        rows.append(DivergenceRow(r, *stats[BACKBONE], *stats[HEAD]))
        r += 1
    if not rows:
        raise FileNotFoundError(f"no wire records in {run_dir}")
    return rows
