"""Round orchestration for simulated federated pretraining.

Clients are simulated in-process. Each round the server samples clients,
every sampled client trains from the current global weights (plus its own
persisted head in partial mode), and the uploads are aggregated. Per-round
telemetry goes to ``metrics.csv``; checkpoints hold server state only.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregation import AggregationConfig, ClientUpdate, GlobalState, aggregate_round
from .errors import ConfigError
from .model import ModelSpec, TrainingConfig, init_weights, mean_task_loss, train_epochs
from .params import (BACKBONE, CKPT_SUFFIX, HEAD, CheckpointMeta, WeightSet, l2_distance,
                     save_checkpoint, weights_to_json)
from .partition import PartitionSpec, client_dataset
from .pretext import TASKS
from .seeding import TAG_CENTRAL, TAG_CLIENT_HEAD, TAG_CLIENT_TRAIN, TAG_INIT, TAG_SAMPLE, mix, rng

log = logging.getLogger(__name__)

BYTES_PER_PARAM = 8
METRICS_COLUMNS = [
    "round", "n_selected", "client_ids", "mean_loss", "weighted_loss",
    "div_backbone_mean", "div_backbone_std", "div_head_mean", "div_head_std",
    "bytes_up", "bytes_down", "wall_ms",
]


@dataclass(frozen=True)
class EngineConfig:
    rounds: int = 200
    clients_per_round: int = 5
    n_clients: int = 16
    master_seed: int = 0
    task: str = "ctp"
    training: TrainingConfig = field(default_factory=TrainingConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    checkpoint_every: int = 0
    output_dir: str | None = None
    record_wire: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.rounds < 0:
            raise ConfigError("federation.rounds must be >= 0")
        if not 1 <= self.clients_per_round <= self.n_clients:
            raise ConfigError(
                f"need 1 <= clients_per_round ({self.clients_per_round}) <= n_clients ({self.n_clients})"
            )
        if self.checkpoint_every < 0:
            raise ConfigError("federation.checkpoint_every must be >= 0")

    @property
    def local_epochs(self) -> int:
        return self.training.local_epochs


@dataclass(frozen=True)
class ClientState:
    client_id: int
    head_weights: WeightSet | None = None
    participation_count: int = 0


@dataclass
class RoundRecord:
    round: int
    selected_clients: list[int]
    sample_counts: list[int]
    losses: list[float]
    mean_loss: float
    weighted_loss: float
    div_backbone_mean: float
    div_backbone_std: float
    div_head_mean: float | None
    div_head_std: float | None
    bytes_up: int
    bytes_down: int
    wall_ms: float

    def csv_row(self) -> list[str]:
        def f(x):
            return "" if x is None else repr(float(x))

        return [
            str(self.round), str(len(self.selected_clients)),
            "|".join(str(c) for c in self.selected_clients),
            f(self.mean_loss), f(self.weighted_loss),
            f(self.div_backbone_mean), f(self.div_backbone_std),
            f(self.div_head_mean), f(self.div_head_std),
            str(self.bytes_up), str(self.bytes_down), f"{self.wall_ms:.3f}",
        ]


@dataclass
class RunResult:
    state: GlobalState
    records: list[RoundRecord]
    client_states: dict[int, ClientState]
    initial_weights: WeightSet


def sample_clients(n_clients: int, m: int, round: int, master_seed: int) -> list[int]:
    if m > n_clients:
        raise ValueError(f"cannot sample {m} clients from {n_clients}")
    if m < 1:
        raise ValueError("must sample at least one client")
    gen = rng(master_seed, TAG_SAMPLE, round)
    return sorted(int(c) for c in gen.choice(n_clients, size=m, replace=False))


def initial_global(spec: ModelSpec, cfg: EngineConfig) -> WeightSet:
    """Full initial model (backbone and the task head) from the master seed."""
    return init_weights(spec, mix(cfg.master_seed, TAG_INIT), tasks=(cfg.task,))


def initial_head(spec: ModelSpec, cfg: EngineConfig, client_id: int) -> WeightSet:
    seed = mix(cfg.master_seed, TAG_CLIENT_HEAD, client_id)
    return init_weights(spec, seed, tasks=(cfg.task,), roles=(HEAD,))


def train_locally(client: ClientState, global_weights: WeightSet, data, cfg: EngineConfig,
                  spec: ModelSpec, dataset_cfg, round: int) -> tuple[ClientUpdate, ClientState]:
    """One client's local pretraining for ``cfg.local_epochs`` epochs.

    In partial mode the received backbone is joined with the client's own
    head (initialized on first participation) and only the backbone is
    uploaded; otherwise the full model travels both ways.
    """
    if not data:
        raise ValueError(f"client {client.client_id} has no data")
    partial = cfg.aggregation.partial_update
    if partial:
        head = client.head_weights
        if head is None:
            head = initial_head(spec, cfg, client.client_id)
        model = global_weights.filter_role(BACKBONE).merge(head)
    else:
        model = global_weights
    seed = mix(cfg.master_seed, TAG_CLIENT_TRAIN, round, client.client_id)
    trained, losses = train_epochs(model, data, cfg.task, cfg.training, dataset_cfg, seed)
    upload = trained.filter_role(cfg.aggregation.roles)
    update = ClientUpdate(client.client_id, upload, len(data), losses[-1])
    new_state = ClientState(
        client.client_id,
        trained.filter_role(HEAD) if partial else None,
        client.participation_count + 1,
    )
    return update, new_state


def _stats(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def divergence_stats(prev_global: WeightSet, uploads, roles) -> dict[str, tuple[float, float] | None]:
    """Mean and population std of per-client L2 distances to the global model."""
    out = {}
    for role in (BACKBONE, HEAD):
        if role not in roles:
            out[role] = None
            continue
        out[role] = _stats([l2_distance(prev_global, u.weights, role) for u in uploads])
    return out


class RunWriter:
    """Writes metrics, checkpoints and optional wire records into a run directory."""

    def __init__(self, out_dir, config_sha256: str, master_seed: int):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.sha = config_sha256
        self.seed = master_seed
        self._metrics = open(self.dir / "metrics.csv", "w", newline="")
        self._csv = csv.writer(self._metrics, lineterminator="\n")
        self._csv.writerow(METRICS_COLUMNS)

    def record(self, rec: RoundRecord):
        self._csv.writerow(rec.csv_row())
        self._metrics.flush()

    def checkpoint(self, w: WeightSet, round: int, name: str | None = None) -> Path:
        meta = CheckpointMeta.now(round, self.seed, self.sha)
        return save_checkpoint(w, meta, self.dir / (name or f"ckpt_round_{round}{CKPT_SUFFIX}"))

    def wire(self, round: int, updates):
        doc = {
            "round": round,
            "uploads": [
                {"client_id": u.client_id, "sample_count": u.sample_count,
                 "mean_loss": u.mean_loss, "params": weights_to_json(u.weights)}
                for u in sorted(updates, key=lambda u: u.client_id)
            ],
        }
        (self.dir / f"wire_round_{round}.json").write_text(json.dumps(doc, allow_nan=False))

    def close(self):
        self._metrics.close()


def run_pretraining(cfg: EngineConfig, train_set, partition: PartitionSpec, spec: ModelSpec,
                    dataset_cfg, config_sha256: str = "", init: WeightSet | None = None) -> RunResult:
    """Simulate ``cfg.rounds`` rounds; pure function of its inputs apart from wall_ms."""
    if partition.n_clients != cfg.n_clients:
        raise ConfigError(
            f"partition has {partition.n_clients} clients, federation.n_clients={cfg.n_clients}"
        )
    agg = cfg.aggregation
    full = init if init is not None else initial_global(spec, cfg)
    state = GlobalState.initial(full, agg)
    clients = {c: ClientState(c) for c in range(cfg.n_clients)}
    datasets = {c: client_dataset(partition, c, train_set) for c in range(cfg.n_clients)}
    writer = RunWriter(cfg.output_dir, config_sha256, cfg.master_seed) if cfg.output_dir else None
    records = []
    n_transmit = state.global_weights.num_params()
    try:
        if writer and cfg.checkpoint_every:
            writer.checkpoint(state.global_weights, 0)
        pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
        for r in range(1, cfg.rounds + 1):
            t0 = time.perf_counter()
            selected = sample_clients(cfg.n_clients, cfg.clients_per_round, r, cfg.master_seed)
            prev = state.global_weights

            def work(c, prev=prev, r=r):
                return train_locally(clients[c], prev, datasets[c], cfg, spec, dataset_cfg, r)

            results = list(pool.map(work, selected)) if pool else [work(c) for c in selected]
            # Barrier: everything below sees updates sorted by client id.
            results.sort(key=lambda ur: ur[0].client_id)
            updates = [u for u, _ in results]
            for _, cs in results:
                clients[cs.client_id] = cs
            div = divergence_stats(prev, updates, agg.roles)
            state, _ = aggregate_round(state, updates, agg)
            counts = [u.sample_count for u in updates]
            losses = [u.mean_loss for u in updates]
            n_sel = len(selected)
            rec = RoundRecord(
                round=r,
                selected_clients=selected,
                sample_counts=counts,
                losses=losses,
                mean_loss=float(np.mean(losses)),
                weighted_loss=float(np.dot(counts, losses) / sum(counts)),
                div_backbone_mean=div[BACKBONE][0],
                div_backbone_std=div[BACKBONE][1],
                div_head_mean=div[HEAD][0] if div[HEAD] else None,
                div_head_std=div[HEAD][1] if div[HEAD] else None,
                bytes_up=n_sel * n_transmit * BYTES_PER_PARAM,
                bytes_down=n_sel * n_transmit * BYTES_PER_PARAM,
                wall_ms=(time.perf_counter() - t0) * 1000.0,
            )
            records.append(rec)
            if writer:
                writer.record(rec)
                if cfg.record_wire:
                    writer.wire(r, updates)
                if cfg.checkpoint_every and r % cfg.checkpoint_every == 0:
                    writer.checkpoint(state.global_weights, r)
            if r == 1 or r % 20 == 0 or r == cfg.rounds:
                log.info("round %d/%d loss=%.5f", r, cfg.rounds, rec.weighted_loss)
        if pool:
            pool.shutdown()
        if writer:
            writer.checkpoint(state.global_weights, cfg.rounds, name=f"final{CKPT_SUFFIX}")
    finally:
        if writer:
            writer.close()
    return RunResult(state, records, clients, full)


def equivalent_centralized_epochs(rounds: int, clients_per_round: int, local_epochs: int,
                                  mean_client_size: float, dataset_size: float) -> float:
    """Centralized epochs that process as many samples as a federated run."""
    return rounds * clients_per_round * local_epochs * mean_client_size / dataset_size


@dataclass
class CentralizedResult:
    weights: WeightSet
    epoch_losses: list[float]  # index 0 = before training


def run_centralized(spec: ModelSpec, train_set, task: str, training: TrainingConfig, dataset_cfg,
                    epochs: int, master_seed: int, out_dir=None, config_sha256: str = "",
                    init: WeightSet | None = None) -> CentralizedResult:
    """Train one model on the pooled training set with the same learner."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    if epochs < 0:
        raise ConfigError("centralized epochs must be >= 0")
    w = init if init is not None else init_weights(spec, mix(master_seed, TAG_INIT), tasks=(task,))
    eval_seed = mix(master_seed, TAG_CENTRAL)
    losses = [mean_task_loss(w, train_set, task, dataset_cfg, eval_seed)]
    for e in range(epochs):
        w, _ = train_epochs(w, train_set, task, training, dataset_cfg,
                            mix(master_seed, TAG_CENTRAL, e), epochs=1)
        losses.append(mean_task_loss(w, train_set, task, dataset_cfg, eval_seed))
        log.info("centralized epoch %d/%d loss=%.5f", e + 1, epochs, losses[-1])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["epoch", "train_loss"])
            for i, l in enumerate(losses):
                wr.writerow([i, repr(l)])
        save_checkpoint(w, CheckpointMeta.now(epochs, master_seed, config_sha256),
                        out / f"final{CKPT_SUFFIX}")
    return CentralizedResult(w, losses)
