"""Glue from a :class:`RunConfig` to datasets, partitions and runs."""

from __future__ import annotations

import functools
import os
from pathlib import Path

from .config import RunConfig
from .data import DatasetConfig, labels_of, make_dataset
from .engine import CentralizedResult, RunResult, run_centralized, run_pretraining
from .partition import IID, PartitionSpec, partition_by_class, partition_iid


@functools.lru_cache(maxsize=4)
def dataset(cfg: DatasetConfig):
    train, test = make_dataset(cfg)
    return tuple(train), tuple(test)


def build_partition(cfg: RunConfig, train) -> PartitionSpec:
    p = cfg.partition
    n = cfg.federation.n_clients
    if p.mode == IID:
        return partition_iid(len(train), n, p.seed, labels=labels_of(train))
    return partition_by_class(labels_of(train), n, p.classes_per_client, p.seed)


def worker_count() -> int:
    """Client worker threads from ``FEDVID_THREADS`` (unset -> 1, 0 -> auto)."""
    raw = os.environ.get("FEDVID_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return (os.cpu_count() or 1) if n <= 0 else n


def pretrain(cfg: RunConfig, out_dir=None) -> RunResult:
    """Run federated pretraining; with ``out_dir`` the full run directory is written."""
    train, _ = dataset(cfg.dataset)
    part = build_partition(cfg, train)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        part.save(out / "partition.json")
    ecfg = cfg.engine_config(output_dir=None if out_dir is None else str(out_dir),
                             workers=worker_count())
    return run_pretraining(ecfg, list(train), part, cfg.model_spec(), cfg.dataset,
                           config_sha256=cfg.digest())


def centralized(cfg: RunConfig, out_dir=None, epochs: int | None = None) -> CentralizedResult:
    train, _ = dataset(cfg.dataset)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        cfg.save(Path(out_dir) / "config.json")
    return run_centralized(cfg.model_spec(), list(train), cfg.task, cfg.training_config(),
                           cfg.dataset, cfg.centralized_epochs() if epochs is None else epochs,
                           cfg.seeds.master_seed, out_dir=out_dir, config_sha256=cfg.digest())
