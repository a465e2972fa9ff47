"""IID and label-shard (non-IID) client partitions of a training set."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InfeasiblePartitionError

IID = "iid"
CLASS_NONIID = "class_noniid"


@dataclass(frozen=True)
class PartitionSpec:
    assignments: dict[int, list[int]]
    classes_per_client: dict[int, frozenset[int]]
    mode: str
    seed: int
    cpc: int | None = None  # configured classes per client, non-IID only

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(self.assignments[c]) for c in sorted(self.assignments)]

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "n_clients": self.n_clients,
            "classes_per_client": self.cpc,
            "assignments": {str(c): list(map(int, idx)) for c, idx in sorted(self.assignments.items())},
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json()))
        return path


def _classes_seen(assignments, labels):
    if labels is None:
        return {c: frozenset() for c in assignments}
    labels = np.asarray(labels)
    return {c: frozenset(int(x) for x in np.unique(labels[idx])) for c, idx in assignments.items()}


def partition_iid(n_samples: int, n_clients: int, seed: int, labels=None) -> PartitionSpec:
    """Seeded shuffle, then a contiguous split into near-equal parts."""
    if n_clients < 1:
        raise InfeasiblePartitionError("n_clients must be >= 1")
    if n_samples < n_clients:
        raise InfeasiblePartitionError(f"{n_samples} samples cannot cover {n_clients} clients")
    perm = np.random.default_rng(seed).permutation(n_samples)
    parts = np.array_split(perm, n_clients)
    assignments = {c: sorted(int(i) for i in part) for c, part in enumerate(parts)}
    return PartitionSpec(assignments, _classes_seen(assignments, labels), IID, seed)


def shards_per_class(n_classes: int, n_clients: int, cpc: int) -> int:
    total = n_clients * cpc
    if cpc < 1 or n_clients < 1:
        raise InfeasiblePartitionError("n_clients and classes_per_client must be >= 1")
    if cpc > n_classes:
        raise InfeasiblePartitionError(
            f"classes_per_client={cpc} exceeds the {n_classes} available classes"
        )
    if total % n_classes:
        raise InfeasiblePartitionError(
            f"n_clients * classes_per_client = {n_clients} * {cpc} = {total} is not divisible "
            f"by n_classes = {n_classes}, so shards per class is not an integer"
        )
    return total // n_classes


def partition_by_class(labels, n_clients: int, classes_per_client: int, seed: int) -> PartitionSpec:
    """Label-sorted sharding: each client receives ``classes_per_client``
    shards drawn from distinct classes.

    Every class is cut into ``S = n_clients * cpc / n_classes`` shards
    (leftover samples go one each to the lowest-indexed shards). Shards are
    laid out class-major in a randomly permuted class order and position
    ``p`` goes to slot ``p mod n_clients``; since ``S <= n_clients`` the
    ``cpc`` shards landing in one slot always belong to different classes.
    Slots are then mapped to client ids through a random permutation.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    n_classes = len(classes)
    s = shards_per_class(n_classes, n_clients, classes_per_client)
    counts = {int(c): int((labels == c).sum()) for c in classes}
    small = [c for c, k in counts.items() if k < s]
    if small:
        raise InfeasiblePartitionError(
            f"class {small[0]} has {counts[small[0]]} samples, fewer than the {s} shards per class"
        )
    gen = np.random.default_rng(seed)
    class_order = gen.permutation(classes)
    shards = []
    for c in class_order:
        idx = np.flatnonzero(labels == c)
        idx = idx[gen.permutation(len(idx))]
        shards.extend((int(c), part) for part in np.array_split(idx, s))
    slot_to_client = gen.permutation(n_clients)
    assignments = {int(c): [] for c in range(n_clients)}
    classes_per = {int(c): set() for c in range(n_clients)}
    for pos, (c, part) in enumerate(shards):
        client = int(slot_to_client[pos % n_clients])
        assignments[client].extend(int(i) for i in part)
        classes_per[client].add(c)
    assignments = {c: sorted(v) for c, v in assignments.items()}
    return PartitionSpec(assignments, {c: frozenset(v) for c, v in classes_per.items()},
                         CLASS_NONIID, seed, classes_per_client)


def client_dataset(spec: PartitionSpec, client_id: int, train_set) -> list:
    try:
        idx = spec.assignments[client_id]
    except KeyError:
        raise KeyError(f"unknown client {client_id}") from None
    return [train_set[i] for i in idx]


def load_partition(path) -> dict:
    return json.loads(Path(path).read_text())
