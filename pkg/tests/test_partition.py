import json

import numpy as np
import pytest

from fedvid.errors import InfeasiblePartitionError
from fedvid.partition import (CLASS_NONIID, IID, client_dataset, load_partition,
                              partition_by_class, partition_iid, shards_per_class)


def check_cover(spec, n_samples):
    seen = [i for c in sorted(spec.assignments) for i in spec.assignments[c]]
    assert sorted(seen) == list(range(n_samples))  # disjoint and exact cover
    for idx in spec.assignments.values():
        assert idx == sorted(idx)


def random_feasible(gen):
    while True:
        n_classes = int(gen.integers(2, 12))
        cpc = int(gen.integers(1, n_classes + 1))
        n_clients = int(gen.integers(1, 30))
        if (n_clients * cpc) % n_classes == 0:
            s = n_clients * cpc // n_classes
            counts = gen.integers(s, s + 20, size=n_classes)
            labels = np.repeat(np.arange(n_classes), counts)
            return gen.permutation(labels), n_clients, cpc


class TestIID:
    def test_equal_split(self):
        assert partition_iid(100, 4, 0).sizes() == [25, 25, 25, 25]

    def test_near_equal_split(self):
        sizes = partition_iid(101, 4, 0).sizes()
        assert sorted(sizes, reverse=True) == [26, 25, 25, 25]

    def test_cover_random(self):
        gen = np.random.default_rng(0)
        for _ in range(20):
            n, k = int(gen.integers(10, 300)), int(gen.integers(1, 10))
            spec = partition_iid(n, k, int(gen.integers(1000)))
            check_cover(spec, n)
            assert max(spec.sizes()) - min(spec.sizes()) <= 1

    def test_too_few_samples(self):
        with pytest.raises(InfeasiblePartitionError):
            partition_iid(3, 4, 0)


class TestByClass:
    def test_four_classes_two_clients(self):
        labels = np.repeat(np.arange(4), 25)
        spec = partition_by_class(labels, 2, 2, seed=0)
        assert spec.sizes() == [50, 50]
        check_cover(spec, 100)
        for c, idx in spec.assignments.items():
            assert len(set(labels[idx])) == 2
            assert spec.classes_per_client[c] == frozenset(labels[idx].tolist())

    def test_random_feasible_configs(self):
        gen = np.random.default_rng(42)
        for _ in range(50):
            labels, n_clients, cpc = random_feasible(gen)
            spec = partition_by_class(labels, n_clients, cpc, int(gen.integers(10_000)))
            check_cover(spec, len(labels))
            for c, idx in spec.assignments.items():
                assert len(set(labels[idx].tolist())) == cpc

    def test_same_seed_same_assignment(self):
        labels = np.repeat(np.arange(8), 10)
        a = partition_by_class(labels, 4, 2, 7)
        b = partition_by_class(labels, 4, 2, 7)
        assert a.assignments == b.assignments
        assert a.assignments != partition_by_class(labels, 4, 2, 8).assignments

    def test_divisibility_error_names_constraint(self):
        labels = np.repeat(np.arange(32), 10)
        with pytest.raises(InfeasiblePartitionError, match="not divisible"):
            partition_by_class(labels, 20, 2, 0)

    def test_class_too_small(self):
        labels = np.array([0, 0, 0, 1])
        with pytest.raises(InfeasiblePartitionError, match="fewer than"):
            partition_by_class(labels, 4, 2, 0)

    def test_cpc_exceeds_classes(self):
        with pytest.raises(InfeasiblePartitionError):
            shards_per_class(4, 2, 5)

    def test_400_class_dry_run(self):
        # 400 classes, 100 clients, 8 classes each; label histogram only.
        gen = np.random.default_rng(0)
        counts = np.full(400, 571)
        counts[gen.choice(400, 100, replace=False)] += 1  # 228_500 = 2285 * 100
        labels = np.repeat(np.arange(400), counts)
        assert shards_per_class(400, 100, 8) == 2
        spec = partition_by_class(labels, 100, 8, 0)
        assert abs(np.mean(spec.sizes()) - len(labels) / 100) <= 1
        assert np.mean(spec.sizes()) == 2285
        assert all(len(v) == 8 for v in spec.classes_per_client.values())


def test_json_round_trip_and_client_dataset(tmp_path):
    labels = np.repeat(np.arange(4), 5)
    spec = partition_by_class(labels, 2, 2, 1)
    doc = load_partition(spec.save(tmp_path / "partition.json"))
    assert doc["mode"] == CLASS_NONIID and doc["classes_per_client"] == 2
    assert {int(k): v for k, v in doc["assignments"].items()} == spec.assignments
    data = list(range(100, 120))
    assert client_dataset(spec, 0, data) == [100 + i for i in spec.assignments[0]]
    with pytest.raises(KeyError):
        client_dataset(spec, 5, data)
    assert json.loads(partition_iid(10, 2, 0).save(tmp_path / "i.json").read_text())["mode"] == IID
