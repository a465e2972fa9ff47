"""Acceptance criteria, one test per criterion.

Every test records a PASS/FAIL line; the lines are printed together at the
end of the session (see ``conftest.pytest_terminal_summary``).
"""

import functools
import json
import math
import time

import numpy as np
import pytest
from conftest import MINI_DATA, MINI_SPEC, TINY_DATA, fd_relative_errors

from fedvid import experiment
from fedvid.aggregation import (FEDAVG_BASELINE, FEDVSSL, AggregationConfig, ClientUpdate,
                                GlobalState, aggregate_round, swa_update)
from fedvid.config import default_config
from fedvid.data import labels_of
from fedvid.engine import EngineConfig, run_pretraining
from fedvid.evaluation import (evaluate_retrieval, filter_normalize, fit_head, knn_ranking,
                               knn_retrieval, landscape_directions, loss_landscape,
                               perturb_and_eval)
from fedvid.model import ModelSpec, init_weights, make_eval_batches, task_loss_and_grads
from fedvid.params import BACKBONE, HEAD, WeightSet, load_checkpoint
from fedvid.partition import partition_by_class, partition_iid
from fedvid.pretext import TASKS, make_batch

RESULTS = {}


def criterion(num, title):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
                RESULTS[num] = (False, title, msg[:160], time.perf_counter() - t0)
                raise
            RESULTS[num] = (True, title, detail or "", time.perf_counter() - t0)
        return wrapper
    return deco


def summary_lines():
    return [f"[{'PASS' if ok else 'FAIL'}] C{n:02d} {title}: {detail} ({secs:.1f}s)"
            for n, (ok, title, detail, secs) in sorted(RESULTS.items())]


# -- shared desk-scale runs ----------------------------------------------------


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    cfg = default_config()
    out = tmp_path_factory.mktemp("default_run")
    t0 = time.perf_counter()
    res = experiment.pretrain(cfg, out)
    return cfg, res, out, time.perf_counter() - t0


def random_instance(gen, heads=False):
    n_tensors = int(gen.integers(1, 4))
    shapes = {f"b{i}": tuple(int(x) for x in gen.integers(1, 6, size=int(gen.integers(1, 3))))
              for i in range(n_tensors)}
    k = int(gen.integers(1, 8))

    def ws():
        return WeightSet({n: (BACKBONE, gen.standard_normal(s) * gen.uniform(0.1, 10)) for n, s in shapes.items()})

    prev = ws()
    ups = [ClientUpdate(i, ws(), int(gen.integers(1, 3000)), float(gen.uniform(0, 5))) for i in range(k)]
    return prev, ups


# -- criteria --------------------------------------------------------------------


@criterion(1, "aggregation identities (FedAvg / loss-weighted)")
def test_c01_aggregation_identities():
    gen = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        prev, ups = random_instance(gen)
        n = [u.sample_count for u in ups]
        w_avg = [c / sum(n) for c in n]
        e = [math.exp(-u.mean_loss) for u in ups]
        w_loss = [x / sum(e) for x in e]
        assert abs(sum(w_avg) - 1) <= 1e-12 and abs(sum(w_loss) - 1) <= 1e-12
        for alpha, coeffs in ((0.0, w_avg), (1.0, w_loss)):
            cfg = AggregationConfig(FEDVSSL, alpha=alpha, beta=0, server_lr=1.0)
            st, rep = aggregate_round(GlobalState(0, prev), ups, cfg)
            assert abs(sum(rep.fedavg_weights.values()) - 1) <= 1e-12
            assert abs(sum(rep.loss_weights.values()) - 1) <= 1e-12
            for name in prev:
                oracle = sum(c * u.weights[name] for c, u in zip(coeffs, ups))
                d = float(np.max(np.abs(st.global_weights[name] - oracle)))
                worst = max(worst, d)
                assert d <= 1e-12
    elapsed = time.perf_counter() - t0
    assert elapsed < 10
    return f"100 instances, max |diff| {worst:.2e}, {elapsed:.2f}s"


@criterion(2, "single-client recovery (N=M=1, 10 rounds)")
def test_c02_single_client_recovery(tiny_data, tmp_path):
    train, _ = tiny_data
    cfg = EngineConfig(rounds=10, clients_per_round=1, n_clients=1, output_dir=str(tmp_path),
                       checkpoint_every=1, record_wire=True,
                       aggregation=AggregationConfig(alpha=0.9, beta=0, server_lr=1.0))
    run_pretraining(cfg, train, partition_iid(len(train), 1, 0), ModelSpec(), TINY_DATA)
    for r in range(1, 11):
        g, _ = load_checkpoint(tmp_path / f"ckpt_round_{r}.ckpt.json")
        up = json.loads((tmp_path / f"wire_round_{r}.json").read_text())["uploads"][0]["params"]
        for name in g:
            client = np.asarray(up[name]["data"], dtype=np.float64).reshape(g[name].shape)
            assert g[name].tobytes() == client.tobytes(), f"round {r}, {name}"
    return "bitwise equal in all 10 rounds"


@criterion(3, "equal-loss degeneracy (alpha sweep)")
def test_c03_equal_loss_degeneracy():
    gen = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        prev, ups = random_instance(gen)
        loss, count = float(gen.uniform(0, 4)), int(gen.integers(1, 500))
        ups = [ClientUpdate(u.client_id, u.weights, count, loss) for u in ups]
        outs = [aggregate_round(GlobalState(0, prev), ups, AggregationConfig(alpha=a))[0].global_weights
                for a in (0.0, 0.25, 0.5, 1.0)]
        for o in outs[1:]:
            for name in prev:
                d = float(np.max(np.abs(o[name] - outs[0][name])))
                worst = max(worst, d)
                assert d <= 1e-12
    return f"50 instances, max |diff| {worst:.2e}"


@criterion(4, "SWA correctness (beta=1 midpoint, beta=0 identity)")
def test_c04_swa():
    gen = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        prev, ups = random_instance(gen)
        alpha = float(gen.uniform())
        cfg0 = AggregationConfig(alpha=alpha, beta=0)
        cand, _ = aggregate_round(GlobalState.initial(prev, cfg0), ups, cfg0)
        cand = cand.global_weights
        assert swa_update(cand, [prev], 0) is cand
        cfg1 = AggregationConfig(alpha=alpha, beta=1)
        out, _ = aggregate_round(GlobalState.initial(prev, cfg1), ups, cfg1)
        for name in prev:
            d = float(np.max(np.abs(out.global_weights[name] - (prev[name] + cand[name]) / 2)))
            worst = max(worst, d)
            assert d <= 1e-12
    return f"100 instances, max |diff| {worst:.2e}"


@criterion(5, "partial-update invariant (no head on the server)")
def test_c05_partial_update(tiny_data, tmp_path):
    train, _ = tiny_data
    part = partition_by_class(labels_of(train), 4, 2, 0)
    cfg = EngineConfig(rounds=20, clients_per_round=2, n_clients=4, output_dir=str(tmp_path),
                       checkpoint_every=1, record_wire=True,
                       aggregation=AggregationConfig(partial_update=True))
    res = run_pretraining(cfg, train, part, ModelSpec(), TINY_DATA)
    head_values = set()
    for st in res.client_states.values():
        if st.head_weights is not None:
            for _, _, a in st.head_weights.items():
                head_values.update(float(x) for x in a.ravel() if x != 0.0)
    violations, scanned = [], 0
    for path in sorted(tmp_path.iterdir()):
        if not path.name.endswith(".json"):
            continue
        doc = json.loads(path.read_text())
        blocks = [doc["params"]] if "params" in doc else [u["params"] for u in doc.get("uploads", [])]
        for params in blocks:
            for name, rec in params.items():
                scanned += 1
                if rec["role"] == HEAD or name.startswith("head."):
                    violations.append(f"{path.name}:{name}")
                if head_values.intersection(rec["data"]):
                    violations.append(f"{path.name}:{name} carries a head value")
    for w in (res.state.global_weights, *res.state.swa_history):
        if HEAD in w.roles():
            violations.append("global state holds head entries")
    assert scanned > 0 and not violations, violations[:5]
    return f"{scanned} server-side tensors scanned, 0 violations"


@criterion(6, "gradient oracle (central differences, h=1e-5)")
def test_c06_gradients(mini_data):
    t0 = time.perf_counter()
    train, _ = mini_data
    gen = np.random.default_rng(6)
    worst, checked = 0.0, 0
    for task in TASKS:
        w = init_weights(MINI_SPEC, 60 + TASKS.index(task), tasks=(task,))
        for b in range(5):
            idx = gen.choice(len(train), 3, replace=False)
            batch = make_batch(task, [train[i] for i in idx], gen, MINI_DATA, idx)
            errs = fd_relative_errors(w, batch, weight_decay=1e-4)
            worst, checked = max(worst, float(errs.max())), checked + errs.size
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-4, f"max relative error {worst:.2e}"
    assert elapsed < 60
    return f"{checked} coordinates, max rel err {worst:.2e}, {elapsed:.1f}s"


@criterion(7, "KNN oracle equivalence (ties included)")
def test_c07_knn():
    gen = np.random.default_rng(7)
    for inst in range(20):
        n_tr = int(gen.integers(2, 150))
        n_te = int(gen.integers(1, 200 - n_tr + 1))
        d = int(gen.integers(1, 5))
        if inst % 2:
            tr, te = gen.integers(0, 3, (n_tr, d)).astype(float), gen.integers(0, 3, (n_te, d)).astype(float)
        else:
            tr, te = gen.standard_normal((n_tr, d)), gen.standard_normal((n_te, d))
        trl, tel = gen.integers(0, 5, n_tr), gen.integers(0, 5, n_te)
        ks = (1, 5)
        rep = knn_retrieval(tr, trl, te, tel, ks)
        full = [[float(sum((te[q, c] - tr[j, c]) ** 2 for c in range(d))) for j in range(n_tr)]
                for q in range(n_te)]
        for k in ks:
            hits = 0
            for q in range(n_te):
                nearest = sorted(range(n_tr), key=lambda j: (full[q][j], j))[:k]
                hits += any(trl[j] == tel[q] for j in nearest)
            assert rep.recall_at_k[k] == hits / n_te
        kk = min(5, n_tr)
        ranking = knn_ranking(tr, te, kk)
        for q in range(n_te):
            assert ranking[q].tolist() == sorted(range(n_tr), key=lambda j: (full[q][j], j))[:kk]
    return "20 instances identical to brute force"


@criterion(8, "partition invariants + 400/100/8 dry run")
def test_c08_partition():
    gen = np.random.default_rng(8)
    done = 0
    while done < 50:
        n_classes = int(gen.integers(2, 16))
        cpc = int(gen.integers(1, n_classes + 1))
        n_clients = int(gen.integers(1, 40))
        if (n_clients * cpc) % n_classes:
            continue
        s = n_clients * cpc // n_classes
        labels = gen.permutation(np.repeat(np.arange(n_classes), gen.integers(s, s + 30, n_classes)))
        spec = partition_by_class(labels, n_clients, cpc, int(gen.integers(1 << 30)))
        union = sorted(i for idx in spec.assignments.values() for i in idx)
        assert union == list(range(len(labels)))
        for idx in spec.assignments.values():
            assert len(set(labels[idx].tolist())) == cpc
        done += 1
    counts = np.full(400, 571)
    counts[gen.choice(400, 100, replace=False)] += 1
    labels = np.repeat(np.arange(400), counts)
    spec = partition_by_class(labels, 100, 8, 0)
    mean = float(np.mean(spec.sizes()))
    assert abs(mean - len(labels) / 100) <= 1
    assert all(len(c) == 8 for c in spec.classes_per_client.values())
    return f"50 configs ok; dry run mean client size {mean:g} (total {len(labels)})"


@criterion(9, "determinism (two desk-scale runs)")
def test_c09_determinism(default_run, tmp_path):
    cfg, _, out_a, _ = default_run
    experiment.pretrain(cfg, tmp_path)
    strip = lambda p: [line.rsplit(",", 1)[0] for line in p.read_text().splitlines()]  # noqa: E731
    assert strip(out_a / "metrics.csv") == strip(tmp_path / "metrics.csv")
    a, _ = load_checkpoint(out_a / "final.ckpt.json")
    b, _ = load_checkpoint(tmp_path / "final.ckpt.json")
    for name in a:
        assert a[name].tobytes() == b[name].tobytes()
    pa = json.loads((out_a / "final.ckpt.json").read_text())["params"]
    pb = json.loads((tmp_path / "final.ckpt.json").read_text())["params"]
    assert pa == pb
    return f"{cfg.federation.rounds} rounds, metrics.csv and final checkpoint identical"


@criterion(10, "desk-scale training signal (R@1 >= 3x chance)")
def test_c10_training_signal(default_run):
    cfg, res, _, secs = default_run
    train, test = experiment.dataset(cfg.dataset)
    r1 = evaluate_retrieval(res.state.global_weights, list(train), list(test), (1,)).recall_at_k[1]
    chance = 1 / cfg.dataset.n_classes
    assert secs <= 20 * 60
    assert r1 >= 3 * chance - 1e-12, f"R@1 {r1:.4f} < {3 * chance:.4f}"
    f = cfg.federation
    return (f"R@1 {r1:.4f} vs 3x chance {3 * chance:.4f} (N={f.n_clients}, M={f.clients_per_round}, "
            f"R={f.rounds}, Cpc={cfg.partition.classes_per_client}), run {secs:.0f}s")


@criterion(11, "perturbation curve trend")
def test_c11_perturbation(default_run):
    cfg, res, _, _ = default_run
    train, test = experiment.dataset(cfg.dataset)
    w = res.state.global_weights
    levels = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    curve = perturb_and_eval(w, levels, 0, list(train), list(test))
    base = evaluate_retrieval(w, list(train), list(test), (1,)).recall_at_k[1]
    drop = curve.recall_at_1[0] - curve.recall_at_1[1]
    detail = ("R@1 by level " + ", ".join(f"{x:.4f}" for x in curve.recall_at_1)
              + f"; drop 0->0.1 = {drop:+.4f} (reported only)")
    assert curve.recall_at_1[0] == base, detail
    assert curve.recall_at_1[-1] <= curve.recall_at_1[0], "R@1(0.5) > R@1(0): " + detail
    return detail


@criterion(12, "landscape sanity (center loss, filter norms)")
def test_c12_landscape(default_run):
    cfg, res, _, _ = default_run
    train, test = experiment.dataset(cfg.dataset)
    backbone = res.state.global_weights
    head = fit_head(backbone, list(train), cfg.task, cfg.model_spec(), cfg.training_config(),
                    cfg.dataset, 1, 0)
    w = backbone.merge(head)
    videos = list(test)[:64]
    grid = loss_landscape(w, videos, cfg.task, cfg.dataset, grid=3, seed=0)
    batches = make_eval_batches(videos, cfg.task, cfg.dataset, 0)
    ckpt_loss = sum(task_loss_and_grads(w, b)[0] * len(b) for b in batches) / len(videos)
    assert abs(grid.loss[1, 1] - ckpt_loss) <= 1e-12
    worst = 0.0
    (d1, d2), _ = landscape_directions(backbone, 0)
    for d in (d1, d2, filter_normalize(WeightSet({n: (r, np.random.default_rng(1).standard_normal(a.shape))
                                                  for n, r, a in backbone.items()}), backbone)):
        for name in backbone:
            ref = backbone[name].reshape(backbone[name].shape[0], -1) if backbone[name].ndim > 1 \
                else backbone[name].reshape(-1, 1)
            got = d[name].reshape(ref.shape)
            diff = np.abs(np.linalg.norm(got, axis=1) - np.linalg.norm(ref, axis=1))
            worst = max(worst, float(diff.max()))
    assert worst <= 1e-12
    return f"center |diff| {abs(grid.loss[1, 1] - ckpt_loss):.1e}; max row-norm |diff| {worst:.1e}"


@criterion(13, "communication accounting")
def test_c13_bytes(tiny_data):
    train, _ = tiny_data
    part = partition_by_class(labels_of(train), 4, 2, 0)
    out = {}
    for partial in (True, False):
        strategy = FEDVSSL if partial else FEDAVG_BASELINE
        cfg = EngineConfig(rounds=3, clients_per_round=3, n_clients=4,
                           aggregation=AggregationConfig(strategy=strategy, partial_update=partial))
        res = run_pretraining(cfg, train, part, ModelSpec(), TINY_DATA)
        n = res.initial_weights.num_params(BACKBONE) if partial else res.initial_weights.num_params()
        for rec in res.records:
            assert rec.bytes_up == len(rec.selected_clients) * n * 8
            assert rec.bytes_down == rec.bytes_up
        out[partial] = res.records[0].bytes_up
    assert out[True] < out[False]
    return f"per-round bytes_up partial {out[True]} < full {out[False]}"


@criterion(14, "IID vs non-IID near-parity (3 seeds each)")
def test_c14_iid_parity(default_run):
    cfg, res, _, _ = default_run
    train, test = experiment.dataset(cfg.dataset)
    by_mode = {}
    for mode in ("iid", "class_noniid"):
        vals = []
        for seed in (0, 1, 2):
            c = cfg.with_overrides(partition={"mode": mode, "seed": seed}, seeds={"master_seed": seed})
            w = res.state.global_weights if c == cfg else experiment.pretrain(c).state.global_weights
            vals.append(evaluate_retrieval(w, list(train), list(test), (1,)).recall_at_k[1])
        by_mode[mode] = vals
    iid, non = by_mode["iid"], by_mode["class_noniid"]
    delta = abs(np.mean(iid) - np.mean(non))
    spread = max(max(iid) - min(iid), max(non) - min(non))
    overlap = max(min(iid), min(non)) <= min(max(iid), max(non))
    detail = (f"IID {np.mean(iid):.4f} [{min(iid):.4f}, {max(iid):.4f}] vs non-IID {np.mean(non):.4f} "
              f"[{min(non):.4f}, {max(non):.4f}]; |diff| {delta:.4f}, larger spread {spread:.4f}")
    assert overlap and delta < spread, detail
    return detail


if __name__ == "__main__":
    import sys

    code = pytest.main([__file__, "-q"])
    sys.exit(code)
