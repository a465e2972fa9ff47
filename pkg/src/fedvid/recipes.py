"""Desk-scale analogues of the published analyses, one recipe per id.

Each recipe runs the pretrainings and probes it needs with pinned seeds and
writes a bundle into its output directory: ``report.md``, one or more CSV
tables and PNG figures.
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import numpy as np

from . import experiment, plotting
from .aggregation import FEDAVG_BASELINE, FEDVSSL
from .config import RunConfig
from .evaluation import (evaluate_retrieval, linear_probe, loss_landscape,
                         perturb_and_eval)
from .params import load_checkpoint
from .partition import CLASS_NONIID, IID

log = logging.getLogger(__name__)

RECIPES = ("table2", "table4", "fig3", "fig4", "fig5", "fig6")
TABLE4_GRID = [(0.0, 0), (1.0, 0), (0.0, 1), (1.0, 1), (0.9, 0), (0.9, 1)]


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)
    return path


def _md_table(header, rows) -> str:
    fmt = [lambda v: f"{v:.4f}" if isinstance(v, float) else str(v)]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in rows:
        lines.append("| " + " | ".join(fmt[0](v) for v in r) + " |")
    return "\n".join(lines)


def _fedavg(cfg: RunConfig) -> RunConfig:
    return cfg.with_overrides(aggregation={"strategy": FEDAVG_BASELINE, "partial_update": False})


def _fedvssl(cfg: RunConfig, alpha: float, beta: int) -> RunConfig:
    return cfg.with_overrides(aggregation={"strategy": FEDVSSL, "alpha": alpha, "beta": beta,
                                           "partial_update": True})


def _retrieval(cfg: RunConfig, weights):
    train, test = experiment.dataset(cfg.dataset)
    return evaluate_retrieval(weights, list(train), list(test), cfg.evaluation.ks)


def _probe(cfg: RunConfig, weights) -> float:
    train, test = experiment.dataset(cfg.dataset)
    return linear_probe(weights, list(train), list(test), cfg.probe_config()).accuracy


def table2(cfg: RunConfig, out: Path, seeds=(0, 1, 2)) -> dict:
    """IID vs label-shard non-IID pretraining, three seeds each."""
    rows, by_mode = [], {IID: [], CLASS_NONIID: []}
    for mode in (IID, CLASS_NONIID):
        for s in seeds:
            c = cfg.with_overrides(partition={"mode": mode, "seed": s}, seeds={"master_seed": s})
            res = experiment.pretrain(c)
            rep = _retrieval(c, res.state.global_weights)
            by_mode[mode].append(rep.recall_at_k[1])
            rows.append([mode, s, rep.recall_at_k[1], rep.recall_at_k.get(5, float("nan"))])
    _write_csv(out / "table2.csv", ["mode", "seed", "R@1", "R@5"], rows)
    summary = []
    for mode, vals in by_mode.items():
        summary.append([mode, float(np.mean(vals)), float(min(vals)), float(max(vals)),
                        float(max(vals) - min(vals))])
    _write_csv(out / "table2_summary.csv", ["mode", "mean_R@1", "min", "max", "spread"], summary)
    iid, non = by_mode[IID], by_mode[CLASS_NONIID]
    overlap = max(min(iid), min(non)) <= min(max(iid), max(non))
    plotting.bar_chart([IID, CLASS_NONIID], {"R@1": [np.mean(iid), np.mean(non)]},
                       out / "table2", "R@1",
                       errors={"R@1": [[np.mean(iid) - min(iid), np.mean(non) - min(non)],
                                       [max(iid) - np.mean(iid), max(non) - np.mean(non)]]})
    text = ["# IID vs non-IID pretraining", "",
            _md_table(["mode", "seed", "R@1", "R@5"], rows), "",
            _md_table(["mode", "mean R@1", "min", "max", "spread"], summary), "",
            f"Seed ranges overlap: {overlap}", ""]
    (out / "report.md").write_text("\n".join(text))
    return {"by_mode": by_mode, "overlap": overlap}


def table4(cfg: RunConfig, out: Path) -> dict:
    """FedAvg baseline against the (alpha, beta) grid of the blended strategy."""
    settings = [("FedAvg (baseline)", _fedavg(cfg))]
    settings += [(f"FedVSSL(a={a:g},b={b})", _fedvssl(cfg, a, b)) for a, b in TABLE4_GRID]
    rows = []
    for name, c in settings:
        res = experiment.pretrain(c)
        rep = _retrieval(c, res.state.global_weights)
        rows.append([name, rep.recall_at_k[1], rep.recall_at_k.get(5, float("nan")),
                     _probe(c, res.state.global_weights)])
        log.info("%s: %s", name, rows[-1][1:])
    header = ["method", "R@1", "R@5", "linear_probe"]
    _write_csv(out / "table4.csv", header, rows)
    plotting.bar_chart([r[0] for r in rows], {"R@1": [r[1] for r in rows], "R@5": [r[2] for r in rows]},
                       out / "table4", "retrieval recall")
    (out / "report.md").write_text("# Aggregation ablation\n\n" + _md_table(header, rows) + "\n")
    return {"rows": rows}


def _train_pair(cfg: RunConfig):
    """Centralized and FedAvg-baseline (full aggregation) models."""
    cen = experiment.centralized(cfg).weights
    fed = experiment.pretrain(_fedavg(cfg)).state.global_weights
    return {"centralized": cen, "fedavg": fed}


def fig3(cfg: RunConfig, out: Path) -> dict:
    """Filter-normalized loss landscapes of centralized vs FedAvg models."""
    e = cfg.evaluation
    _, test = experiment.dataset(cfg.dataset)
    videos = list(test)[: e.landscape_samples]
    result = {}
    for name, w in _train_pair(cfg).items():
        grid = loss_landscape(w, videos, cfg.task, cfg.dataset, grid=e.landscape_grid,
                              span=tuple(e.landscape_range), seed=e.landscape_seed)
        grid.write_csv(out / f"landscape_{name}.csv")
        plotting.contour_grid(grid.a, grid.b, grid.loss, out / f"landscape_{name}", title=name)
        c = len(grid.a) // 2
        result[name] = {"center": grid.center_loss, "edge_mean": float(np.mean(
            [grid.loss[0, c], grid.loss[-1, c], grid.loss[c, 0], grid.loss[c, -1]]))}
    rows = [[k, v["center"], v["edge_mean"], v["edge_mean"] - v["center"]] for k, v in result.items()]
    header = ["model", "center_loss", "mean_loss_at_axis_ends", "rise"]
    _write_csv(out / "fig3_summary.csv", header, rows)
    (out / "report.md").write_text("# Loss landscape\n\n" + _md_table(header, rows) + "\n")
    return result


def fig4(cfg: RunConfig, out: Path) -> dict:
    """R@1 under Gaussian weight perturbation for centralized and federated models."""
    train, test = experiment.dataset(cfg.dataset)
    models = _train_pair(cfg)
    models["fedvssl"] = experiment.pretrain(cfg).state.global_weights
    levels = cfg.evaluation.perturbation_levels
    curves = {}
    for name, w in models.items():
        curve = perturb_and_eval(w, levels, cfg.evaluation.perturbation_seed, list(train), list(test))
        curves[name] = curve.recall_at_1
    rows = [[lv] + [curves[n][i] for n in curves] for i, lv in enumerate(levels)]
    _write_csv(out / "fig4.csv", ["level"] + list(curves), rows)
    plotting.line_chart({n: (list(levels), c) for n, c in curves.items()}, out / "fig4",
                        "perturbation level k", "R@1")
    drops = {n: c[0] - c[1] for n, c in curves.items() if len(c) > 1}
    text = ["# Perturbation stability", "", _md_table(["level"] + list(curves), rows), "",
            "Drop in R@1 between the first two levels: "
            + ", ".join(f"{n}={d:+.4f}" for n, d in drops.items()), ""]
    (out / "report.md").write_text("\n".join(text))
    return {"curves": curves, "levels": list(levels)}


def fig5(cfg: RunConfig, out: Path, evals: int = 10) -> dict:
    """R@1 against communication rounds, with the centralized model as target."""
    rounds = cfg.federation.rounds
    every = max(1, rounds // evals)
    target = _retrieval(cfg, experiment.centralized(cfg).weights).recall_at_k[1]
    series, rows, reach = {}, [], {}
    for name, c in (("fedavg", _fedavg(cfg)), ("fedvssl", cfg)):
        c = c.with_overrides(federation={"checkpoint_every": every})
        run_dir = out / "runs" / name
        experiment.pretrain(c, run_dir)
        xs, ys = [], []
        for r in range(0, rounds + 1, every):
            w, _ = load_checkpoint(run_dir / f"ckpt_round_{r}.ckpt.json")
            xs.append(r)
            ys.append(_retrieval(c, w).recall_at_k[1])
            rows.append([name, r, ys[-1]])
        series[name] = (xs, ys)
        reach[name] = next((x for x, y in zip(xs, ys) if y >= target), None)
    _write_csv(out / "fig5.csv", ["method", "round", "R@1"], rows)
    plotting.line_chart(series, out / "fig5", "round", "R@1", hline=(target, "centralized"))
    text = ["# Rounds to centralized retrieval", "", f"Centralized R@1: {target:.4f}", ""]
    text += [f"- {n}: first evaluated round at or above target = {reach[n]}" for n in reach]
    (out / "report.md").write_text("\n".join(text) + "\n")
    return {"target": target, "series": series, "rounds_to_target": reach}


def fig6(cfg: RunConfig, out: Path) -> dict:
    """Spread of client-to-global L2 distances per round, backbone vs head."""
    res = experiment.pretrain(_fedavg(cfg))
    rows = [[r.round, r.div_backbone_mean, r.div_backbone_std, r.div_head_mean, r.div_head_std]
            for r in res.records]
    _write_csv(out / "fig6.csv", ["round", "backbone_mean", "backbone_std", "head_mean", "head_std"], rows)
    xs = [r[0] for r in rows]
    plotting.line_chart({"backbone": (xs, [r[2] for r in rows]), "head": (xs, [r[4] for r in rows])},
                        out / "fig6", "round", "std of L2 distance")
    cv = {}
    for name, col in (("backbone", 2), ("head", 4)):
        vals = np.array([r[col] for r in rows])
        cv[name] = float(vals.std() / vals.mean()) if vals.mean() > 0 else math.nan
    text = ["# Client divergence", "",
            "Coefficient of variation of the per-round std over the run "
            f"(lower = more consistent): backbone={cv['backbone']:.4f}, head={cv['head']:.4f}", ""]
    (out / "report.md").write_text("\n".join(text))
    return {"rows": rows, "cv": cv}


_RUNNERS = {"table2": table2, "table4": table4, "fig3": fig3, "fig4": fig4, "fig5": fig5, "fig6": fig6}


def reproduce(recipe: str, cfg: RunConfig, out_dir) -> dict:
    if recipe not in _RUNNERS:
        raise KeyError(f"unknown recipe {recipe!r}; valid ids: {', '.join(RECIPES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    return _RUNNERS[recipe](cfg, out)
