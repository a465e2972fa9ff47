"""Command-line entry point: ``fedvid <subcommand> ...``.

Exit codes: 0 success, 2 config error, 3 infeasible partition, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import experiment, plotting, recipes
from .aggregation import FEDAVG_BASELINE, FEDVSSL
from .config import RunConfig, default_config, load_config
from .data import dump_dataset
from .errors import CheckpointError, ConfigError, InfeasiblePartitionError
from .evaluation import (divergence_summary, evaluate_retrieval, fit_head, linear_probe,
                         loss_landscape, perturb_and_eval, recompute_divergence)
from .params import HEAD, load_checkpoint

log = logging.getLogger("fedvid")

EXIT_OK, EXIT_CONFIG, EXIT_PARTITION, EXIT_IO = 0, 2, 3, 4


class OutputExistsError(OSError):
    pass


def _parse_list(text: str, conv=float) -> list:
    return [conv(x) for x in text.split(",") if x.strip()]


def parse_range(text: str) -> list[float]:
    """``lo:hi:step`` -> inclusive list, e.g. ``0:0.5:0.1`` -> [0.0, 0.1, ..., 0.5]."""
    parts = [float(x) for x in text.split(":")]
    if len(parts) != 3 or parts[2] <= 0:
        raise ConfigError(f"expected lo:hi:step with step > 0, got {text!r}")
    lo, hi, step = parts
    n = int(round((hi - lo) / step))
    return [round(lo + i * step, 10) for i in range(n + 1)]


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else default_config()


def _ckpt_config(args) -> RunConfig:
    if args.config:
        return load_config(args.config)
    sibling = Path(args.ckpt).parent / "config.json"
    if sibling.exists():
        return load_config(sibling)
    return default_config()


def _check_fresh(path: Path, force: bool):
    if path.exists() and not force:
        if path.is_file() or any(path.iterdir()):
            raise OutputExistsError(f"{path} already exists; pass --force to overwrite")


def _emit(obj, out: str | None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


# -- subcommands ---------------------------------------------------------------


def cmd_partition(args) -> int:
    cfg = _config(args)
    out = Path(args.out or Path(cfg.output_dir) / "partition.json")
    _check_fresh(out, args.force)
    train, _ = experiment.dataset(cfg.dataset)
    part = experiment.build_partition(cfg, train)
    out.parent.mkdir(parents=True, exist_ok=True)
    part.save(out)
    print(f"wrote {out}: {part.n_clients} clients, sizes {min(part.sizes())}..{max(part.sizes())}")
    return EXIT_OK


def _pretrain_overrides(cfg: RunConfig, args) -> RunConfig:
    agg, fed, seeds = {}, {}, {}
    if args.strategy:
        agg["strategy"] = FEDAVG_BASELINE if args.strategy == "fedavg" else FEDVSSL
    if args.alpha is not None:
        agg["alpha"] = args.alpha
    if args.beta is not None:
        agg["beta"] = args.beta
    if args.partial is not None:
        agg["partial_update"] = args.partial
    if args.rounds is not None:
        fed["rounds"] = args.rounds
    if args.seed is not None:
        seeds["master_seed"] = args.seed
    return cfg.with_overrides(aggregation=agg, federation=fed, seeds=seeds)


def cmd_pretrain(args) -> int:
    cfg = _pretrain_overrides(_config(args), args)
    out = Path(args.out or cfg.output_dir)
    _check_fresh(out, args.force)
    res = experiment.pretrain(cfg, out)
    last = res.records[-1].weighted_loss if res.records else float("nan")
    print(f"wrote {out} ({len(res.records)} rounds, final weighted loss {last:.5f})")
    return EXIT_OK


def cmd_centralized(args) -> int:
    cfg = _config(args)
    out = Path(args.out or Path(cfg.output_dir) / "centralized")
    _check_fresh(out, args.force)
    res = experiment.centralized(cfg, out, epochs=args.epochs)
    print(f"wrote {out} ({len(res.epoch_losses) - 1} epochs, final loss {res.epoch_losses[-1]:.5f})")
    return EXIT_OK


def cmd_eval_retrieval(args) -> int:
    cfg = _ckpt_config(args)
    w, meta = load_checkpoint(args.ckpt)
    train, test = experiment.dataset(cfg.dataset)
    rep = evaluate_retrieval(w, list(train), list(test), _parse_list(args.ks, int))
    _emit({"checkpoint": str(args.ckpt), "round": meta.round, **rep.to_json()}, args.out)
    return EXIT_OK


def cmd_eval_probe(args) -> int:
    cfg = _ckpt_config(args)
    if args.epochs is not None:
        cfg = cfg.with_overrides(evaluation={"probe_epochs": args.epochs})
    w, meta = load_checkpoint(args.ckpt)
    train, test = experiment.dataset(cfg.dataset)
    res = linear_probe(w, list(train), list(test), cfg.probe_config())
    _emit({"checkpoint": str(args.ckpt), "round": meta.round, **asdict(res)}, args.out)
    return EXIT_OK


def cmd_probe_perturbation(args) -> int:
    cfg = _ckpt_config(args)
    w, _ = load_checkpoint(args.ckpt)
    train, test = experiment.dataset(cfg.dataset)
    levels = parse_range(args.levels) if args.levels else list(cfg.evaluation.perturbation_levels)
    seed = cfg.evaluation.perturbation_seed if args.seed is None else args.seed
    curve = perturb_and_eval(w, levels, seed, list(train), list(test))
    _emit(asdict(curve), args.out)
    if args.plot:
        plotting.line_chart({"R@1": (curve.levels, curve.recall_at_1)}, args.plot,
                            "perturbation level k", "R@1", formats=(Path(args.plot).suffix[1:] or "svg",))
    return EXIT_OK


def cmd_landscape(args) -> int:
    cfg = _ckpt_config(args)
    w, _ = load_checkpoint(args.ckpt)
    train, test = experiment.dataset(cfg.dataset)
    e = cfg.evaluation
    if not len(w.filter_role(HEAD)):
        log.info("checkpoint has no head; fitting one on the frozen backbone")
        head = fit_head(w, list(train), cfg.task, cfg.model_spec(), cfg.training_config(),
                        cfg.dataset, e.landscape_head_epochs, cfg.seeds.master_seed)
        w = w.merge(head)
    lo, hi = (float(x) for x in args.range.split(":")) if args.range else e.landscape_range
    grid = loss_landscape(w, list(test)[: e.landscape_samples], cfg.task, cfg.dataset,
                          grid=args.grid or e.landscape_grid, span=(lo, hi),
                          seed=e.landscape_seed if args.seed is None else args.seed, one_d=args.one_d)
    out = Path(args.out or Path(args.ckpt).with_name("landscape.csv"))
    grid.write_csv(out)
    print(f"wrote {out}; center loss {grid.center_loss:.6f}")
    return EXIT_OK


def cmd_divergence(args) -> int:
    rows = recompute_divergence(args.run_dir) if args.recompute else divergence_summary(args.run_dir)
    _emit([asdict(r) for r in rows], args.out)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = _config(args)
    if args.rounds is not None:
        cfg = cfg.with_overrides(federation={"rounds": args.rounds})
    if args.figure_id not in recipes.RECIPES:
        raise ConfigError(f"unknown recipe {args.figure_id!r}; valid ids: {', '.join(recipes.RECIPES)}")
    out = Path(args.out or Path(cfg.output_dir) / f"reproduce_{args.figure_id}")
    _check_fresh(out, args.force)
    recipes.reproduce(args.figure_id, cfg, out)
    print(f"wrote {out / 'report.md'}")
    return EXIT_OK


def cmd_dataset_dump(args) -> int:
    cfg = _config(args)
    train, test = experiment.dataset(cfg.dataset)
    out = Path(args.out)
    _check_fresh(out, args.force)
    dump_dataset(train, out, "train")
    dump_dataset(test, out, "test")
    print(f"wrote {len(train)} train and {len(test)} test videos to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedvid", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help, config=True, force=True, out=True):
        sp = sub.add_parser(name, help=help)
        if config:
            sp.add_argument("--config", help="run config JSON (defaults to the desk profile)")
        if force:
            sp.add_argument("--force", action="store_true", help="overwrite existing output")
        if out:
            sp.add_argument("--out", help="output path")
        sp.set_defaults(func=fn)
        return sp

    add("partition", cmd_partition, "write partition.json")

    sp = add("pretrain", cmd_pretrain, "federated pretraining into a run directory")
    sp.add_argument("--strategy", choices=["fedavg", "fedvssl"])
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--beta", type=int)
    sp.add_argument("--partial", action=argparse.BooleanOptionalAction, default=None)
    sp.add_argument("--rounds", type=int)
    sp.add_argument("--seed", type=int)

    sp = add("centralized", cmd_centralized, "pooled-data baseline training")
    sp.add_argument("--epochs", type=int)

    sp = add("eval-retrieval", cmd_eval_retrieval, "KNN clip retrieval R@k", force=False)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--ks", default="1,5")

    sp = add("eval-probe", cmd_eval_probe, "linear probe accuracy", force=False)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--epochs", type=int)

    sp = add("probe-perturbation", cmd_probe_perturbation, "R@1 under weight noise", force=False)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--levels", help="lo:hi:step, e.g. 0:0.5:0.1")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--plot", help="optional chart path (.svg or .png)")

    sp = add("landscape", cmd_landscape, "filter-normalized loss landscape CSV", force=False)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--grid", type=int)
    sp.add_argument("--range", help="lo:hi, e.g. -1:1")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--1d", dest="one_d", action="store_true")

    sp = add("divergence", cmd_divergence, "per-round divergence statistics", config=False, force=False)
    sp.add_argument("--run-dir", required=True)
    sp.add_argument("--recompute", action="store_true",
                    help="recompute from checkpoints and wire records")

    sp = add("reproduce", cmd_reproduce, "run a recipe bundle")
    sp.add_argument("figure_id", help=", ".join(recipes.RECIPES))
    sp.add_argument("--rounds", type=int)

    sp = add("dataset-dump", cmd_dataset_dump, "dump videos as raw f32 plus JSON index", out=False)
    sp.add_argument("--out", required=True)
    return p


def _glue_negative_values(argv: list[str]) -> list[str]:
    # argparse takes "-1:1" for an option; accept "--range -1:1" anyway.
    out, i = [], 0
    while i < len(argv):
        if argv[i] in ("--range", "--levels") and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_glue_negative_values(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfeasiblePartitionError as exc:
        print(f"error: infeasible partition: {exc}", file=sys.stderr)
        return EXIT_PARTITION
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CheckpointError) as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
