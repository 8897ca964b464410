"""Command-line entry point: ``graphleak <verb> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..graphs import load_tudataset
from ..synthetic import write_synthetic
from .config import ATTACKS, load_config
from .pipeline import Runner, StageError
from .report import report

log = logging.getLogger("graphleak")


def _runner(args) -> Runner:
    config = load_config(args.config, dataset_root=args.dataset_root, seed=args.seed)
    return Runner(config, args.output)


def cmd_ingest(args):
    if args.config:
        config = load_config(args.config, dataset_root=args.dataset_root)
        root, names = config.dataset_root, config.datasets
    else:
        if not args.dataset:
            raise SystemExit("ingest needs --config or at least one --dataset")
        root, names = args.dataset_root or "data", args.dataset
    for name in names:
        print(json.dumps(load_tudataset(root, name).stats(), sort_keys=True))


def cmd_train_target(args):
    runner = _runner(args)
    runner.run(workers=args.workers, attacks=[], defend=False, transfer=False)
    print(runner.run_dir)


def cmd_attack(args):
    runner = _runner(args)
    runner.run(workers=args.workers, attacks=[args.kind], defend=False, transfer=args.transfer)
    print(runner.run_dir)


def cmd_defend(args):
    runner = _runner(args)
    runner.run(workers=args.workers, attacks=[], defend=True, transfer=False)
    print(runner.run_dir)


def cmd_run(args):
    runner = _runner(args)
    runner.run(workers=args.workers)
    print(report(runner.run_dir, make_plots=not args.no_plots))


def cmd_report(args):
    run_dir = args.run_dir or _runner(args).run_dir
    if not Path(run_dir, "tables").is_dir():
        raise SystemExit(f"no tables under {run_dir}; run an experiment first")
    print(report(run_dir, make_plots=not args.no_plots))


def cmd_make_synthetic(args):
    path = write_synthetic(args.dataset_root or "data", args.name, args.num_graphs, args.kind,
                           args.min_nodes, args.max_nodes, args.seed or 0)
    print(path)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (YAML or JSON)")
    common.add_argument("--dataset-root", help="directory containing TUDataset folders")
    common.add_argument("--output", default="runs", help="root for run directories (default: runs)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--workers", type=int, default=1, help="parallel worker processes for cells")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="graphleak", description="Inference attacks against graph embeddings.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("ingest", parents=[common], help="load datasets and print statistics")
    p.add_argument("--dataset", action="append", help="dataset name (repeatable)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-target", parents=[common], help="train (or load cached) target models")
    p.set_defaults(func=cmd_train_target)

    p = sub.add_parser("attack", parents=[common], help="run one attack family")
    p.add_argument("kind", choices=ATTACKS)
    p.add_argument("--transfer", action="store_true", help="also compute the configured transfer matrices")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", parents=[common], help="Laplace-noise defense sweep")
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("run", parents=[common], help="full pipeline followed by the report")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", parents=[common], help="summarize a finished run")
    p.add_argument("--run-dir", help="run directory (default: derived from --config and --output)")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("make-synthetic", parents=[common], help="write a synthetic dataset in TU layout")
    p.add_argument("--name", required=True)
    p.add_argument("--num-graphs", type=int, default=300)
    p.add_argument("--kind", choices=("molecule", "protein"), default="molecule")
    p.add_argument("--min-nodes", type=int, default=6)
    p.add_argument("--max-nodes", type=int, default=30)
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.verb not in ("ingest", "make-synthetic") and not (args.config or getattr(args, "run_dir", None)):
        print(f"error: {args.verb} needs --config", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
