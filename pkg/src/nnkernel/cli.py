"""Command-line entry point: ``nnkernel <command> [options]``.

Every RunConfig key is also a flag (``--k-train 50``, ``--no-dropout-active``).
``--config file.json`` supplies a base configuration that flags override.
Exit status is 2 for invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import MISSING, fields

import numpy as np

from . import ann
from .bank import NeighbourTable, diagnostics, embed
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, ValidationError
from .data import Dataset, load_dataset, prepare_splits
from .training import TrainingDiverged, enroll, evaluate, format_report, train, tune_sigma

log = logging.getLogger("nnkernel")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run configuration")
    group.add_argument("--config", help="JSON file with RunConfig keys; flags override it")
    for f in fields(RunConfig):
        default = f.default if f.default is not MISSING else f.default_factory()
        flag = "--" + f.name.replace("_", "-")
        kwargs = dict(dest=f.name, default=argparse.SUPPRESS)
        if isinstance(default, bool):
            group.add_argument(flag, action=argparse.BooleanOptionalAction, **kwargs)
        elif isinstance(default, list):
            group.add_argument(flag, nargs="+", type=int, **kwargs)
        elif isinstance(default, (int, float)):
            group.add_argument(flag, type=type(default), **kwargs)
        else:
            group.add_argument(flag, type=str, **kwargs)


def _config_from(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(RunConfig.from_json(args.config).to_dict())
    names = {f.name for f in fields(RunConfig)}
    values.update({k: v for k, v in vars(args).items() if k in names})
    return RunConfig.from_dict(values)


def _emit(report: dict, path=None) -> None:
    print(format_report(report))
    text = json.dumps(report, sort_keys=True)
    print(text)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def cmd_train(args) -> int:
    config = _config_from(args)
    if not config.data:
        raise ValidationError("train needs --data")
    dataset = prepare_splits(load_dataset(config.data), config)
    result = train(config, dataset)
    for record in result.history:
        log.info("epoch %(epoch)d train loss %(train_loss).6g", record)
    if config.output:
        save_checkpoint(result.checkpoint, config.output)
        print(f"checkpoint written to {config.output}")
    if (dataset.split == "test").any():
        _emit(evaluate(result.checkpoint, dataset, config.protocol), args.report)
    return 0


def _eval_dataset(ckpt, path, split_all: bool) -> Dataset:
    dataset = load_dataset(path)
    if split_all:
        return Dataset(dataset.features, dataset.labels, np.full(len(dataset.labels), "test"),
                       list(dataset.label_names))
    return prepare_splits(dataset, ckpt.config)


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = _eval_dataset(ckpt, args.data, args.all_rows)
    _emit(evaluate(ckpt, dataset, args.mode or ckpt.config.protocol), args.report)
    return 0


def cmd_tune_sigma(args) -> int:
    config = _config_from(args)
    if not config.data:
        raise ValidationError("tune-sigma needs --data")
    dataset = prepare_splits(load_dataset(config.data), config)
    best = tune_sigma(config, dataset, args.grid)
    print(json.dumps({"sigma": best}))
    return 0


def cmd_index_build(args) -> int:
    if args.checkpoint:
        points = load_checkpoint(args.checkpoint).bank.centres
    elif args.data:
        points = load_dataset(args.data).features
    else:
        raise ValidationError("index-build needs --checkpoint or --data")
    index = ann.build_graph(points, args.max_degree)
    ann.save_graph(index, args.output)
    degrees = [len(a) for a in index.adjacency]
    print(json.dumps({"nodes": index.node_count, "max_degree": index.max_degree,
                      "mean_degree": float(np.mean(degrees)), "output": args.output}))
    return 0


def cmd_diagnose(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    bank = ckpt.bank
    if args.data:
        dataset = prepare_splits(load_dataset(args.data), ckpt.config)
        features, labels = dataset.subset("train", required=True)
        from .kernel import CentreBank

        bank = CentreBank(embed(ckpt.model, features), labels, np.ones(len(labels)), bank.version)
    k = min(args.k, bank.size - 1)
    rows, _ = ann.knn_table(bank.centres, bank.centres, k, exclude_self=True)
    dist, kval = diagnostics(bank, NeighbourTable(rows, bank.version), ckpt.config.sigma)
    print(json.dumps({"k": k, "mean_distance": dist, "mean_kernel": kval}))
    return 0


def cmd_enroll(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    new = load_dataset(args.data)
    # Each distinct label in the file becomes a new class after the existing ones.
    labels = new.labels + ckpt.bank.n_classes
    updated = enroll(ckpt, new.features, labels)
    save_checkpoint(updated, args.output)
    print(json.dumps({"classes": updated.bank.n_classes, "centres": updated.bank.size,
                      "new_labels": {str(n): int(i) + ckpt.bank.n_classes for i, n in enumerate(new.label_names)},
                      "output": args.output}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nnkernel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an embedding network")
    _add_config_flags(p)
    p.add_argument("--report", help="also write the JSON test report here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="accuracy or NMI/Recall@K of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["classification", "transfer"])
    p.add_argument("--all-rows", action="store_true", help="evaluate every row instead of the test split")
    p.add_argument("--report", help="also write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune-sigma", help="pick sigma by validation loss")
    _add_config_flags(p)
    p.add_argument("--grid", nargs="+", type=float, required=True)
    p.set_defaults(func=cmd_tune_sigma)

    p = sub.add_parser("index-build", help="build and save an NNKG graph index")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--max-degree", type=int, default=32)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_index_build)

    p = sub.add_parser("diagnose", help="mean distance and kernel value to nearest centres")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="recompute centres from this data's train split")
    p.add_argument("--k", type=int, default=200)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("enroll", help="add new classes to a checkpoint's bank without training")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_enroll)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
