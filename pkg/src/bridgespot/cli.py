"""Command-line entry point: ``bridgespot <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .datasynth import dump_sample, make_splits
from .harness import training as T
from .harness.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .harness.config import ConfigError, ExperimentConfig, load_config
from .harness.evaluation import evaluate
from .harness.experiments import ABLATIONS, RunCache, compare_paradigms, run_ablation
from .spotter import Spotter, TrainingAbort

log = logging.getLogger("bridgespot")

SEED_REQUIRED = {"train-det", "train-rec", "train-bridge", "compare"}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--seed", type=int, help="master seed")
    for f in fields(ExperimentConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type in (bool, "bool"):
            p.add_argument(flag, dest=f.name, type=_bool, metavar="BOOL")
        else:
            kind = {"int": int, "float": float}.get(f.type if isinstance(f.type, str)
                                                    else f.type.__name__, str)
            p.add_argument(flag, dest=f.name, type=kind)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bridgespot",
                                     description="Bridged two-step text spotting on "
                                                 "synthetic glyph scenes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render split samples to PGM + box files")
    _add_config_flags(p)
    p.add_argument("--split", default="test")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--out", type=Path, required=True)

    for name, what in (("train-det", "detector"), ("train-rec", "recognizer")):
        p = sub.add_parser(name, help=f"train the {what} stage")
        _add_config_flags(p)
        p.add_argument("--out", type=Path, required=True, help="checkpoint path")

    p = sub.add_parser("train-bridge", help="train bridge and adapters on frozen stages")
    _add_config_flags(p)
    p.add_argument("--det", type=Path, required=True)
    p.add_argument("--rec", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="evaluate a pipeline on the test split")
    _add_config_flags(p)
    p.add_argument("--det", type=Path, help="detector checkpoint (two-step)")
    p.add_argument("--rec", type=Path, help="recognizer checkpoint (two-step)")
    p.add_argument("--system", type=Path, help="bridged or end-to-end checkpoint")

    for name in ("compare", "ablate"):
        p = sub.add_parser(name, help="paradigm comparison" if name == "compare"
                           else "ablation grid")
        _add_config_flags(p)
        if name == "ablate":
            p.add_argument("which", choices=ABLATIONS)
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--cache", type=Path, help="reuse/store stage checkpoints here")
        p.add_argument("--record-timing", action="store_true",
                       help="fill the wall_s CSV column (breaks byte-reproducibility)")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(ExperimentConfig)}
    return load_config(args.config, **overrides)


def _cmd_gen_data(args, cfg):
    split = make_splits(cfg.seed, cfg.split_sizes, cfg.scene)[args.split]
    for i in range(min(args.count, len(split))):
        dump_sample(split[i], args.out, f"{args.split}_{i:05d}")
    print(f"wrote {min(args.count, len(split))} samples to {args.out}")


def _cmd_train(args, cfg):
    train = T.train_detector if args.command == "train-det" else T.train_recognizer
    res = train(cfg)
    save_checkpoint(args.out, res.checkpoint)
    print(json.dumps({"checkpoint": str(args.out), "final_loss": res.losses[-1] if res.losses
                      else None, "wall_s": res.wall_s}))


def _cmd_train_bridge(args, cfg):
    system, res = T.train_bridge(load_checkpoint(args.det), load_checkpoint(args.rec), cfg)
    save_checkpoint(args.out, res.checkpoint)
    print(json.dumps({"checkpoint": str(args.out),
                      "trainable_params": system.store.count(trainable_only=True),
                      "total_params": system.store.count(), "wall_s": res.wall_s}))


def _cmd_eval(args, cfg):
    if args.system:
        system = T.load_system(load_checkpoint(args.system))
        spotter = system.spotter()
        extra = dict(trainable_params=system.store.count(trainable_only=True),
                     total_params=system.store.count())
    elif args.det and args.rec:
        det = T.load_detector(load_checkpoint(args.det))
        rec = T.load_recognizer(load_checkpoint(args.rec))
        spotter = Spotter(det, rec)
        n = det.store.count() + rec.store.count()
        extra = dict(trainable_params=n, total_params=n)
    else:
        raise ConfigError("eval needs --system, or both --det and --rec")
    report = evaluate(spotter, T.splits_for(cfg)["test"], **extra)
    print(json.dumps(report.as_dict(), indent=2))


def _cmd_compare(args, cfg):
    cache = RunCache(args.cache) if args.cache else None
    compare_paradigms(cfg, args.out, cache, args.record_timing)
    print((args.out / "compare.csv").read_text(), end="")


def _cmd_ablate(args, cfg):
    cache = RunCache(args.cache) if args.cache else None
    run_ablation(cfg, args.which, args.out, cache, args.record_timing)
    print((args.out / f"ablation_{args.which}.csv").read_text(), end="")


COMMANDS = {"gen-data": _cmd_gen_data, "train-det": _cmd_train, "train-rec": _cmd_train,
            "train-bridge": _cmd_train_bridge, "eval": _cmd_eval, "compare": _cmd_compare,
            "ablate": _cmd_ablate}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command in SEED_REQUIRED and args.seed is None:
        parser.error(f"{args.command} requires --seed")
    try:
        cfg = config_from_args(args)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, CheckpointError, TrainingAbort, FileNotFoundError) as exc:
        print(f"bridgespot: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
