"""Command dispatcher: ``python3 -m kddt <verb> [--config PATH] [--seed N] [--out DIR] [--force]``."""
from __future__ import annotations

import argparse
import sys

from ..errors import KddtError
from .config import ExperimentConfig
from .stages import (cmd_ablate, cmd_detect, cmd_evaluate, cmd_prepare, cmd_pretrain_lm, cmd_pretrain_vae,
                     cmd_train_dt, resolve_out)

VERBS = ("prepare", "pretrain-lm", "pretrain-vae", "train-dt", "detect", "evaluate", "ablate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kddt", description="Packet anomaly detection pipeline.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment configuration (defaults when omitted)")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", default="kddt-out", help="output directory (KDDT_OUT takes precedence)")
    common.add_argument("--force", action="store_true", help="recompute stage outputs that already exist")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb, parents=[common])
        if verb == "detect":
            p.add_argument("--stream", help="JSONL or PCAP stream to label (default: the prepared test split)")
        if verb == "ablate":
            p.add_argument("--variants", default="full,no_dtm,no_kd")
            p.add_argument("--repeats", type=int, default=10)
    return parser


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return cfg if args.seed is None else cfg.with_run(seed=args.seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        out = resolve_out(args.out)
        if args.verb == "prepare":
            cmd_prepare(cfg, out, args.force, echo=True)
        elif args.verb == "pretrain-lm":
            print(cmd_pretrain_lm(cfg, out, args.force).directory)
        elif args.verb == "pretrain-vae":
            print(cmd_pretrain_vae(cfg, out, args.force).directory)
        elif args.verb == "train-dt":
            print(cmd_train_dt(cfg, out, args.force).directory)
        elif args.verb == "detect":
            print(cmd_detect(cfg, out, args.stream, args.force).files["detections"])
        elif args.verb == "evaluate":
            cmd_evaluate(cfg, out, echo=True)
        else:
            cmd_ablate(cfg, out, [v.strip() for v in args.variants.split(",") if v.strip()], args.repeats,
                       args.force, echo=True)
    except KddtError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0
