"""Command-line interface.

Subcommands: synth, normalize, vocab, train, eval, score, ablate.
The only environment variable consulted is LEO_LOG (debug/info/warning),
which sets logging verbosity.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .config import load_config
from .data import load_dataset
from .metrics import render_report, render_score_dump
from .model import ModelFormatError, load_model, save_model
from .normalize import NormalizeError, build_vocabulary, normalize_source
from .synth import write_corpus
from .train import TrainingError, evaluate, score_records, train


def _config_overrides(args) -> dict:
    """CLI flags that shadow config file keys; None values are dropped."""
    return {
        "seed": args.seed,
        "clusters": getattr(args, "k", None),
        "contrastive_weight": getattr(args, "contrastive_weight", None),
        "contrastive_temp": getattr(args, "tau", None),
        "relax_temp": getattr(args, "nu", None),
        "contrastive_variant": getattr(args, "variant", None),
        "ablate_cd": True if getattr(args, "ablate_cd", False) else None,
    }


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--data", required=True, help="training dataset (JSON lines)")
    p.add_argument("--model", required=True, help="output model path")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--k", type=int, help="cluster count")
    p.add_argument("--lambda", dest="contrastive_weight", type=float,
                   help="contrastive loss weight")
    p.add_argument("--tau", type=float, help="contrastive temperature")
    p.add_argument("--nu", type=float, help="gate relaxation temperature")
    p.add_argument("--variant", choices=("cluster", "supervised-class"),
                   help="contrastive grouping variant")
    p.add_argument("--ablate-cd", action="store_true", dest="ablate_cd",
                   help="disable the distribution step and contrastive term")
    p.add_argument("--id-test", help="optional ID test set to evaluate after training")
    p.add_argument("--ood-test", help="optional OOD test set to evaluate after training")
    p.add_argument("--out", help="report output path (with --id-test/--ood-test)")
    p.add_argument("--repeats", type=int, default=1,
                   help="train/evaluate cycles to average (seeds seed..seed+n-1)")


def _cmd_synth(args) -> int:
    paths = write_corpus(args.out, args.n, args.n_ood, args.seed)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def _cmd_normalize(args) -> int:
    records = load_dataset(args.data)
    lines = []
    for r in records:
        fn = normalize_source(r.code)
        lines.append(f"{r.sample_id}\t" + " ".join(fn.render().split()))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_vocab(args) -> int:
    records = load_dataset(args.data)
    vocab = build_vocabulary([normalize_source(r.code) for r in records],
                             args.max)
    text = "\n".join(vocab.tokens) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _write_eval_outputs(report, rows, out_path) -> None:
    text = render_report(report)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
        with open(report.dump_path, "w", encoding="utf-8") as fh:
            fh.write(render_score_dump(rows))
    sys.stdout.write(text)


def _cmd_train(args, force_ablation: bool = False) -> int:
    overrides = _config_overrides(args)
    if force_ablation:
        overrides["ablate_cd"] = True
    config = load_config(args.config, overrides)
    if args.repeats < 1:
        raise ValueError("--repeats must be at least 1")
    records = load_dataset(args.data)
    reports = []
    for i in range(args.repeats):
        run_config = config if i == 0 else load_config(
            args.config, {**overrides, "seed": config.seed + i})
        artifact = train(run_config, records)
        if i == 0:
            save_model(artifact, args.model)
            print(f"model saved: {args.model}")
        if args.id_test and args.ood_test:
            dump = (args.out + ".scores") if args.out else ""
            report, rows = evaluate(artifact, args.id_test, args.ood_test,
                                    dump_path=dump)
            reports.append(report)
            if i == 0:
                _write_eval_outputs(report, rows, args.out)
    if len(reports) > 1:
        print(f"averages over {len(reports)} runs:")
        for name in ("fpr_at_tpr95", "auroc", "aupr"):
            mean = float(np.mean([getattr(r, name) for r in reports]))
            print(f"{name},{mean!r}")
    return 0


def _cmd_eval(args) -> int:
    artifact = load_model(args.model)
    dump = (args.out + ".scores") if args.out else ""
    report, rows = evaluate(artifact, args.id_test, args.ood_test,
                            dump_path=dump, use_msp=args.msp)
    _write_eval_outputs(report, rows, args.out)
    return 0


def _cmd_score(args) -> int:
    artifact = load_model(args.model)
    records = load_dataset(args.data)
    if not records:
        raise ValueError(f"{args.data} is empty")
    scores, decisions = score_records(artifact, records, use_msp=args.msp)
    rows = [(r.sample_id, args.population, float(s), str(d))
            for r, s, d in zip(records, scores, decisions)]
    text = render_score_dump(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leo",
        description="Statement-selection OOD detection for C-like source code")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=1000,
                   help="samples per in-distribution family")
    p.add_argument("--n-ood", type=int, default=500, help="OOD samples")
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("normalize", help="print normalized token streams")
    p.add_argument("--data", required=True)
    p.add_argument("--out")

    p = sub.add_parser("vocab", help="build a vocabulary listing")
    p.add_argument("--data", required=True)
    p.add_argument("--max", type=int, default=10000)
    p.add_argument("--out")

    p = sub.add_parser("train", help="train a model")
    _add_train_flags(p)

    p = sub.add_parser("ablate", help="train with the ablation forced on")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a model on ID + OOD test sets")
    p.add_argument("--model", required=True)
    p.add_argument("--id-test", required=True)
    p.add_argument("--ood-test", required=True)
    p.add_argument("--out", help="report path (scores go to <out>.scores)")
    p.add_argument("--msp", action="store_true",
                   help="score with 1 - max softmax probability instead")

    p = sub.add_parser("score", help="score one dataset file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--population", choices=("id", "ood"), default="id")
    p.add_argument("--out")
    p.add_argument("--msp", action="store_true")
    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("LEO_LOG", "").strip().lower()
    levels = {"debug": logging.DEBUG, "info": logging.INFO,
              "warning": logging.WARNING}
    if level_name:
        logging.basicConfig(level=levels.get(level_name, logging.INFO),
                            format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "normalize": _cmd_normalize,
        "vocab": _cmd_vocab,
        "train": _cmd_train,
        "ablate": lambda a: _cmd_train(a, force_ablation=True),
        "eval": _cmd_eval,
        "score": _cmd_score,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, TrainingError, ModelFormatError, NormalizeError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
