"""Command-line interface: ``molcpt {vocab,pretrain,finetune,zeroshot,sweep}``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import load_dataset, scaffold_split
from .fragment import MotifVocabulary, Rules, build_vocabulary
from .pipeline import (DEFAULT_GRID, SWEEP_KEYS, PromptModel, RunConfig, config_dict, finetune_run, pretrain_for,
                       sweep, sweep_tsv)
from .pretrain import PretrainConfig, Task, pretrain_run
from .smiles import ParseError

log = logging.getLogger("molcpt")

EXIT_INPUT = 3
EXIT_CHECKPOINT = 4
EXIT_NUMERIC = 5


def parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.replace(" ", "").split(",") if s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed required")
    return seeds


def _values(key: str, spec: str) -> list:
    cast = SWEEP_KEYS[key]
    if ":" in spec and cast is not str:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"range for {key!r} must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError(f"range step for {key!r} must be positive")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [cast(round(start + i * step, 12)) for i in range(count)]
    return [cast(v) for v in spec.split(",") if v]


def parse_grid(text: str | None):
    """``key=a,b,c;key=start:stop:step`` flags, a TSV file of configurations, or the default grid."""
    if text is None:
        return dict(DEFAULT_GRID)
    path = Path(text)
    if path.is_file():
        rows = list(csv.DictReader(io.StringIO(path.read_text(encoding="utf-8")), delimiter="\t"))
        for row in rows:
            for k in row:
                if k not in SWEEP_KEYS:
                    raise ValueError(f"unknown sweep parameter {k!r}")
        return [{k: SWEEP_KEYS[k](v) for k, v in row.items()} for row in rows]
    grid = {}
    for item in text.split(";"):
        if not item.strip():
            continue
        key, _, spec = item.partition("=")
        key = key.strip()
        if key not in SWEEP_KEYS or not spec:
            raise ValueError(f"bad grid entry {item!r}")
        grid[key] = _values(key, spec.strip())
    if not grid:
        raise ValueError("empty grid")
    return grid


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV with a 'smiles' column and 0/1 task columns")
    p.add_argument("--tasks", type=lambda s: [t for t in s.split(",") if t],
                   help="comma-separated task columns; default is every column except 'smiles'")


def _load_data(args):
    return load_dataset(args.data, tasks=args.tasks)


def _load_vocab(path: str, rules: str) -> MotifVocabulary:
    return MotifVocabulary.load(path, rules)


def _load_pretrained(path: str, vocab: MotifVocabulary | None) -> PromptModel:
    ckpt = load_checkpoint(path, vocab.content_hash() if vocab is not None else None)
    return PromptModel.from_checkpoint(ckpt)


def _run_config(args, regime: str, **extra) -> RunConfig:
    return RunConfig(regime=regime, epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, heads=args.heads,
                     ensemble=args.ensemble, orth=args.orth, seeds=args.seeds, rules=args.rules,
                     tau_ans=args.tau_ans, motif_init=args.motif_init, include_empty=args.include_empty,
                     freeze_empty=args.freeze_empty, ffn=args.ffn, **extra)


def cmd_vocab(args) -> None:
    ds = _load_data(args)
    graphs = ds.graphs
    if args.split == "train":
        graphs = [ds.graphs[i] for i in scaffold_split(ds)["train"]]
    vocab = build_vocabulary(graphs, args.rules, args.t)
    vocab.save(args.out)
    log.info("wrote %d motifs (including EMPTY) to %s", len(vocab), args.out)


def cmd_pretrain(args) -> None:
    ds = _load_data(args)
    corpus = [ds.graphs[i] for i in scaffold_split(ds)["train"]]
    cfg = PretrainConfig(dim=args.dim, num_layers=args.layers, lr=args.lr, batch_size=args.batch_size,
                         seed=args.seed)
    result = pretrain_run(corpus, args.task, args.epochs, cfg)
    model = PromptModel(result.encoder, result.head)
    save_checkpoint(model.to_checkpoint({"seed": args.seed, "pretrain_task": args.task,
                                         "pretrain_losses": result.losses}), args.out)
    log.info("pretrained on %d molecules; final loss %s", len(corpus), result.losses[-1] if result.losses else "n/a")


def _finish(args, result, vocab, cfg) -> None:
    if getattr(args, "out", None):
        best = result.best
        save_checkpoint(best.model.to_checkpoint({"seed": best.seed, "config": config_dict(cfg)}), args.out)
    Path(args.metrics).write_text(result.metrics_tsv(), encoding="utf-8")
    print(f"test roc_auc {result.test_mean:.4f} +/- {result.test_std:.4f} over {len(result.runs)} seed(s)")


def cmd_finetune(args) -> None:
    ds = _load_data(args)
    vocab = _load_vocab(args.vocab, args.rules) if args.vocab else None
    if args.regime != "probe" and vocab is None:
        raise ValueError(f"--vocab is required for regime {args.regime}")
    base = _load_pretrained(args.ckpt, vocab)
    cfg = _run_config(args, args.regime, freeze_encoder=args.freeze_encoder, update_head=args.update_head)
    result = finetune_run(ds, cfg, base.encoder, base.head, vocab)
    _finish(args, result, vocab, cfg)


def cmd_zeroshot(args) -> None:
    ds = _load_data(args)
    vocab = _load_vocab(args.vocab, args.rules)
    base = _load_pretrained(args.ckpt, vocab)
    cfg = _run_config(args, "zeroshot")
    result = finetune_run(ds, cfg, base.encoder, base.head, vocab)
    _finish(args, result, vocab, cfg)


def cmd_sweep(args) -> None:
    ds = _load_data(args)
    grid = parse_grid(args.grid)
    scaffold_split(ds)
    base = _run_config(args, args.regime)
    if args.ckpt:
        pre = _load_pretrained(args.ckpt, None)
        encoder, head = pre.encoder, pre.head
    else:
        base = replace(base, pretrain_epochs=args.pretrain_epochs)
        pre = pretrain_for(ds, base)
        encoder, head = pre.encoder, pre.head
    rows = sweep(ds, grid, base, encoder, head, budget=args.budget, seed=args.sample_seed)
    Path(args.metrics).write_text(sweep_tsv(rows), encoding="utf-8")
    if rows:
        best = rows[0]
        print("best " + " ".join(f"{k}={best[k]}" for k in best))


def _add_tuning(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rules", choices=[r.value for r in Rules], default="simple")
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ensemble", type=int, default=1)
    p.add_argument("--orth", type=float, default=0.0)
    p.add_argument("--seeds", type=parse_seeds, default=(0,))
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--tau-ans", type=float, default=1.0)
    p.add_argument("--motif-init", choices=["pretrained", "random"], default="pretrained")
    p.add_argument("--include-empty", action="store_true")
    p.add_argument("--freeze-empty", action="store_true")
    p.add_argument("--ffn", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="molcpt", description="Motif-prompted molecular property prediction.")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vocab", help="build a motif vocabulary")
    _add_data(p)
    p.add_argument("--rules", choices=[r.value for r in Rules], default="simple")
    p.add_argument("--t", type=int, default=10)
    p.add_argument("--split", choices=["train", "all"], default="train",
                   help="count motifs over the scaffold-split training part (default) or every molecule")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("pretrain", help="self-supervised pretraining on the training split")
    _add_data(p)
    p.add_argument("--task", choices=[t.value for t in Task], default="contrastive")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--layers", type=int, default=5)
    p.add_argument("--lr", type=float, default=PretrainConfig.lr)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="probe, full prompt tuning, or frozen-encoder prompt tuning")
    _add_data(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab")
    p.add_argument("--regime", choices=["probe", "molcpt", "frozen"], default="molcpt")
    p.add_argument("--freeze-encoder", action="store_true", help="probe only: keep the encoder fixed")
    head = p.add_mutually_exclusive_group()
    head.add_argument("--update-head", dest="update_head", action="store_true", default=None)
    head.add_argument("--fix-head", dest="update_head", action="store_false")
    p.add_argument("--out")
    p.add_argument("--metrics", required=True)
    _add_tuning(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("zeroshot", help="class-mean answers, no gradient steps")
    _add_data(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--metrics", required=True)
    p.add_argument("--out")
    _add_tuning(p)
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("sweep", help="grid or random search over tuning parameters")
    _add_data(p)
    p.add_argument("--grid", help="'t=0:100:10;heads=2,4,8' or a TSV of configurations")
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--ckpt", help="pretrained checkpoint; pretrains in-process when absent")
    p.add_argument("--pretrain-epochs", type=int, default=50)
    p.add_argument("--regime", choices=["probe", "molcpt", "frozen", "zeroshot"], default="frozen")
    p.add_argument("--metrics", required=True)
    _add_tuning(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CheckpointError as exc:
        return _fail("checkpoint", exc, EXIT_CHECKPOINT)
    except FloatingPointError as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except (OSError, ParseError, ValueError, KeyError) as exc:
        return _fail("input", exc, EXIT_INPUT)
    return 0


def _fail(category: str, exc: Exception, code: int) -> int:
    message = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error: {category}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
