"""Command-line entry point: ``premsel {ingest,train,eval,rank,stats,selfcheck}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 failed check (a
self-check or a training guard).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ABLATIONS, RunConfig, UnknownMode, load_config
from .ingest import IngestError, load_file
from .metrics import ZeroVariance, mean_ci, rank_candidates, standardize_scores
from .numerics import CheckpointError
from .selfcheck import run_all
from .stats import dataset_stats
from .tokenizer import Reject, Verdict, build_file_graph, read_cache, tokenize_file, write_cache
from .training import NonFiniteLoss, evaluate, load_model, split_corpus, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("premsel")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class HoleNotFound(DataError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _resolve_config(args) -> RunConfig:
    try:
        cfg = load_config(args.config)
    except (OSError, ValueError, TypeError) as e:
        raise UsageError(f"cannot read config {args.config}: {e}") from None
    changes = {}
    if getattr(args, "data_dir", None):
        changes["data_dir"] = args.data_dir
    if getattr(args, "cache", None):
        changes["cache"] = args.cache
    if getattr(args, "checkpoint_dir", None):
        changes["checkpoint_dir"] = args.checkpoint_dir
    elif args.command == "train" and args.checkpoint:
        # train writes a series of checkpoints, so --checkpoint names their directory
        if len(args.checkpoint) != 1:
            raise UsageError("train takes one checkpoint directory")
        changes["checkpoint_dir"] = args.checkpoint[0]
    if getattr(args, "ablation", None):
        changes["model"] = RunConfig.from_dict(
            {"model": {**cfg.to_dict()["model"], "ablations": tuple(args.ablation)}}).model
    train_changes = {k: getattr(args, k) for k in ("epochs", "max_steps")
                     if getattr(args, k, None) is not None}
    if train_changes:
        changes["train"] = RunConfig.from_dict(
            {"train": {**cfg.to_dict()["train"], **train_changes}}).train
    return cfg.replace(**changes) if changes else cfg


def _json_files(data_dir: str) -> list[Path]:
    root = Path(data_dir)
    if not root.is_dir():
        raise DataError(f"data directory not found: {root}")
    return sorted(root.rglob("*.json"))


def _load_cache(path: str):
    if not Path(path).is_file():
        raise DataError(f"corpus cache not found: {path} (run 'premsel ingest' first)")
    try:
        return read_cache(path)
    except (ValueError, KeyError) as e:
        raise DataError(f"unreadable corpus cache {path}: {e}") from None


def _split(cfg: RunConfig):
    header, records = _load_cache(cfg.cache)
    oversized = {id(g) for g, big in records if big}
    graphs = [g for g, _ in records]
    return split_corpus(graphs, cfg.split_ratio, cfg.split_seed, cfg.max_tokens,
                        size=lambda g: cfg.max_tokens + 1 if id(g) in oversized else 0)


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    cfg = _resolve_config(args)
    out = args.out or cfg.cache
    verdicts: list[tuple[str, Verdict]] = []
    kept = []
    for path in _json_files(cfg.data_dir):
        try:
            raw = load_file(path)
        except (IngestError, ValueError) as e:
            verdicts.append((str(path), Verdict(Reject.SCHEMA, str(e))))
            continue
        graph, verdict = tokenize_file(raw, cfg.max_tokens, cfg.reduction)
        verdicts.append((raw.name, verdict))
        if verdict.accepted or verdict.reason is Reject.TOO_LARGE:
            kept.append((graph, verdict))
    counts = Counter("accept" if v.accepted else v.reason.value for _, v in verdicts)
    for name, v in verdicts:
        holes = ""
        if v.accepted:
            graph = next(g for g, vv in kept if vv is v)
            holes = f" ({graph.num_holes} holes)"
        detail = f": {v.detail}" if v.detail and not v.accepted else ""
        print(f"{name}\t{v}{holes}{detail}")
    print("summary\t" + ", ".join(f"{k}={counts[k]}" for k in sorted(counts)))
    if counts["accept"] == 0:
        print("error: no file was accepted", file=sys.stderr)
        return EXIT_DATA
    write_cache(out, kept, cfg.max_tokens)
    print(f"wrote {len(kept)} files to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    split = _split(cfg)
    if not split.train:
        raise DataError("training split is empty")
    out = Path(cfg.checkpoint_dir)
    print(f"train={len(split.train)} id={len(split.id_eval)} ood={len(split.ood_eval)} "
          f"ablations={','.join(cfg.model.ablations) or 'none'} seed={args.seed}")

    def report(rec):
        parts = [f"epoch {rec['epoch']:3d}", f"loss {rec['loss']:.4f}"]
        for name in ("id", "ood"):
            if name in rec:
                parts.append(f"{name} AveP {rec[name]['avep']:.4f} R-Prec {rec[name]['rprec']:.4f}")
        print("  ".join(parts), flush=True)

    eval_sets = {k: v for k, v in (("id", split.id_eval), ("ood", split.ood_eval)) if v}
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump({**cfg.to_dict(), "seed": args.seed}, fh, sort_keys=True, indent=2)
    try:
        result = train(split.train, cfg, args.seed, eval_sets, out, report)
    except NonFiniteLoss as e:
        print(f"error: {e}; earlier checkpoints are kept in {out}", file=sys.stderr)
        return EXIT_CHECK
    if result.best_epoch is not None:
        print(f"best epoch {result.best_epoch} (id AveP {result.best_avep:.4f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    if not args.checkpoint:
        raise UsageError("eval needs at least one --checkpoint")
    split = _split(cfg)
    sets = {"id": split.id_eval, "ood": split.ood_eval}
    results: dict[str, list] = {k: [] for k in sets}
    for ckpt in args.checkpoint:
        model = load_model(ckpt)
        for name, graphs in sets.items():
            if graphs:
                results[name].append(evaluate(model, graphs, name))
    for name, reports in results.items():
        if not reports:
            continue
        avep = mean_ci([r.avep for r in reports])
        rprec = mean_ci([r.rprec for r in reports])
        pm = lambda m: f"{m[0]:.4f}" if len(reports) < 2 else f"{m[0]:.4f} ± {m[1]:.4f}"
        print(f"{name}\tAveP {pm(avep)}\tR-Prec {pm(rprec)}"
              f"\trandom {reports[0].random_avep:.4f}\tholes {len(reports[0].scored)} "
              f"(skipped {reports[0].skipped})\truns {len(reports)}")
    if args.dump:
        with open(args.dump, "w", encoding="utf-8") as fh:
            for name, reports in results.items():
                for run, rep in enumerate(reports):
                    try:
                        z = rep.standardized()
                    except (ZeroVariance, ValueError):
                        continue
                    _, labels = rep.pair_scores()
                    for value, label in zip(z["z"], labels):
                        fh.write(json.dumps({"split": name, "run": run, "z": float(value),
                                             "positive": bool(label)}) + "\n")
    return EXIT_OK


def cmd_rank(args) -> int:
    if not args.checkpoint or len(args.checkpoint) != 1:
        raise UsageError("rank needs exactly one --checkpoint")
    if args.file is None or args.hole is None:
        raise UsageError("rank needs --file and --hole")
    cfg = _resolve_config(args)
    model = load_model(args.checkpoint[0])
    try:
        graph = build_file_graph(load_file(args.file), cfg.reduction)
    except IngestError as e:
        raise DataError(str(e)) from None
    holes = graph.hole_indices
    if not 0 <= args.hole < len(holes):
        raise HoleNotFound(f"hole {args.hole} not found; {graph.name} has {len(holes)} holes")
    index = holes[args.hole]
    entry = graph.entries[index]
    enc = model.encode_file(graph, holes=[index])
    scores = model.legal_scores(graph, enc)[0]
    ranking = rank_candidates(scores)
    try:
        z = standardize_scores(scores, np.zeros(len(scores), bool))["z"]
    except (ZeroVariance, ValueError):
        z = np.zeros(len(scores))
    print(f"{graph.name} hole {args.hole} ({entry.name}), {len(scores)} candidates")
    for r, c in enumerate(ranking[: args.top_k], start=1):
        mark = "+" if c in entry.positives else ("-" if entry.premises else " ")
        print(f"{r:4d}  {mark}  {scores[c]:10.4f}  z={z[c]:+.3f}  {graph.entries[c].name}")
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = _resolve_config(args)
    files = []
    for path in _json_files(cfg.data_dir):
        try:
            files.append(load_file(path))
        except (IngestError, ValueError) as e:
            print(f"skipping {path}: {e}", file=sys.stderr)
    if not files:
        raise DataError(f"no readable files under {cfg.data_dir}")
    report = dataset_stats(files, cfg.reduction)
    total = Counter()
    for f in report.files:
        total.update(imports=f.imports, definitions=f.definitions, holes=f.holes)
    print(f"files {len(report.files)}  imports {total['imports']}  definitions "
          f"{total['definitions']}  holes {total['holes']}  "
          f"median AST length {int(np.median(report.ast_lengths)) if report.ast_lengths else 0}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for rec in report.to_records():
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
        print(f"wrote records to {args.out}")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    results = run_all(quick=not args.full)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--data-dir", metavar="PATH", help="directory of exported JSON files")
    common.add_argument("--cache", metavar="PATH", help="tokenized corpus cache")
    common.add_argument("--checkpoint", metavar="PATH", action="append",
                        help="checkpoint file (eval accepts several)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--ablation", action="append", choices=ABLATIONS, metavar="NAME",
                        help=f"one of {', '.join(ABLATIONS)}; repeatable")
    common.add_argument("--top-k", type=int, default=10)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="premsel", description="Premise selection over exported proof corpora.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="tokenize and filter a corpus")
    p.add_argument("--out", metavar="PATH", help="cache path (defaults to --cache)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="train on the cached corpus")
    p.add_argument("--checkpoint-dir", metavar="PATH", help="output directory (or --checkpoint)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate checkpoints on held-out splits")
    p.add_argument("--dump", metavar="PATH", help="write standardized pair scores as NDJSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rank", parents=[common], help="rank premises for one hole")
    p.add_argument("--file", metavar="PATH")
    p.add_argument("--hole", type=int, metavar="INDEX")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("stats", parents=[common], help="corpus statistics")
    p.add_argument("--out", metavar="PATH", help="write NDJSON records")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("selfcheck", parents=[common], help="run the built-in oracle checks")
    p.add_argument("--full", action="store_true", help="full instance counts")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # usage errors and --help/--version; report the code instead of exiting
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"premsel: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except UnknownMode as e:
        print(f"premsel: bad configuration: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as e:
        print(f"premsel: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
