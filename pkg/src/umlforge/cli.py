"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 endpoint error.
"""

from __future__ import annotations

import argparse
import errno
import json
import logging
import shutil
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .client import EndpointConfig, run_batch
from .corpus import BudgetExhausted, build_corpus, dump_json, emit_training_config, load_corpus, write_corpus
from .evaluate import (
    Response,
    dump_responses,
    format_csv,
    format_markdown,
    load_report,
    load_responses,
    report_rows,
    score,
)
from .generator import GenConfig, SizeClass
from .grammar import DiagramKind

log = logging.getLogger("umlforge")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ENDPOINT = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_meta(path: Path, **extra) -> None:
    meta = {"created": datetime.now(timezone.utc).isoformat(timespec="seconds"), "version": __version__}
    meta.update(extra)
    path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def cmd_generate(args: argparse.Namespace) -> int:
    config = GenConfig(seed=args.seed, kind=DiagramKind(args.kind), size_class=SizeClass(args.size_class))
    target = args.total or config.target_total
    out: Path = args.out
    if out.exists() and any(out.iterdir()):
        print(f"error: output directory {out} is not empty", file=sys.stderr)
        return EXIT_DATA
    created = not out.exists()
    try:
        try:
            corpus = build_corpus(config, target, allow_partial=args.allow_partial)
        except BudgetExhausted as exc:
            print(f"error: {exc} (use --allow-partial to keep them)", file=sys.stderr)
            return EXIT_DATA
        out.mkdir(parents=True, exist_ok=True)
        write_corpus(corpus, out, jobs=args.jobs)
        _write_meta(out / "generate.meta.json")
    except OSError as exc:
        if exc.errno == errno.ENOSPC:
            print(f"error: disk full while writing {out}; partial output removed", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        if created:
            shutil.rmtree(out, ignore_errors=True)
        else:
            for child in out.iterdir():
                if child.is_dir():
                    shutil.rmtree(child, ignore_errors=True)
                else:
                    child.unlink(missing_ok=True)
        return EXIT_DATA
    m = corpus.manifest
    print(f"{out}: {m.emitted_total} entries ({len(m.train_ids)} train / {len(m.test_ids)} test), "
          f"{m.duplicates_dropped} duplicates dropped")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    if (args.endpoint is None) == (args.responses is None):
        raise UsageError("give exactly one of --endpoint or --responses")
    try:
        corpus = load_corpus(args.corpus)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: cannot read corpus {args.corpus}: {exc}", file=sys.stderr)
        return EXIT_DATA
    m = corpus.manifest
    dataset_label = args.dataset_label or f"{m.config.size_class.value}-{m.config.kind.value}"

    eval_seconds = None
    if args.responses is not None:
        try:
            responses = load_responses(args.responses)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA
        model_label = args.model_label or "replay"
    else:
        cfg = EndpointConfig(
            args.endpoint,
            model=args.model,
            timeout_seconds=args.timeout,
            max_concurrent=args.concurrency,
            max_retries=args.retries,
        )
        batch, timing = run_batch(corpus.test, cfg, args.corpus)
        if not any(r.ok for r in batch):
            first = batch[0]
            print(f"error: endpoint failed for every entry ({first.status}: {first.error})", file=sys.stderr)
            return EXIT_ENDPOINT
        responses = {r.entry_id: Response(r.entry_id, r.raw_text, r.latency_seconds, r.status) for r in batch}
        eval_seconds = timing.total_seconds
        model_label = args.model_label or args.model
        if args.save_responses:
            args.save_responses.write_text(dump_responses(responses.values()), encoding="utf-8")

    started = time.monotonic()
    try:
        report = score(corpus, args.corpus, responses, dataset_label, model_label, eval_seconds, jobs=args.jobs)
    except (KeyError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(dump_json(report), encoding="utf-8")
    _write_meta(
        args.out.with_name(args.out.stem + ".meta.json"),
        scoring_seconds=round(time.monotonic() - started, 3),
    )
    s = report["summary"]
    print(f"{dataset_label} / {model_label}: corpus BLEU {s['corpus_bleu']:.4f}, "
          f"mean SSIM {s['mean_ssim']:.4f}, syntax {s['syntax_rate']:.4f}, "
          f"absence {s['absence_rate']:.4f}, mismatch {s['mismatch_rate']:.4f}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        reports = [load_report(p) for p in args.inputs]
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    rows = report_rows(reports)
    text = format_csv(rows) if args.format == "csv" else format_markdown(rows)
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_train_config(args: argparse.Namespace) -> int:
    emit_training_config(args.strategy, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="umlforge", description="Synthetic UML diagram corpora and diagram-to-code scoring.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="generate a corpus directory")
    gen.add_argument("--kind", choices=[k.value for k in DiagramKind], required=True)
    gen.add_argument("--size-class", choices=[s.value for s in SizeClass], default="small")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--total", type=int, help="override the size-class target")
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--jobs", type=int, default=1)
    gen.add_argument("--allow-partial", action="store_true", help="keep a short corpus if the draw budget runs out")
    gen.set_defaults(func=cmd_generate)

    ev = sub.add_parser("evaluate", help="score model outputs on a corpus test split")
    ev.add_argument("--corpus", type=Path, required=True)
    ev.add_argument("--endpoint", help="inference endpoint base URL")
    ev.add_argument("--responses", type=Path, help="replay precomputed responses instead of querying")
    ev.add_argument("--out", type=Path, required=True)
    ev.add_argument("--model", default="llava-v1.5")
    ev.add_argument("--model-label")
    ev.add_argument("--dataset-label")
    ev.add_argument("--timeout", type=float, default=120.0)
    ev.add_argument("--concurrency", type=int, default=4)
    ev.add_argument("--retries", type=int, default=2)
    ev.add_argument("--jobs", type=int, default=1)
    ev.add_argument("--save-responses", type=Path)
    ev.set_defaults(func=cmd_evaluate)

    rep = sub.add_parser("report", help="tabulate report.json files")
    rep.add_argument("--inputs", type=Path, nargs="+", required=True)
    rep.add_argument("--format", choices=["csv", "markdown"], default="csv")
    rep.add_argument("--out", type=Path)
    rep.set_defaults(func=cmd_report)

    tc = sub.add_parser("train-config", help="write fine-tuning hyperparameters")
    tc.add_argument("--strategy", choices=["lora", "full"], required=True)
    tc.add_argument("--out", type=Path, required=True)
    tc.set_defaults(func=cmd_train_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"umlforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
