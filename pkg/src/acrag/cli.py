"""Command line entry point: ``acrag run|eval|ablate|index build|trace show``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import yaml

from .config import load_config
from .core import read_traces
from .errors import ACRAGError
from .evaluation import (
    BenchmarkResult,
    _aggregate,
    compute_metrics,
    format_ablation,
    format_report,
    load_records,
    run_ablation,
    run_benchmark,
)
from .kb import HashingEmbedder, VectorIndex, build_index, load_corpus


def _load_index(path):
    return VectorIndex.load(path) if path else None


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    result = run_benchmark(args.dataset, cfg, _load_index(args.index), args.repeats, out_dir=args.out)
    sys.stdout.write(format_report(result))
    print(f"wrote {result.run_dir}")
    return 0


def cmd_eval(args) -> int:
    records = load_records(args.records)
    by_repeat: dict[int, list] = {}
    for r in records:
        by_repeat.setdefault(r.repeat, []).append(r)
    reports = [compute_metrics(rs) for _, rs in sorted(by_repeat.items())]
    mean, std = _aggregate(reports)
    result = BenchmarkResult(reports, mean, std, records, errors=sum(1 for r in records if r.error))
    if args.json:
        print(json.dumps(result.to_dict(), indent=2))
    else:
        sys.stdout.write(format_report(result))
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    with open(args.grid, encoding="utf-8") as fh:
        grid = yaml.safe_load(fh)
    repeats = args.repeats or (grid.get("repeats", 1) if isinstance(grid, dict) else 1)
    rows = run_ablation(grid, cfg, args.dataset, _load_index(args.index), repeats=repeats, out_dir=args.out)
    sys.stdout.write(format_ablation(rows))
    return 0


def cmd_index_build(args) -> int:
    docs = load_corpus(args.corpus)
    index = build_index(
        docs,
        embedder=HashingEmbedder(args.dim),
        chunk_size=args.chunk_size,
        include_title=args.include_title,
    )
    index.save(args.out)
    print(f"indexed {len(docs)} documents into {len(index)} chunks -> {args.out}")
    return 0


def cmd_trace_show(args) -> int:
    for trace in read_traces(args.file):
        if args.task and trace.task_id != args.task:
            continue
        print(f"== {trace.task_id}")
        for ev in trace.events:
            bits = [f"{ev.phase.value:<20}", f"k={ev.iteration}"]
            if ev.score is not None:
                bits.append(f"score={ev.score:.4f}")
            if ev.threshold is not None:
                bits.append(f"threshold={ev.threshold:g}")
            if ev.decision:
                bits.append(f"-> {ev.decision}")
            bits.append(f"[{ev.payload_digest}]")
            print("  " + "  ".join(bits))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acrag", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a dataset through the engine")
    run.add_argument("--dataset", required=True)
    run.add_argument("--config", required=True)
    run.add_argument("--index")
    run.add_argument("--repeats", type=int, default=1)
    run.add_argument("--out", default="runs")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="recompute metrics from a records.jsonl file")
    ev.add_argument("--records", required=True)
    ev.add_argument("--json", action="store_true")
    ev.set_defaults(func=cmd_eval)

    ab = sub.add_parser("ablate", help="run a sweep grid and render the table and figures")
    ab.add_argument("--grid", required=True)
    ab.add_argument("--config", required=True)
    ab.add_argument("--dataset", required=True)
    ab.add_argument("--index")
    ab.add_argument("--repeats", type=int)
    ab.add_argument("--out", default="runs")
    ab.set_defaults(func=cmd_ablate)

    idx = sub.add_parser("index", help="knowledge-base index tools")
    idx_sub = idx.add_subparsers(dest="index_command", required=True)
    build = idx_sub.add_parser("build", help="chunk, embed and index a corpus")
    build.add_argument("--corpus", required=True)
    build.add_argument("--out", required=True)
    build.add_argument("--chunk-size", type=int, default=512)
    build.add_argument("--dim", type=int, default=64, help="hashing embedder dimension")
    build.add_argument("--include-title", action="store_true")
    build.set_defaults(func=cmd_index_build)

    tr = sub.add_parser("trace", help="session trace tools")
    tr_sub = tr.add_subparsers(dest="trace_command", required=True)
    show = tr_sub.add_parser("show", help="pretty-print a trace JSONL file")
    show.add_argument("file")
    show.add_argument("--task")
    show.set_defaults(func=cmd_trace_show)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ACRAGError, OSError) as exc:
        print(f"acrag: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
