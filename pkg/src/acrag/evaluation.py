"""Benchmark driver, metrics, and ablation sweeps.

Metric definitions:

* accuracy: correct / n, an unparsed prediction counts as wrong
* ra_rate: share of samples with at least one retrieval
* avg_iters_given_retrieval: mean retrieval count over those samples only
* direct_answer_rate: 1 - ra_rate
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .config import EngineConfig
from .core import Phase, SessionTrace, Task, load_tasks, write_jsonl
from .engine import Moderator
from .errors import InvalidArgument, LoadError, SessionError, SweepConfigError
from .kb import VectorIndex
from .parsing import UNPARSED, format_answer, parse_answer
from .scoring import Polarity, Thresholds

log = logging.getLogger(__name__)

__all__ = [
    "UNPARSED",
    "parse_answer",
    "format_answer",
    "RunRecord",
    "MetricsReport",
    "BenchmarkResult",
    "AblationRow",
    "compute_metrics",
    "run_benchmark",
    "run_ablation",
    "parse_grid",
    "role_combinations",
]

METRICS = ("accuracy", "ra_rate", "avg_iters_given_retrieval", "direct_answer_rate")


@dataclass(frozen=True)
class RunRecord:
    task_id: str
    gold: str | None
    predicted: str
    retrieved_at_least_once: bool
    iterations_used: int
    wall_time: float = 0.0
    repeat: int = 0
    error: str | None = None

    def __post_init__(self):
        if self.iterations_used < 0:
            raise InvalidArgument("iterations_used must be >= 0")
        if self.retrieved_at_least_once != (self.iterations_used >= 1):
            raise InvalidArgument("retrieved_at_least_once must match iterations_used >= 1")

    @property
    def correct(self) -> bool:
        return self.predicted != UNPARSED and self.predicted == self.gold


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    ra_rate: float
    avg_iters_given_retrieval: float | None
    direct_answer_rate: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(records: Sequence[RunRecord]) -> MetricsReport:
    n = len(records)
    if n == 0:
        raise InvalidArgument("no records to score")
    correct = sum(1 for r in records if r.correct)
    retrieved = [r.iterations_used for r in records if r.retrieved_at_least_once]
    ra_rate = len(retrieved) / n
    return MetricsReport(
        accuracy=correct / n,
        ra_rate=ra_rate,
        avg_iters_given_retrieval=sum(retrieved) / len(retrieved) if retrieved else None,
        direct_answer_rate=1.0 - ra_rate,
        n=n,
    )


@dataclass
class BenchmarkResult:
    per_repeat: list[MetricsReport]
    mean: dict[str, float | None]
    std: dict[str, float | None]
    records: list[RunRecord] = field(default_factory=list, repr=False)
    traces: list[SessionTrace] = field(default_factory=list, repr=False)
    errors: int = 0
    run_dir: Path | None = None

    @property
    def report(self) -> MetricsReport:
        """Single-pass view; with repeats > 1 this is the first repeat."""
        return self.per_repeat[0]

    def to_dict(self) -> dict:
        return {
            "repeats": len(self.per_repeat),
            "per_repeat": [m.to_dict() for m in self.per_repeat],
            "mean": self.mean,
            "std": self.std,
            "errors": self.errors,
        }


def _aggregate(reports: Sequence[MetricsReport]) -> tuple[dict, dict]:
    mean, std = {}, {}
    for name in METRICS:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if not values:
            mean[name] = std[name] = None
            continue
        mean[name] = statistics.fmean(values)
        std[name] = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def _run_one(moderator: Moderator, task: Task, repeat: int) -> tuple[RunRecord, SessionTrace]:
    t0 = time.perf_counter()
    try:
        answer, trace = moderator.run(task)
    except SessionError as exc:
        log.error("session %s failed: %s", task.id, exc)
        trace = exc.trace or SessionTrace(task.id)
        iters = trace.count(Phase.RETRIEVE)
        record = RunRecord(task.id, task.gold, UNPARSED, iters > 0, iters,
                           time.perf_counter() - t0, repeat, str(exc))
        return record, trace
    record = RunRecord(
        task.id, task.gold, answer.label, answer.retrieved_at_least_once,
        answer.iterations_used, time.perf_counter() - t0, repeat,
    )
    return record, trace


def run_benchmark(
    dataset: str | Path | Sequence[Task],
    cfg: EngineConfig,
    index: VectorIndex | None,
    repeats: int = 1,
    *,
    out_dir: str | Path | None = None,
    moderator: Moderator | None = None,
) -> BenchmarkResult:
    """Run every task ``repeats`` times and aggregate.

    Sessions run on a thread pool bounded by ``cfg.parallelism``; records
    come back in dataset order regardless of completion order.
    """
    if repeats < 1:
        raise InvalidArgument("repeats must be >= 1")
    tasks = load_tasks(dataset) if isinstance(dataset, (str, Path)) else list(dataset)
    moderator = moderator or Moderator(cfg, index)
    records: list[RunRecord] = []
    traces: list[SessionTrace] = []
    per_repeat = []
    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        for rep in range(repeats):
            results = list(pool.map(lambda t: _run_one(moderator, t, rep), tasks))
            rep_records = [r for r, _ in results]
            records.extend(rep_records)
            traces.extend(t for _, t in results)
            per_repeat.append(compute_metrics(rep_records))
    mean, std = _aggregate(per_repeat)
    result = BenchmarkResult(per_repeat, mean, std, records, traces, sum(1 for r in records if r.error))
    if out_dir is not None:
        result.run_dir = write_run(result, cfg, out_dir)
    return result


# -- reporting -------------------------------------------------------------

def _fmt(x: float | None, pct: bool = False) -> str:
    if x is None:
        return "-"
    return f"{100 * x:.1f}" if pct else f"{x:.3f}"


def format_report(result: BenchmarkResult) -> str:
    lines = [f"{'':<10}{'Acc':>8}{'RA Rate':>9}{'Iters':>8}{'DAR':>8}{'n':>6}"]
    for i, m in enumerate(result.per_repeat):
        lines.append(
            f"{'repeat ' + str(i):<10}{_fmt(m.accuracy, True):>8}{_fmt(m.ra_rate, True):>9}"
            f"{_fmt(m.avg_iters_given_retrieval):>8}{_fmt(m.direct_answer_rate, True):>8}{m.n:>6}"
        )
    mu, sd = result.mean, result.std
    lines.append(
        f"{'mean':<10}{_fmt(mu['accuracy'], True):>8}{_fmt(mu['ra_rate'], True):>9}"
        f"{_fmt(mu['avg_iters_given_retrieval']):>8}{_fmt(mu['direct_answer_rate'], True):>8}"
    )
    lines.append(
        f"{'std':<10}{_fmt(sd['accuracy'], True):>8}{_fmt(sd['ra_rate'], True):>9}"
        f"{_fmt(sd['avg_iters_given_retrieval']):>8}{_fmt(sd['direct_answer_rate'], True):>8}"
    )
    if result.errors:
        lines.append(f"session errors: {result.errors}")
    return "\n".join(lines) + "\n"


def _run_dir(out_dir: str | Path, prefix: str) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    path = Path(out_dir) / f"{prefix}-{stamp}"
    path.mkdir(parents=True, exist_ok=False)
    return path


def write_run(result: BenchmarkResult, cfg: EngineConfig, out_dir: str | Path) -> Path:
    path = _run_dir(out_dir, "run")
    (path / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    write_jsonl(path / "records.jsonl", (asdict(r) for r in result.records))
    with open(path / "traces.jsonl", "w", encoding="utf-8") as fh:
        for trace in result.traces:
            fh.write(trace.to_jsonl())
    (path / "report.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")
    (path / "report.txt").write_text(format_report(result), encoding="utf-8")
    return path


def load_records(path: str | Path) -> list[RunRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(RunRecord(**json.loads(line)))
            except (ValueError, TypeError) as exc:
                raise LoadError(f"{path}: line {lineno}: {exc}", line=lineno) from exc
    return records


# -- ablations -------------------------------------------------------------

CELL_KEYS = {
    "name", "detector", "resolver", "delta1", "delta4", "max_iterations", "single_round", "top_k",
    "pre_check_polarity", "post_check_polarity",
}


@dataclass
class AblationRow:
    cell: dict[str, Any]
    result: BenchmarkResult

    @property
    def report(self) -> MetricsReport:
        return self.result.report


def role_combinations(base: str, finetuned: str) -> list[dict]:
    """The four detector/resolver pairings of a base and a fine-tuned model."""
    return [
        {"name": f"D={d} R={r}", "detector": d, "resolver": r}
        for d, r in itertools.product((base, finetuned), repeat=2)
    ]


def parse_grid(grid: Mapping[str, Any] | Sequence[Mapping[str, Any]]) -> list[dict]:
    """Expand a sweep grid into cell deltas.

    Accepts a list of cells, or a mapping with ``cells`` (explicit list)
    and/or ``axes`` (name -> values, expanded as a cartesian product).
    """
    if isinstance(grid, Mapping):
        cells = [dict(c) for c in grid.get("cells", [])]
        axes = grid.get("axes") or {}
        if axes:
            names = list(axes)
            for combo in itertools.product(*(axes[n] for n in names)):
                cells.append(dict(zip(names, combo)))
        unknown = set(grid) - {"cells", "axes", "repeats"}
        if unknown:
            raise SweepConfigError(f"unknown grid keys {sorted(unknown)}")
    else:
        cells = [dict(c) for c in grid]
    for cell in cells:
        bad = set(cell) - CELL_KEYS
        if bad:
            raise SweepConfigError(f"cell {cell}: unknown keys {sorted(bad)}")
    return cells


def _to_float(x) -> float:
    if isinstance(x, str):
        x = x.replace("∞", "inf")
    return float(x)


def apply_cell(cfg: EngineConfig, cell: Mapping[str, Any]) -> EngineConfig:
    try:
        cfg = cfg.with_roles(cell.get("detector"), cell.get("resolver"))
        th = cfg.thresholds
        th = Thresholds(
            delta1=_to_float(cell.get("delta1", th.delta1)),
            delta4=_to_float(cell.get("delta4", th.delta4)),
            max_iterations=int(cell.get("max_iterations", th.max_iterations)),
        )
        single_round = cell.get("single_round", cfg.single_round)
        if not isinstance(single_round, bool):
            raise SweepConfigError(f"cell {dict(cell)}: single_round must be a boolean")
        pre = replace(cfg.pre_check, polarity=Polarity(cell.get("pre_check_polarity", cfg.pre_check.polarity)))
        post = replace(cfg.post_check, polarity=Polarity(cell.get("post_check_polarity", cfg.post_check.polarity)))
        return replace(cfg, thresholds=th, single_round=single_round, top_k=int(cell.get("top_k", cfg.top_k)),
                       pre_check=pre, post_check=post)
    except SweepConfigError:
        raise
    except Exception as exc:
        raise SweepConfigError(f"cell {dict(cell)}: {exc}") from exc


def _json_cell(cell: Mapping[str, Any]) -> dict:
    out = {}
    for k, v in cell.items():
        out[k] = ("inf" if v > 0 else "-inf") if isinstance(v, float) and math.isinf(v) else v
    return out


def run_ablation(
    grid,
    base_cfg: EngineConfig,
    dataset: str | Path | Sequence[Task],
    index: VectorIndex | None,
    *,
    repeats: int = 1,
    out_dir: str | Path | None = None,
    moderator_factory: Callable[[EngineConfig], Moderator] | None = None,
) -> list[AblationRow]:
    """One benchmark per cell. Every cell config is validated before any run."""
    cells = parse_grid(grid)
    tasks = load_tasks(dataset) if isinstance(dataset, (str, Path)) else list(dataset)
    configs = [apply_cell(base_cfg, c) for c in cells]
    rows = []
    for cell, cfg in zip(cells, configs):
        moderator = moderator_factory(cfg) if moderator_factory else Moderator(cfg, index)
        result = run_benchmark(tasks, cfg, index, repeats, moderator=moderator)
        rows.append(AblationRow(_json_cell(cell), result))
    if out_dir is not None:
        write_ablation(rows, base_cfg, out_dir)
    return rows


def cell_label(cell: Mapping[str, Any]) -> str:
    if "name" in cell:
        return str(cell["name"])
    return " ".join(f"{k}={v}" for k, v in cell.items()) or "base"


def format_ablation(rows: Sequence[AblationRow]) -> str:
    width = max([len(cell_label(r.cell)) for r in rows] + [4])
    lines = [f"{'cell':<{width}}  {'Acc':>6}  {'RA Rate':>7}  {'Iters':>6}  {'DAR':>6}  {'n':>5}"]
    for row in rows:
        m = row.result.mean
        lines.append(
            f"{cell_label(row.cell):<{width}}  {_fmt(m['accuracy'], True):>6}  {_fmt(m['ra_rate'], True):>7}"
            f"  {_fmt(m['avg_iters_given_retrieval']):>6}  {_fmt(m['direct_answer_rate'], True):>6}"
            f"  {row.report.n:>5}"
        )
    return "\n".join(lines) + "\n"


def ablation_table(rows: Sequence[AblationRow]) -> list[dict]:
    """Flat rows: cell delta columns followed by mean/std metric columns."""
    keys = []
    for row in rows:
        keys.extend(k for k in row.cell if k not in keys)
    table = []
    for row in rows:
        flat = {k: row.cell.get(k, "") for k in keys}
        for name in METRICS:
            flat[name] = row.result.mean[name]
            flat[f"{name}_std"] = row.result.std[name]
        flat["n"] = row.report.n
        table.append(flat)
    return table


def write_ablation(rows: Sequence[AblationRow], base_cfg: EngineConfig, out_dir: str | Path) -> Path:
    import csv

    from .plots import render_ablation_figures

    path = _run_dir(out_dir, "ablation")
    (path / "config.json").write_text(json.dumps(base_cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    payload = [{"cell": r.cell, **r.result.to_dict()} for r in rows]
    (path / "ablation.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    (path / "ablation.txt").write_text(format_ablation(rows), encoding="utf-8")
    table = ablation_table(rows)
    with open(path / "ablation.tsv", "w", encoding="utf-8", newline="") as fh:
        if table:
            writer = csv.DictWriter(fh, fieldnames=list(table[0]), delimiter="\t")
            writer.writeheader()
            writer.writerows(table)
    render_ablation_figures(rows, path)
    return path
