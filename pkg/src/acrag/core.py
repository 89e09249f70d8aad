"""Domain types: tasks, memory, answers, and session traces."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import InvalidArgument, LoadError

MCQ_LABELS = ("A", "B", "C", "D", "E")
YES_NO_LABELS = ("yes", "no", "maybe")


class TaskKind(str, Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    YES_NO = "yes_no"


@dataclass(frozen=True)
class Task:
    id: str
    kind: TaskKind
    question: str
    options: tuple[tuple[str, str], ...] = ()
    context: str | None = None
    gold: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        object.__setattr__(self, "options", tuple((str(l), str(t)) for l, t in self.options))
        if self.kind is TaskKind.MULTIPLE_CHOICE:
            labels = [label for label, _ in self.options]
            if not labels:
                raise InvalidArgument(f"task {self.id}: multiple_choice needs options")
            if len(set(labels)) != len(labels):
                raise InvalidArgument(f"task {self.id}: duplicate option labels")
            bad = [l for l in labels if l not in MCQ_LABELS]
            if bad:
                raise InvalidArgument(f"task {self.id}: option labels {bad} not in A-E")
            if self.gold is not None and self.gold not in labels:
                raise InvalidArgument(f"task {self.id}: gold {self.gold!r} is not an option")
        else:
            if self.options:
                raise InvalidArgument(f"task {self.id}: yes_no tasks take no options")
            if self.gold is not None and self.gold not in YES_NO_LABELS:
                raise InvalidArgument(f"task {self.id}: gold must be yes/no/maybe")

    @property
    def label_space(self) -> tuple[str, ...]:
        if self.kind is TaskKind.MULTIPLE_CHOICE:
            return tuple(label for label, _ in self.options)
        return YES_NO_LABELS

    def options_text(self) -> str:
        return "\n".join(f"{label}. {text}" for label, text in self.options)

    @classmethod
    def from_dict(cls, d: dict) -> "Task":
        options = d.get("options") or ()
        if isinstance(options, dict):
            options = list(options.items())
        return cls(
            id=str(d["id"]),
            kind=d["kind"],
            question=d["question"],
            options=tuple(tuple(o) for o in options),
            context=d.get("context"),
            gold=d.get("gold"),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "question": self.question,
            "options": [list(o) for o in self.options],
            "context": self.context,
            "gold": self.gold,
        }


def load_tasks(path: str | Path) -> list[Task]:
    """Read a Task JSONL file. Blank lines are skipped."""
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                tasks.append(Task.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise LoadError(f"{path}: line {lineno}: {exc}", line=lineno) from exc
    return tasks


@dataclass(frozen=True)
class MemoryEntry:
    term: str
    summary: str
    iteration: int


@dataclass(frozen=True)
class Memory:
    """Ordered (term, summary) ledger. Never mutated; append returns a new value."""

    entries: tuple[MemoryEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[MemoryEntry]:
        return iter(self.entries)

    def terms(self) -> list[str]:
        return [e.term for e in self.entries]


EMPTY_MEMORY = Memory()


def memory_append(m: Memory, term: str, summary: str) -> Memory:
    if not term or not term.strip():
        raise InvalidArgument("memory term must be non-empty")
    if not summary or not summary.strip():
        raise InvalidArgument("memory summary must be non-empty")
    iteration = m.entries[-1].iteration + 1 if m.entries else 1
    return Memory(m.entries + (MemoryEntry(term, summary, iteration),))


def memory_render(m: Memory) -> str:
    return "\n".join(f"{e.term}: {e.summary}" for e in m.entries)


@dataclass(frozen=True)
class Answer:
    label: str
    raw_text: str
    retrieved_at_least_once: bool
    iterations_used: int

    def __post_init__(self):
        if (self.iterations_used == 0) == self.retrieved_at_least_once:
            raise InvalidArgument("iterations_used must be 0 exactly when nothing was retrieved")


class Phase(str, Enum):
    PRE_CHECK = "pre_check"
    DISSECT = "dissect"
    RESOLVE_PRELIMINARY = "resolve_preliminary"
    RETRIEVE = "retrieve"
    INTEGRATE = "integrate"
    POST_CHECK = "post_check"
    FINAL_ANSWER = "final_answer"


def digest(*parts: str) -> str:
    """Short stable fingerprint of the text exchanged in one phase."""
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()[:16]


def _encode_real(x: float | None):
    if x is None or math.isfinite(x):
        return x
    return "inf" if x > 0 else "-inf"


def _decode_real(x):
    if isinstance(x, str):
        return float(x)
    return x


@dataclass(frozen=True)
class TraceEvent:
    phase: Phase
    iteration: int
    payload_digest: str
    score: float | None = None
    threshold: float | None = None
    decision: str | None = None

    def to_dict(self) -> dict:
        return {
            "phase": self.phase.value,
            "iteration": self.iteration,
            "score": _encode_real(self.score),
            "threshold": _encode_real(self.threshold),
            "decision": self.decision,
            "payload_digest": self.payload_digest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEvent":
        return cls(
            phase=Phase(d["phase"]),
            iteration=int(d["iteration"]),
            payload_digest=d["payload_digest"],
            score=_decode_real(d.get("score")),
            threshold=_decode_real(d.get("threshold")),
            decision=d.get("decision"),
        )


@dataclass
class SessionTrace:
    task_id: str
    events: list[TraceEvent] = field(default_factory=list)

    def record(self, phase: Phase, iteration: int, payload_digest: str, **kw) -> TraceEvent:
        ev = TraceEvent(phase, iteration, payload_digest, **kw)
        self.events.append(ev)
        return ev

    def count(self, phase: Phase) -> int:
        return sum(1 for e in self.events if e.phase is phase)

    def validate(self, max_iterations: int | None = None) -> None:
        """Check the structural trace invariants; raises InvalidArgument."""
        if not self.events or self.events[0].phase is not Phase.PRE_CHECK:
            raise InvalidArgument("trace must start with pre_check")
        finals = [i for i, e in enumerate(self.events) if e.phase is Phase.FINAL_ANSWER]
        if finals != [len(self.events) - 1]:
            raise InvalidArgument("trace must end with exactly one final_answer")
        if max_iterations is not None and self.count(Phase.RETRIEVE) > max_iterations:
            raise InvalidArgument("more retrieve events than max_iterations")

    def to_jsonl(self) -> str:
        lines = []
        for ev in self.events:
            d = {"task_id": self.task_id, **ev.to_dict()}
            lines.append(json.dumps(d, ensure_ascii=False, separators=(",", ":")))
        return "".join(line + "\n" for line in lines)


def read_traces(path: str | Path) -> list[SessionTrace]:
    """Group a trace JSONL file back into sessions, keeping file order."""
    traces: list[SessionTrace] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                ev = TraceEvent.from_dict(d)
            except (ValueError, KeyError) as exc:
                raise LoadError(f"{path}: line {lineno}: {exc}", line=lineno) from exc
            if ev.phase is Phase.PRE_CHECK or not traces or traces[-1].task_id != d["task_id"]:
                traces.append(SessionTrace(d["task_id"]))
            traces[-1].events.append(ev)
    return traces


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def to_plain(obj):
    """asdict() that also flattens enums; handy for json dumps of dataclasses."""
    d = asdict(obj)
    return json.loads(json.dumps(d, default=lambda o: o.value if isinstance(o, Enum) else str(o)))
