from __future__ import annotations

import re

from .core import TaskKind

UNPARSED = "unparsed"
ANSWER_MARKER = "### Answer:"

_MARKER = re.compile(r"#{3}\s*Answer\s*:", re.IGNORECASE)
_MCQ = re.compile(r"\s*[\(\[\*\"']*\s*([A-Ea-e])(?![A-Za-z0-9])")
_YES_NO = re.compile(r"\s*[\(\[\*\"']*\s*(yes|no|maybe)(?![A-Za-z0-9])", re.IGNORECASE)


def parse_answer(text: str, kind: TaskKind | str) -> str:
    """Label after the last ``### Answer:`` marker, or ``UNPARSED``.

    MCQ labels come back upper-case, yes/no/maybe lower-case.
    """
    markers = list(_MARKER.finditer(text))
    if not markers:
        return UNPARSED
    tail = text[markers[-1].end():]
    if TaskKind(kind) is TaskKind.MULTIPLE_CHOICE:
        m = _MCQ.match(tail)
        return m.group(1).upper() if m else UNPARSED
    m = _YES_NO.match(tail)
    return m.group(1).lower() if m else UNPARSED


def format_answer(label: str) -> str:
    return f"{ANSWER_MARKER} {label}"
