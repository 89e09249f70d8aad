"""Confidence scores from first-token log-probabilities and the two retrieval gates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

from .errors import InvalidArgument

DEFAULT_AFFIRMATIVE = frozenset({"yes", "Yes", " yes", " Yes"})
DEFAULT_NEGATIVE = frozenset({"no", "No", " no", " No"})
NEG_INF = float("-inf")


class Polarity(str, Enum):
    # score above threshold lets the workflow proceed (retrieve / continue)
    AFFIRMATIVE_MEANS_PROCEED = "affirmative_means_proceed"
    # score above threshold halts it (skip / stop)
    AFFIRMATIVE_MEANS_STOP = "affirmative_means_stop"


@dataclass(frozen=True)
class AffirmativeSet:
    tokens: frozenset[str]

    def __init__(self, tokens: Iterable[str]):
        tokens = frozenset(tokens)
        if not tokens:
            raise InvalidArgument("affirmative token set must be non-empty")
        object.__setattr__(self, "tokens", tokens)


@dataclass(frozen=True)
class Thresholds:
    delta1: float = -2.0
    delta4: float = -3.0
    max_iterations: int = 3

    def __post_init__(self):
        if self.max_iterations < 0:
            raise InvalidArgument("max_iterations must be >= 0")


def affirmative_score(
    position_logprobs: Mapping[str, float], s: AffirmativeSet, log_base: float = math.e
) -> float:
    """log of the probability mass the reported tokens put on ``s``.

    Tokens of ``s`` absent from the map contribute nothing; with no overlap
    at all the score is ``-inf``.
    """
    if not position_logprobs:
        raise InvalidArgument("empty log-probability map")
    hits = [lp for tok, lp in position_logprobs.items() if tok in s.tokens]
    if not hits:
        return NEG_INF
    top = max(hits)
    if top == NEG_INF:
        return NEG_INF
    score = top + math.log(math.fsum(math.exp(lp - top) for lp in hits))
    score = min(score, 0.0)
    if log_base != math.e:
        score /= math.log(log_base)
    return score


def _proceed(score: float, threshold: float, polarity: Polarity) -> bool:
    above = score > threshold
    return above if polarity is Polarity.AFFIRMATIVE_MEANS_PROCEED else not above


def pre_check(
    score0: float, th: Thresholds, polarity: Polarity = Polarity.AFFIRMATIVE_MEANS_PROCEED
) -> str:
    return "retrieve" if _proceed(score0, th.delta1, polarity) else "skip"


def post_check(
    scorek: float,
    k: int,
    th: Thresholds,
    polarity: Polarity = Polarity.AFFIRMATIVE_MEANS_PROCEED,
    single_round: bool = False,
) -> str:
    if k < 1:
        raise InvalidArgument("post_check iteration must be >= 1")
    if single_round or k >= th.max_iterations:
        return "stop"
    return "continue" if _proceed(scorek, th.delta4, polarity) else "stop"
