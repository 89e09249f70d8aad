"""Scripted scenario builder shared by the engine and acceptance tests."""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from acrag.config import AgentRoles, EngineConfig
from acrag.core import Task
from acrag.kb import HashingEmbedder, IndexEntry, SourceDocument, VectorIndex, build_index, index_build, normalize
from acrag.llm import BackendDescriptor, ScriptedBehavior, ScriptedRule
from acrag.scoring import Thresholds

GOLDEN = Path(__file__).parent / "golden"

# each term has one document that its preliminary explanation matches best
CORPUS = {
    "osteoclast": "Osteoclast cells resorb bone matrix during remodeling.",
    "callus formation": "Callus formation bridges a fracture with soft then hard callus.",
    "troponin": "Troponin rises in blood after cardiac muscle injury.",
    "ketoacidosis": "Ketoacidosis follows insulin deficiency with ketone accumulation.",
    "hemolysis": "Hemolysis destroys red blood cells and releases hemoglobin.",
    "nephron": "Nephron tubules filter plasma and concentrate urine.",
}

EXPLANATIONS = {term: f"{term} explained: {body.lower()}" for term, body in CORPUS.items()}

MCQ = Task(
    id="mcq-1",
    kind="multiple_choice",
    question="A 30-year-old has a healing tibial fracture. Which process dominates week two?",
    options=(("A", "Inflammation"), ("B", "Soft callus"), ("C", "Remodeling"), ("D", "Necrosis")),
    gold="B",
)

YESNO = Task(
    id="yn-1",
    kind="yes_no",
    question="Does troponin rise after myocardial injury?",
    context="Patients with chest pain were sampled at admission and at six hours.",
    gold="yes",
)


def corpus_docs() -> list[SourceDocument]:
    return [
        SourceDocument(f"doc-{i:02d}", body, title=term, source_tag="toy")
        for i, (term, body) in enumerate(CORPUS.items())
    ]


def toy_index(dim: int = 64):
    return build_index(corpus_docs(), embedder=HashingEmbedder(dim))


def empty_index(dim: int = 64):
    return build_index([], embedder=HashingEmbedder(dim))


def lp(**kw) -> dict[str, float]:
    return dict(kw)


PRE_RETRIEVE = {"yes": -1.0, "no": -0.5}
PRE_SKIP = {"yes": -3.0, "no": -0.06}
POST_CONTINUE = {"no": -0.5, "yes": -1.0}
POST_STOP = {"yes": -0.05, "no": -4.0}


@dataclass
class Scenario:
    name: str
    task: Task
    pre: dict[str, float]
    terms: list[str] = field(default_factory=list)
    post: list[dict[str, float]] = field(default_factory=list)
    thresholds: Thresholds = field(default_factory=Thresholds)
    single_round: bool = False
    top_k: int = 1
    index: str = "toy"
    final_text: str | None = None
    # hand-derived (phase, iteration, score, threshold, decision) rows
    expected: list[tuple] = field(default_factory=list)


def summary_for(term: str) -> str:
    return f"summary of {term}"


def detector_rules(sc: Scenario) -> list[ScriptedRule]:
    rules = [ScriptedRule("Are there any medical terms", "yes", sc.pre)]
    # later iterations first: the memory shows the previous term
    for i in range(len(sc.terms) - 1, 0, -1):
        prev = re.escape(f"{sc.terms[i - 1]}: ")
        rules.append(ScriptedRule(f"re:(?=.*List the medical terms)(?=.*{prev})", f" {sc.terms[i]}"))
    if sc.terms:
        rules.append(ScriptedRule("List the medical terms", f" {sc.terms[0]}"))
    else:
        rules.append(ScriptedRule("List the medical terms", ""))
    for term, post in zip(sc.terms, sc.post):
        ctx = re.escape(f"Context: {summary_for(term)}\n")
        rules.append(ScriptedRule(f"re:(?=.*Do you think the context is sufficient)(?=.*{ctx})", "no", post))
    rules.append(ScriptedRule("", "no", {"no": -0.01}))
    return rules


def resolver_rules(sc: Scenario) -> list[ScriptedRule]:
    rules = []
    for term in CORPUS:
        rules.append(ScriptedRule(f"### Term:\n{term}\n", EXPLANATIONS[term]))
        rules.append(ScriptedRule(
            f"re:(?=.*Walk me through)(?=.*Context: {re.escape(CORPUS[term])})", summary_for(term)
        ))
    rules.append(ScriptedRule("Walk me through", "summary of nothing"))
    final = sc.final_text or ("### Answer: B" if sc.task.kind.value == "multiple_choice" else "### Answer: yes")
    rules.append(ScriptedRule("", final))
    return rules


def scenario_config(sc: Scenario) -> EngineConfig:
    det = BackendDescriptor("detector", "scripted", "scripted-detector",
                            script=ScriptedBehavior(tuple(detector_rules(sc))))
    res = BackendDescriptor("resolver", "scripted", "scripted-resolver",
                            script=ScriptedBehavior(tuple(resolver_rules(sc))))
    return EngineConfig(
        roles=AgentRoles(det, res),
        thresholds=sc.thresholds,
        single_round=sc.single_round,
        top_k=sc.top_k,
    )


def scenario_index(sc: Scenario):
    return toy_index() if sc.index == "toy" else empty_index()


class CountingAdapter:
    """Wraps an adapter and remembers every prompt it was sent."""

    def __init__(self, inner):
        self.inner = inner
        self.prompts: list[str] = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        return self.inner.complete(prompt)


class CountingIndex:
    def __init__(self, inner):
        self.inner = inner
        self.searches = 0
        self.meta = inner.meta

    def __len__(self):
        return len(self.inner)

    def search(self, q, k=1):
        self.searches += 1
        return self.inner.search(q, k)


def with_thresholds(sc: Scenario, **kw) -> Scenario:
    return replace(sc, thresholds=replace(sc.thresholds, **kw))


# -- the golden scenario suite ------------------------------------------------

D1, D4 = -2.0, -3.0


def pre(score, decision, threshold=D1):
    return ("pre_check", 0, score, threshold, decision)


def rounds(k, score, decision, threshold=D4):
    return [
        ("dissect", k, None, None, None),
        ("resolve_preliminary", k, None, None, None),
        ("retrieve", k, None, None, None),
        ("integrate", k, None, None, None),
        ("post_check", k, score, threshold, decision),
    ]


def final(k):
    return [("final_answer", k, None, None, None)]


NEG_INF = float("-inf")

SCENARIOS = [
    Scenario("skip_mcq", MCQ, PRE_SKIP,
             expected=[pre(-3.0, "skip")] + final(0)),
    Scenario("skip_yesno", YESNO, PRE_SKIP,
             expected=[pre(-3.0, "skip")] + final(0)),
    Scenario("pre_boundary_equal_skips", MCQ, {"yes": -2.0, "no": -0.2},
             expected=[pre(-2.0, "skip")] + final(0)),
    Scenario("pre_no_affirmative_token", MCQ, {"no": -0.01, "maybe": -5.0},
             expected=[pre(NEG_INF, "skip")] + final(0)),
    Scenario("one_round", MCQ, PRE_RETRIEVE, ["callus formation"], [POST_STOP],
             expected=[pre(-1.0, "retrieve")] + rounds(1, -4.0, "stop") + final(1)),
    Scenario("two_rounds", MCQ, PRE_RETRIEVE, ["osteoclast", "callus formation"],
             [POST_CONTINUE, POST_STOP],
             expected=[pre(-1.0, "retrieve")] + rounds(1, -0.5, "continue")
             + rounds(2, -4.0, "stop") + final(2)),
    Scenario("three_rounds_score_stop", MCQ, PRE_RETRIEVE,
             ["osteoclast", "callus formation", "troponin"], [POST_CONTINUE, POST_CONTINUE, POST_STOP],
             expected=[pre(-1.0, "retrieve")] + rounds(1, -0.5, "continue")
             + rounds(2, -0.5, "continue") + rounds(3, -4.0, "stop") + final(3)),
    Scenario("forced_cap_n3", MCQ, PRE_RETRIEVE,
             ["osteoclast", "callus formation", "troponin"], [POST_CONTINUE] * 3,
             expected=[pre(-1.0, "retrieve")] + rounds(1, -0.5, "continue")
             + rounds(2, -0.5, "continue") + rounds(3, -0.5, "stop") + final(3)),
    Scenario("dissection_fails_first", MCQ, PRE_RETRIEVE,
             expected=[pre(-1.0, "retrieve"), ("dissect", 1, None, None, "stop")] + final(0)),
    Scenario("dissection_fails_second", MCQ, PRE_RETRIEVE, ["osteoclast", ""], [POST_CONTINUE],
             expected=[pre(-1.0, "retrieve")] + rounds(1, -0.5, "continue")
             + [("dissect", 2, None, None, "stop")] + final(1)),
    Scenario("empty_index", MCQ, PRE_RETRIEVE, ["troponin"], [POST_STOP],
             thresholds=Thresholds(max_iterations=1), index="empty",
             # the summary of an empty context matches no post-check rule, so the
             # catch-all ({"no": -0.01}) scores it; the cap of 1 stops the loop
             expected=[pre(-1.0, "retrieve")] + rounds(1, -0.01, "stop") + final(1)),
    Scenario("single_round_flag", MCQ, PRE_RETRIEVE, ["osteoclast"], [POST_CONTINUE],
             single_round=True,
             expected=[pre(-1.0, "retrieve")] + rounds(1, -0.5, "stop") + final(1)),
    Scenario("zero_iteration_cap", MCQ, PRE_RETRIEVE, thresholds=Thresholds(max_iterations=0),
             expected=[pre(-1.0, "retrieve")] + final(0)),
    Scenario("yesno_top3_two_rounds", YESNO, PRE_RETRIEVE, ["troponin", "hemolysis"],
             [POST_CONTINUE, POST_STOP], top_k=3,
             expected=[pre(-1.0, "retrieve")] + rounds(1, -0.5, "continue")
             + rounds(2, -4.0, "stop") + final(2)),
    Scenario("cap_n5_always_continue", YESNO, PRE_RETRIEVE,
             ["osteoclast", "callus formation", "troponin", "ketoacidosis", "hemolysis"],
             [POST_CONTINUE] * 5, thresholds=Thresholds(max_iterations=5),
             expected=[pre(-1.0, "retrieve")]
             + [row for k in range(1, 5) for row in rounds(k, -0.5, "continue")]
             + rounds(5, -0.5, "stop") + final(5)),
]


def structural(trace) -> list[tuple]:
    return [(e.phase.value, e.iteration, e.score, e.threshold, e.decision) for e in trace.events]


# -- benchmark datasets with a spread of pre-check scores ----------------------

POPULATION_SCORES = [-4.0, -3.2, -2.6, -2.0, -1.7, -1.2, -0.9, -0.6, -0.3, -0.1]


def population(scores=POPULATION_SCORES) -> list[Task]:
    """One MCQ per score; the gold label cycles A..D."""
    return [
        Task(
            id=f"case-{i:02d}",
            kind="multiple_choice",
            question=f"Case {i:02d}: which finding best explains the presentation?",
            options=(("A", "first"), ("B", "second"), ("C", "third"), ("D", "fourth")),
            gold="ABCD"[i % 4],
        )
        for i in range(len(scores))
    ]


def population_backend(name: str, scores, *, shift: float = 0.0, always_right: bool = False) -> BackendDescriptor:
    """One model that can serve as either role.

    As detector its pre-check confidence for case i is ``scores[i] + shift``
    (capped at 0), and every third case keeps asking for more context. As
    resolver it answers every case right, or always says A.
    """
    rules = []
    for i, s in enumerate(scores):
        tag = re.escape(f"Case {i:02d}:")
        rules.append(ScriptedRule(
            f"re:(?=.*{tag})(?=.*Are there any medical terms)", "yes", {"yes": min(0.0, s + shift)}
        ))
        post = POST_CONTINUE if i % 3 == 0 else POST_STOP
        rules.append(ScriptedRule(f"re:(?=.*{tag})(?=.*Do you think the context is sufficient)", "no", post))
    rules += [
        ScriptedRule("List the medical terms", " osteoclast"),
        ScriptedRule("### Term:\nosteoclast\n", EXPLANATIONS["osteoclast"]),
        ScriptedRule("Walk me through", summary_for("osteoclast")),
    ]
    for t in population(scores):
        rules.append(ScriptedRule(t.question, f"### Answer: {t.gold if always_right else 'A'}"))
    rules.append(ScriptedRule("", "### Answer: A", {"no": -0.01}))
    return BackendDescriptor(name, "scripted", f"scripted-{name}", script=ScriptedBehavior(tuple(rules)))


def population_config(scores=POPULATION_SCORES) -> EngineConfig:
    """Backends "base" and "tuned"; base serves both roles."""
    pool = {
        "base": population_backend("base", scores),
        "tuned": population_backend("tuned", scores, shift=-1.0, always_right=True),
    }
    return EngineConfig(roles=AgentRoles(pool["base"], pool["base"]), backends=pool)


# -- knowledge-base oracles -------------------------------------------------------

def synthetic_tokens(n: int, rng: random.Random) -> list[str]:
    """Tokens the default segmenter splits exactly this way; count known by construction."""
    out = []
    for i in range(n):
        r = rng.random()
        if r < 0.8:
            out.append(f" w{rng.randrange(1000)}" if i else f"w{rng.randrange(1000)}")
        elif r < 0.9:
            out.append(",")
        else:
            out.append(" ;")
    return out


def brute_force(index: VectorIndex, q, k):
    rows = []
    for cid, vec in zip(index.chunk_ids, index.vectors):
        sim = math.fsum(float(a) * float(b) for a, b in zip(vec, q))
        rows.append((-max(-1.0, min(1.0, sim)), cid))
    rows.sort()
    return [(cid, -neg) for neg, cid in rows[:k]]


def random_index(rng: np.random.Generator, n: int, dim: int = 64, dup_every: int = 7) -> VectorIndex:
    vecs = rng.normal(size=(n, dim))
    # plant exact duplicates so ties have to be broken by chunk id
    for i in range(dup_every, n, dup_every):
        vecs[i] = vecs[i - dup_every]
    ids = [f"c{j:04d}" for j in rng.permutation(n)]
    entries = [IndexEntry(cid, normalize(v), f"text {cid}") for cid, v in zip(ids, vecs)]
    return index_build(entries)


# -- acceptance verdict lines -------------------------------------------------------

VERDICTS: list[str] = []


def verdict(criterion: int, ok: bool | None, detail: str) -> None:
    """Record one pass/fail line; ``None`` means skipped."""
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
    line = f"criterion {criterion:>2}: {status}  {detail}"
    VERDICTS.append(line)
    print(line)
