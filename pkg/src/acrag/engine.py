"""The moderator loop: pre-check, then dissect / retrieve / integrate / post-check.

One :class:`Moderator` is built per (config, index) pair and can run many
sessions, concurrently if the adapters allow it. Everything a session does
is appended to its :class:`SessionTrace`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .config import EngineConfig
from .core import (
    EMPTY_MEMORY,
    Answer,
    Memory,
    Phase,
    SessionTrace,
    Task,
    TaskKind,
    digest,
    memory_append,
    memory_render,
)
from .errors import (
    DissectionError,
    EmbedderError,
    EmptyCompletionError,
    ProtocolError,
    SessionError,
    TransportError,
)
from .kb import VectorIndex, embed, make_embedder
from .llm import CompletionResult, adapter_for, first_position_logprobs
from .parsing import ANSWER_MARKER, UNPARSED, parse_answer
from .prompts import EXPLAIN_TERM, PromptRegistry, TemplateId
from .scoring import affirmative_score, post_check, pre_check

log = logging.getLogger(__name__)

DISSECT_ANCHOR = "hard to understand is:"

_TEMPLATES = {
    TaskKind.MULTIPLE_CHOICE: {
        "pre": TemplateId.PRE_CHECK_MCQ,
        "dissect": TemplateId.DISSECT_MCQ,
        "with_rag": TemplateId.QA_WITH_RAG_MCQ,
        "without_rag": TemplateId.QA_WITHOUT_RAG_MCQ,
    },
    TaskKind.YES_NO: {
        "pre": TemplateId.PRE_CHECK_YESNO,
        "dissect": TemplateId.DISSECT_YESNO,
        "with_rag": TemplateId.QA_WITH_RAG_YESNO,
        "without_rag": TemplateId.QA_WITHOUT_RAG_YESNO,
    },
}


def task_variables(task: Task) -> dict[str, str]:
    """The question-side slots: options for MCQ, the passage for yes/no."""
    if task.kind is TaskKind.MULTIPLE_CHOICE:
        return {"question": task.question, "options": task.options_text()}
    return {"question": task.question, "context": task.context or ""}


def extract_term(completion_text: str) -> str:
    """First non-empty line of the dissection reply, trimmed."""
    text = completion_text
    if DISSECT_ANCHOR in text:
        text = text.rsplit(DISSECT_ANCHOR, 1)[1]
    for line in text.splitlines():
        term = line.strip().rstrip(".").strip()
        if term:
            return term
    raise DissectionError("detector produced no term")


@dataclass
class _Session:
    task: Task
    trace: SessionTrace
    memory: Memory = EMPTY_MEMORY
    persona_calls: int = 0
    retrievals: int = 0


class Moderator:
    def __init__(
        self,
        cfg: EngineConfig,
        index: VectorIndex | None = None,
        *,
        embedder=None,
        registry: PromptRegistry | None = None,
        detector=None,
        resolver=None,
    ):
        self.cfg = cfg
        self.index = index
        self.registry = registry or PromptRegistry.load(cfg.template_pack)
        if embedder is None and index is not None and "embedder" in index.meta:
            embedder = make_embedder(index.meta["embedder"])
        self.embedder = embedder
        self.detector = detector or adapter_for(cfg.roles.detector)
        self.resolver = resolver or adapter_for(cfg.roles.resolver)

    # -- backend calls -------------------------------------------------

    def _call(self, s: _Session, adapter, role: str, prompt: str) -> CompletionResult:
        try:
            return adapter.complete(prompt)
        except (TransportError, ProtocolError) as exc:
            raise SessionError(f"{s.task.id}: {role} backend failed: {exc}", s.trace) from exc

    def _score(self, s: _Session, result: CompletionResult, check) -> float:
        try:
            lps = first_position_logprobs(result)
        except EmptyCompletionError as exc:
            raise SessionError(f"{s.task.id}: detector returned no token positions", s.trace) from exc
        return affirmative_score(lps, check.tokens, self.cfg.log_base)

    def _persona(self, s: _Session) -> int:
        idx = self.cfg.system_prompt_seed + s.persona_calls
        s.persona_calls += 1
        return idx

    # -- phases --------------------------------------------------------

    def pre_check(self, s: _Session) -> str:
        prompt = self.registry.render(_TEMPLATES[s.task.kind]["pre"], task_variables(s.task))
        r = self._call(s, self.detector, "detector", prompt)
        score = self._score(s, r, self.cfg.pre_check)
        decision = pre_check(score, self.cfg.thresholds, self.cfg.pre_check.polarity)
        s.trace.record(
            Phase.PRE_CHECK, 0, digest(prompt, r.text),
            score=score, threshold=self.cfg.thresholds.delta1, decision=decision,
        )
        return decision

    def dissect(self, s: _Session, k: int) -> str | None:
        """Returns the new term, or None when the loop should end early."""
        variables = {**task_variables(s.task), "memory": memory_render(s.memory)}
        prompt = self.registry.render(_TEMPLATES[s.task.kind]["dissect"], variables)
        r = self._call(s, self.detector, "detector", prompt)
        try:
            term = extract_term(r.text)
        except DissectionError:
            log.info("%s: empty dissection at iteration %d; answering with current memory", s.task.id, k)
            s.trace.record(Phase.DISSECT, k, digest(prompt, r.text), decision="stop")
            return None
        if self.cfg.dedupe_terms and term in s.memory.terms():
            s.trace.record(Phase.DISSECT, k, digest(prompt, r.text), decision="stop")
            return None
        s.trace.record(Phase.DISSECT, k, digest(prompt, r.text))
        return term

    def retrieve_and_integrate(self, s: _Session, k: int, term: str) -> str:
        prompt = self.registry.render(EXPLAIN_TERM, {"term": term}, persona_index=self._persona(s))
        explanation = self._call(s, self.resolver, "resolver", prompt).text
        s.trace.record(Phase.RESOLVE_PRELIMINARY, k, digest(prompt, explanation))

        if self.index is None or self.embedder is None:
            raise SessionError(f"{s.task.id}: retrieval requested but no index/embedder loaded", s.trace)
        try:
            (query,) = embed([explanation], self.embedder)
        except EmbedderError as exc:
            raise SessionError(f"{s.task.id}: embedding failed: {exc}", s.trace) from exc
        hits = self.index.search(query, self.cfg.top_k)
        s.retrievals += 1
        s.trace.record(Phase.RETRIEVE, k, digest(explanation, *(h.chunk_id for h in hits)))

        rag_context = "\n".join(h.text for h in hits)
        prompt = self.registry.render(TemplateId.INTEGRATE_SUMMARY, {"rag_context": rag_context})
        summary = self._call(s, self.resolver, "resolver", prompt).text.strip()
        if not summary:
            raise SessionError(f"{s.task.id}: resolver returned an empty summary", s.trace)
        s.memory = memory_append(s.memory, term, summary)
        s.trace.record(Phase.INTEGRATE, k, digest(prompt, summary))
        return summary

    def post_check(self, s: _Session, k: int, summary: str) -> str:
        prompt = self.registry.render(
            TemplateId.POST_CHECK, {"summary_context": summary, "question": s.task.question}
        )
        r = self._call(s, self.detector, "detector", prompt)
        score = self._score(s, r, self.cfg.post_check)
        decision = post_check(
            score, k, self.cfg.thresholds, self.cfg.post_check.polarity, self.cfg.single_round
        )
        s.trace.record(
            Phase.POST_CHECK, k, digest(prompt, r.text),
            score=score, threshold=self.cfg.thresholds.delta4, decision=decision,
        )
        return decision

    def final_answer(self, s: _Session) -> Answer:
        templates = _TEMPLATES[s.task.kind]
        if len(s.memory):
            name = templates["with_rag"]
            variables = {**task_variables(s.task), "memory": memory_render(s.memory)}
        else:
            name = templates["without_rag"]
            variables = task_variables(s.task)
        prompt = self.registry.render(name, variables, persona_index=self._persona(s))
        shots = self.cfg.few_shot.get(s.task.kind.value)
        if shots:
            prompt = f"{shots.rstrip()}\n\n{prompt}"
        raw = self._call(s, self.resolver, "resolver", prompt).text
        # the prompt ends with the marker, so a bare " B" continuation parses too
        label = parse_answer(ANSWER_MARKER + raw, s.task.kind)
        if label != UNPARSED and label not in s.task.label_space:
            label = UNPARSED
        s.trace.record(Phase.FINAL_ANSWER, len(s.memory), digest(prompt, raw))
        return Answer(label, raw, s.retrievals > 0, s.retrievals)

    # -- driver --------------------------------------------------------

    def run(self, task: Task) -> tuple[Answer, SessionTrace]:
        s = _Session(task, SessionTrace(task.id))
        if self.pre_check(s) == "retrieve":
            for k in range(1, self.cfg.thresholds.max_iterations + 1):
                term = self.dissect(s, k)
                if term is None:
                    break
                summary = self.retrieve_and_integrate(s, k, term)
                if self.post_check(s, k, summary) == "stop":
                    break
        answer = self.final_answer(s)
        s.trace.validate(self.cfg.thresholds.max_iterations)
        return answer, s.trace


def run_session(task: Task, cfg: EngineConfig, index: VectorIndex | None, **kw) -> tuple[Answer, SessionTrace]:
    return Moderator(cfg, index, **kw).run(task)
