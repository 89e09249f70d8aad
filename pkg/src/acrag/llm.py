"""Completion backends that report per-token log-probabilities.

Two adapters share one surface, ``complete(prompt) -> CompletionResult``:

* :class:`ScriptedAdapter` answers from an ordered rule list; it is a pure
  function of the prompt and is what the test-suite and offline sweeps use.
* :class:`RemoteAdapter` speaks the HTTP completion dialect documented in
  ``docs/wire_protocol.md``. It transports log-probabilities untouched.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import httpx

from .errors import (
    ConfigurationError,
    EmptyCompletionError,
    InvalidArgument,
    ProtocolError,
    TransportError,
)

log = logging.getLogger(__name__)

SCRIPTED = "scripted"
PROB_SLACK = 1e-6
FINISH_REASONS = ("stop", "length", "error")


@dataclass(frozen=True)
class ScriptedRule:
    """``match`` is a substring, or a regex when prefixed with ``re:``.

    An empty ``match`` is a catch-all.
    """

    match: str
    response_text: str
    first_position_logprobs: Mapping[str, float] = field(default_factory=dict)

    def matches(self, prompt: str) -> bool:
        if self.match.startswith("re:"):
            return re.search(self.match[3:], prompt, flags=re.DOTALL) is not None
        return self.match in prompt

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptedRule":
        return cls(
            match=d.get("match", ""),
            response_text=d.get("response_text", d.get("text", "")),
            first_position_logprobs=dict(d.get("logprobs", d.get("first_position_logprobs", {}))),
        )


@dataclass(frozen=True)
class ScriptedBehavior:
    rules: tuple[ScriptedRule, ...]
    require_catch_all: bool = True

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if not self.rules:
            raise ConfigurationError("scripted behavior needs at least one rule")
        if self.require_catch_all and self.rules[-1].match != "":
            raise ConfigurationError("scripted behavior must end with a catch-all rule (match '')")
        for rule in self.rules:
            try:
                _check_position(dict(rule.first_position_logprobs))
            except ProtocolError as exc:
                raise ConfigurationError(f"scripted rule {rule.match!r}: {exc}") from exc

    @classmethod
    def from_rules(cls, rules: Sequence[dict], **kw) -> "ScriptedBehavior":
        return cls(tuple(ScriptedRule.from_dict(r) for r in rules), **kw)


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    endpoint: str
    model_id: str = ""
    request_timeout: float = 60.0
    max_tokens: int = 256
    temperature: float = 0.0
    top_logprobs: int = 5
    script: ScriptedBehavior | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.top_logprobs < 1:
            raise ConfigurationError(f"backend {self.name}: top_logprobs must be >= 1")
        if self.temperature < 0:
            raise ConfigurationError(f"backend {self.name}: temperature must be >= 0")
        if self.endpoint == SCRIPTED and self.script is None:
            raise ConfigurationError(f"backend {self.name}: scripted endpoint without a script")

    @property
    def is_scripted(self) -> bool:
        return self.endpoint == SCRIPTED


@dataclass(frozen=True)
class CompletionResult:
    text: str
    token_logprobs: tuple[dict[str, float], ...] = ()
    finish_reason: str = "stop"

    def __post_init__(self):
        object.__setattr__(self, "token_logprobs", tuple(self.token_logprobs))
        if self.finish_reason not in FINISH_REASONS:
            raise ProtocolError(f"unknown finish_reason {self.finish_reason!r}")
        for pos in self.token_logprobs:
            _check_position(pos)


def _check_position(pos: Mapping[str, float]) -> None:
    total = 0.0
    for tok, lp in pos.items():
        if not isinstance(lp, (int, float)) or math.isnan(lp) or lp > 0:
            raise ProtocolError(f"log-probability for {tok!r} is {lp!r}; must be <= 0")
        total += math.exp(lp)
    if total > 1 + PROB_SLACK:
        raise ProtocolError(f"position probabilities sum to {total:.9f} > 1")


def first_position_logprobs(r: CompletionResult) -> dict[str, float]:
    if not r.token_logprobs:
        raise EmptyCompletionError("completion has no token positions")
    return r.token_logprobs[0]


class ScriptedAdapter:
    def __init__(self, behavior: ScriptedBehavior):
        self.behavior = behavior

    def complete(self, prompt: str) -> CompletionResult:
        if not prompt:
            raise InvalidArgument("prompt must be non-empty")
        for rule in self.behavior.rules:
            if rule.matches(prompt):
                positions = (dict(rule.first_position_logprobs),) if rule.first_position_logprobs else ()
                return CompletionResult(rule.response_text, positions, "stop")
        raise ConfigurationError("no scripted rule matched the prompt")


class RemoteAdapter:
    """HTTP JSON completion client.

    Transport failures (timeouts, connection errors, 5xx) are retried
    ``retries`` times with exponential backoff; anything else fails at once.
    """

    def __init__(
        self,
        backend: BackendDescriptor,
        *,
        retries: int = 2,
        backoff: float = 0.5,
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        self.backend = backend
        self.retries = retries
        self.backoff = backoff
        headers = {"Content-Type": "application/json"}
        key = api_key if api_key is not None else os.environ.get("ACRAG_API_KEY")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        # one pooled client shared by every session thread; httpx.Client is thread-safe
        self._client = httpx.Client(
            timeout=backend.request_timeout, headers=headers, transport=transport,
            limits=httpx.Limits(max_connections=32),
        )

    def request_body(self, prompt: str) -> bytes:
        body = {
            "model": self.backend.model_id,
            "prompt": prompt,
            "max_tokens": self.backend.max_tokens,
            "temperature": self.backend.temperature,
            "logprobs": self.backend.top_logprobs,
        }
        return json.dumps(body, ensure_ascii=False, separators=(",", ":")).encode("utf-8")

    def complete(self, prompt: str) -> CompletionResult:
        if not prompt:
            raise InvalidArgument("prompt must be non-empty")
        body = self.request_body(prompt)
        attempt = 0
        while True:
            try:
                return self._post(body)
            except TransportError as exc:
                if attempt >= self.retries:
                    raise
                delay = self.backoff * (2**attempt)
                log.warning("%s: %s; retry %d in %.2fs", self.backend.name, exc, attempt + 1, delay)
                time.sleep(delay)
                attempt += 1

    def _post(self, body: bytes) -> CompletionResult:
        try:
            resp = self._client.post(self.backend.endpoint, content=body)
        except httpx.TimeoutException as exc:
            raise TransportError(f"timeout: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise ProtocolError("reply is not JSON") from exc
        return parse_completion_response(payload, self.backend.top_logprobs)

    def close(self) -> None:
        self._client.close()


def parse_completion_response(payload: dict, top_logprobs: int) -> CompletionResult:
    """Map the completion dialect onto CompletionResult (see docs/wire_protocol.md)."""
    try:
        choice = payload["choices"][0]
        text = choice["text"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProtocolError("reply lacks choices[0].text") from exc
    if not isinstance(text, str):
        raise ProtocolError("choices[0].text is not a string")
    finish = choice.get("finish_reason") or "stop"
    if finish not in FINISH_REASONS:
        finish = "stop" if finish in ("eos", "stop_sequence") else "error"
    lp = choice.get("logprobs")
    if not isinstance(lp, dict):
        raise ProtocolError("reply lacks per-token logprobs")
    tops = lp.get("top_logprobs")
    if tops is None:
        tokens, values = lp.get("tokens"), lp.get("token_logprobs")
        if tokens is None or values is None or len(tokens) != len(values):
            raise ProtocolError("reply lacks top_logprobs and token_logprobs")
        tops = [{t: v} for t, v in zip(tokens, values)]
    positions = []
    for i, pos in enumerate(tops):
        if not isinstance(pos, dict) or not pos:
            raise ProtocolError(f"position {i}: top_logprobs entry is not a non-empty map")
        ranked = sorted(pos.items(), key=lambda kv: -kv[1])[:top_logprobs]
        positions.append(dict(ranked))
    return CompletionResult(text, tuple(positions), finish)


def adapter_for(backend: BackendDescriptor, **kw):
    if backend.is_scripted:
        return ScriptedAdapter(backend.script)
    return RemoteAdapter(backend, **kw)


def complete(backend: BackendDescriptor, prompt: str) -> CompletionResult:
    """One-shot completion. Sessions hold adapters instead of calling this in a loop."""
    adapter = adapter_for(backend)
    try:
        return adapter.complete(prompt)
    finally:
        if isinstance(adapter, RemoteAdapter):
            adapter.close()
