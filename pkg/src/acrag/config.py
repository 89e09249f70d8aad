"""Engine configuration: declarative file in, frozen dataclasses out.

The file is YAML (JSON is accepted too). Backends are declared once under
``backends`` and referenced by name from ``roles`` so that sweeps can swap
them. Endpoint env overrides: ``ACRAG_<NAME>_ENDPOINT`` (name upper-cased).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigurationError
from .llm import SCRIPTED, BackendDescriptor, ScriptedBehavior
from .scoring import DEFAULT_AFFIRMATIVE, DEFAULT_NEGATIVE, AffirmativeSet, Polarity, Thresholds


@dataclass(frozen=True)
class CheckConfig:
    tokens: AffirmativeSet
    polarity: Polarity = Polarity.AFFIRMATIVE_MEANS_PROCEED


@dataclass(frozen=True)
class AgentRoles:
    detector: BackendDescriptor
    resolver: BackendDescriptor


@dataclass(frozen=True)
class EngineConfig:
    roles: AgentRoles
    thresholds: Thresholds = field(default_factory=Thresholds)
    pre_check: CheckConfig = field(default_factory=lambda: CheckConfig(AffirmativeSet(DEFAULT_AFFIRMATIVE)))
    # "yes" to the post-check prompt means "context is sufficient", so the
    # continue score is taken over the negative tokens
    post_check: CheckConfig = field(default_factory=lambda: CheckConfig(AffirmativeSet(DEFAULT_NEGATIVE)))
    top_k: int = 1
    single_round: bool = False
    template_pack: str | None = None
    system_prompt_seed: int = 0
    log_base: float = math.e
    dedupe_terms: bool = False
    few_shot: Mapping[str, str] = field(default_factory=dict)
    parallelism: int = 4
    backends: Mapping[str, BackendDescriptor] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pool = dict(self.backends)
        for b in (self.roles.detector, self.roles.resolver):
            pool.setdefault(b.name, b)
        object.__setattr__(self, "backends", pool)
        if self.top_k < 1:
            raise ConfigurationError("top_k must be >= 1")
        if self.parallelism < 1:
            raise ConfigurationError("parallelism must be >= 1")
        if self.log_base <= 0 or self.log_base == 1:
            raise ConfigurationError("log_base must be positive and not 1")
        bad = set(self.few_shot) - {"multiple_choice", "yes_no"}
        if bad:
            raise ConfigurationError(f"few_shot keys must be task kinds, got {sorted(bad)}")

    def with_roles(self, detector: str | None = None, resolver: str | None = None) -> "EngineConfig":
        roles = self.roles
        if detector is not None:
            roles = replace(roles, detector=self.backend(detector))
        if resolver is not None:
            roles = replace(roles, resolver=self.backend(resolver))
        return replace(self, roles=roles)

    def backend(self, name: str) -> BackendDescriptor:
        try:
            return self.backends[name]
        except KeyError:
            raise ConfigurationError(f"unknown backend {name!r}; have {sorted(self.backends)}") from None

    def to_dict(self) -> dict:
        """Resolved config as plain data (scripts are summarised, not dumped)."""
        def backend(b: BackendDescriptor) -> dict:
            d = {
                "name": b.name,
                "endpoint": b.endpoint,
                "model_id": b.model_id,
                "request_timeout": b.request_timeout,
                "max_tokens": b.max_tokens,
                "temperature": b.temperature,
                "top_logprobs": b.top_logprobs,
            }
            if b.script is not None:
                d["script_rules"] = len(b.script.rules)
            return d

        def check(c: CheckConfig) -> dict:
            return {"tokens": sorted(c.tokens.tokens), "polarity": c.polarity.value}

        return {
            "roles": {"detector": self.roles.detector.name, "resolver": self.roles.resolver.name},
            "backends": {n: backend(b) for n, b in sorted(self.backends.items())},
            "thresholds": {
                "delta1": _real(self.thresholds.delta1),
                "delta4": _real(self.thresholds.delta4),
                "max_iterations": self.thresholds.max_iterations,
            },
            "pre_check": check(self.pre_check),
            "post_check": check(self.post_check),
            "top_k": self.top_k,
            "single_round": self.single_round,
            "template_pack": self.template_pack,
            "system_prompt_seed": self.system_prompt_seed,
            "log_base": self.log_base,
            "dedupe_terms": self.dedupe_terms,
            "few_shot": dict(self.few_shot),
            "parallelism": self.parallelism,
        }


def _real(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _float(x: Any) -> float:
    if isinstance(x, str):
        return float(x.replace("∞", "inf"))
    return float(x)


def _backend(name: str, d: Mapping[str, Any], base: Path | None) -> BackendDescriptor:
    endpoint = os.environ.get(f"ACRAG_{name.upper()}_ENDPOINT", d.get("endpoint", SCRIPTED))
    script = None
    if endpoint == SCRIPTED:
        rules = d.get("rules")
        if rules is None and "script" in d:
            path = Path(d["script"])
            if base is not None and not path.is_absolute():
                path = base / path
            rules = _read_structured(path)
            if isinstance(rules, dict):
                rules = rules.get("rules", [])
        if rules is None:
            raise ConfigurationError(f"scripted backend {name!r} needs 'rules' or 'script'")
        script = ScriptedBehavior.from_rules(rules)
    return BackendDescriptor(
        name=name,
        endpoint=endpoint,
        model_id=d.get("model_id", ""),
        request_timeout=float(d.get("request_timeout", 60.0)),
        max_tokens=int(d.get("max_tokens", 256)),
        temperature=float(d.get("temperature", 0.0)),
        top_logprobs=int(d.get("top_logprobs", 5)),
        script=script,
    )


def _check(d: Mapping[str, Any] | None, default: frozenset[str]) -> CheckConfig:
    d = d or {}
    return CheckConfig(
        AffirmativeSet(d.get("tokens", default)),
        Polarity(d.get("polarity", Polarity.AFFIRMATIVE_MEANS_PROCEED.value)),
    )


def config_from_dict(d: Mapping[str, Any], base_dir: str | Path | None = None) -> EngineConfig:
    base = Path(base_dir) if base_dir is not None else None
    backends = {name: _backend(name, spec or {}, base) for name, spec in (d.get("backends") or {}).items()}
    roles = d.get("roles") or {}
    for role in ("detector", "resolver"):
        if roles.get(role) not in backends:
            raise ConfigurationError(f"roles.{role} must name one of the declared backends")
    th = d.get("thresholds") or {}
    few_shot = {}
    for kind, value in (d.get("few_shot") or {}).items():
        few_shot[kind] = _text_or_file(value, base)
    pack = d.get("template_pack")
    if pack is not None and base is not None and not Path(pack).is_absolute():
        pack = str(base / pack)
    try:
        return EngineConfig(
            roles=AgentRoles(backends[roles["detector"]], backends[roles["resolver"]]),
            thresholds=Thresholds(
                delta1=_float(th.get("delta1", -2.0)),
                delta4=_float(th.get("delta4", -3.0)),
                max_iterations=int(th.get("max_iterations", 3)),
            ),
            pre_check=_check(d.get("pre_check"), DEFAULT_AFFIRMATIVE),
            post_check=_check(d.get("post_check"), DEFAULT_NEGATIVE),
            top_k=int(d.get("top_k", 1)),
            single_round=bool(d.get("single_round", False)),
            template_pack=pack,
            system_prompt_seed=int(d.get("system_prompt_seed", 0)),
            log_base=_float(d.get("log_base", math.e)),
            dedupe_terms=bool(d.get("dedupe_terms", False)),
            few_shot=few_shot,
            parallelism=int(d.get("parallelism", 4)),
            backends=backends,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc


def _text_or_file(value: str, base: Path | None) -> str:
    path = Path(value) if base is None else base / value
    try:
        if path.is_file():
            return path.read_text(encoding="utf-8")
    except OSError:
        pass
    return value


def _read_structured(path: Path):
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return json.loads(text)
    return yaml.safe_load(text)


def load_config(path: str | Path) -> EngineConfig:
    path = Path(path)
    data = _read_structured(path)
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config must be a mapping")
    return config_from_dict(data, base_dir=path.parent)
