"""Template packs: loading, literal substitution, and the cycling persona line."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import ConfigurationError, TemplateError

ALLOWED_VARIABLES = frozenset(
    {"question", "options", "context", "rag_context", "summary_context", "memory"}
)
_SLOT = re.compile(r"\{([a-z_]+)\}")


class TemplateId(str, Enum):
    PRE_CHECK_MCQ = "pre_check_mcq"
    PRE_CHECK_YESNO = "pre_check_yesno"
    DISSECT_MCQ = "dissect_mcq"
    DISSECT_YESNO = "dissect_yesno"
    INTEGRATE_SUMMARY = "integrate_summary"
    POST_CHECK = "post_check"
    QA_WITH_RAG_MCQ = "qa_with_rag_mcq"
    QA_WITH_RAG_YESNO = "qa_with_rag_yesno"
    QA_WITHOUT_RAG_MCQ = "qa_without_rag_mcq"
    QA_WITHOUT_RAG_YESNO = "qa_without_rag_yesno"


# Engine-owned templates live in the same pack but are not TemplateIds.
EXPLAIN_TERM = "explain_term"


@dataclass(frozen=True)
class SystemPromptBank:
    sentences: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if len(self.sentences) != 10:
            raise ConfigurationError(f"system prompt bank needs 10 sentences, got {len(self.sentences)}")


def system_prompt(bank: SystemPromptBank, call_index: int) -> str:
    return bank.sentences[call_index % len(bank.sentences)]


@dataclass(frozen=True)
class Template:
    name: str
    text: str
    variables: frozenset[str]
    omit_when_empty: Mapping[str, str]


def _substitute(text: str, values: Mapping[str, str]) -> str:
    # one pass over the template; substituted values are never rescanned
    return _SLOT.sub(lambda m: values[m.group(1)], text)


class PromptRegistry:
    """An immutable template pack."""

    def __init__(self, templates: Mapping[str, Template], bank: SystemPromptBank, root: str = ""):
        self._templates = dict(templates)
        self.bank = bank
        self.root = root
        missing = [t.value for t in TemplateId if t.value not in self._templates]
        if missing:
            raise ConfigurationError(f"template pack {root!r} lacks {missing}")

    @classmethod
    def load(cls, path: str | Path | None = None) -> "PromptRegistry":
        """Load a pack directory; ``None`` loads the bundled medical pack."""
        if path is None:
            root = resources.files("acrag") / "templates" / "medical"
        else:
            root = Path(path)
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
        templates = {}
        for name, spec in manifest["templates"].items():
            text = _read(root / spec["file"])
            declared = frozenset(spec["variables"])
            if name in {t.value for t in TemplateId} and not declared <= ALLOWED_VARIABLES:
                raise ConfigurationError(f"{name}: unknown variables {sorted(declared - ALLOWED_VARIABLES)}")
            found = frozenset(_SLOT.findall(text))
            if found != declared:
                raise ConfigurationError(
                    f"{name}: template slots {sorted(found)} differ from manifest {sorted(declared)}"
                )
            omit = dict(spec.get("omit_when_empty", {}))
            for var, block in omit.items():
                if block not in text:
                    raise ConfigurationError(f"{name}: omit block for {var!r} not found in template")
            templates[name] = Template(name, text, declared, omit)
        sentences = _read(root / manifest["system_prompts"]).split("\n")
        return cls(templates, SystemPromptBank(tuple(sentences)), str(root))

    def names(self) -> list[str]:
        return sorted(self._templates)

    def template(self, name: TemplateId | str) -> Template:
        key = name.value if isinstance(name, TemplateId) else name
        try:
            return self._templates[key]
        except KeyError:
            raise TemplateError(f"unknown template {key!r}") from None

    def render(
        self,
        name: TemplateId | str,
        variables: Mapping[str, str],
        persona_index: int | None = None,
    ) -> str:
        """Substitute ``variables`` into a template.

        The variable set must match the template's declaration exactly.
        With ``persona_index`` the leading persona sentence is swapped for
        the bank entry at that (cyclic) index.
        """
        tpl = self.template(name)
        given = set(variables)
        for var in sorted(tpl.variables - given):
            raise TemplateError(f"{tpl.name}: missing variable {var!r}", variable=var)
        for var in sorted(given - tpl.variables):
            raise TemplateError(f"{tpl.name}: unexpected variable {var!r}", variable=var)
        text = tpl.text
        for var, block in tpl.omit_when_empty.items():
            if variables[var] == "":
                text = text.replace(block, "", 1)
        out = _substitute(text, {k: str(v) for k, v in variables.items()})
        if persona_index is not None:
            out = self.apply_persona(out, persona_index)
        return out

    def apply_persona(self, text: str, call_index: int) -> str:
        default = self.bank.sentences[0]
        if not text.startswith(default):
            return text
        return system_prompt(self.bank, call_index) + text[len(default):]


def _read(path) -> str:
    text = path.read_text(encoding="utf-8")
    return text[:-1] if text.endswith("\n") else text
