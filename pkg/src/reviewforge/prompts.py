"""Prompt-template registry.

Templates are data assets under ``templates/``, one file per
(scenario, kind) pair, named ``<scenario>__<kind>.txt``. Bodies carry named
placeholders in braces; rendering substitutes values verbatim in a single
pass. Keeping the prompts in files makes the three initial-generation
variants and the three feedback modes swappable per run without code
changes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path

from .dialogue import Role, RoleLexicon


class PromptError(Exception):
    """Base class for template registry failures."""


class UnknownTemplateError(PromptError):
    pass


class MissingPlaceholderError(PromptError):
    pass


class Scenario(str, Enum):
    META_REVIEW = "meta_review"
    DEBATE = "debate"
    PRODUCT_BUYING = "product_buying"


class PromptKind(str, Enum):
    INITIAL_EXTENSIVE = "initial_extensive"
    INITIAL_PARAPHRASED = "initial_paraphrased"
    INITIAL_TLDR = "initial_tldr"
    FEEDBACK_GENERIC = "feedback_generic"
    FEEDBACK_ACTIONABLE = "feedback_actionable"
    FEEDBACK_REWARDED = "feedback_rewarded"
    REFINE = "refine"
    RESPONSE_GENERATE = "response_generate"
    RESPONSE_FEEDBACK = "response_feedback"
    RESPONSE_REFINE = "response_refine"


ALLOWED_PLACEHOLDERS = frozenset(
    {"title", "paper_type", "knowledge", "dialogue", "feedback", "history", "response"}
)

KIND_PLACEHOLDERS: dict[PromptKind, frozenset[str]] = {
    PromptKind.INITIAL_EXTENSIVE: frozenset({"title", "paper_type", "knowledge"}),
    PromptKind.INITIAL_PARAPHRASED: frozenset({"title", "paper_type", "knowledge"}),
    PromptKind.INITIAL_TLDR: frozenset({"title", "paper_type", "knowledge"}),
    PromptKind.FEEDBACK_GENERIC: frozenset({"knowledge", "dialogue"}),
    PromptKind.FEEDBACK_ACTIONABLE: frozenset({"knowledge", "dialogue"}),
    PromptKind.FEEDBACK_REWARDED: frozenset({"knowledge", "dialogue"}),
    PromptKind.REFINE: frozenset({"knowledge", "feedback", "dialogue"}),
    PromptKind.RESPONSE_GENERATE: frozenset({"title", "paper_type", "knowledge", "history"}),
    PromptKind.RESPONSE_FEEDBACK: frozenset({"knowledge", "history", "response"}),
    PromptKind.RESPONSE_REFINE: frozenset({"knowledge", "feedback", "history", "response"}),
}

INITIAL_VARIANTS = {
    "extensive": PromptKind.INITIAL_EXTENSIVE,
    "paraphrased": PromptKind.INITIAL_PARAPHRASED,
    "tldr": PromptKind.INITIAL_TLDR,
}

FEEDBACK_KINDS = {
    "generic": PromptKind.FEEDBACK_GENERIC,
    "actionable": PromptKind.FEEDBACK_ACTIONABLE,
    "rewarded": PromptKind.FEEDBACK_REWARDED,
}

# Surface speaker labels per scenario; the seeker label comes first so it is
# the canonical one when rendering transcripts.
SCENARIO_LEXICONS: dict[Scenario, RoleLexicon] = {
    Scenario.META_REVIEW: RoleLexicon(
        labels=(("Meta-Reviewer", Role.SEEKER), ("Dialogue Agent", Role.AGENT))
    ),
    Scenario.DEBATE: RoleLexicon(
        labels=(("Decision Maker", Role.SEEKER), ("Dialogue Agent", Role.AGENT))
    ),
    Scenario.PRODUCT_BUYING: RoleLexicon(
        labels=(("Buyer", Role.SEEKER), ("Dialogue Agent", Role.AGENT))
    ),
}


def lexicon_for(scenario: Scenario) -> RoleLexicon:
    return SCENARIO_LEXICONS[scenario]


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    scenario: Scenario
    kind: PromptKind
    body: str

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER_RE.findall(self.body))


_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(sorted(ALLOWED_PLACEHOLDERS)) + r")\}")

_TEMPLATE_DIR = Path(__file__).parent / "templates"


def template_id(scenario: Scenario, kind: PromptKind) -> str:
    return f"{scenario.value}/{kind.value}"


@lru_cache(maxsize=1)
def registry() -> dict[str, PromptTemplate]:
    """Load and validate every template file once per process."""
    templates: dict[str, PromptTemplate] = {}
    for scenario in Scenario:
        for kind in PromptKind:
            path = _TEMPLATE_DIR / f"{scenario.value}__{kind.value}.txt"
            if not path.exists():
                raise PromptError(f"missing template file {path.name}")
            template = PromptTemplate(
                id=template_id(scenario, kind),
                scenario=scenario,
                kind=kind,
                body=path.read_text(encoding="utf-8").strip("\n"),
            )
            required = KIND_PLACEHOLDERS[kind]
            if not required <= template.placeholders:
                raise PromptError(
                    f"template {template.id} is missing placeholders "
                    f"{sorted(required - template.placeholders)}"
                )
            templates[template.id] = template
    return templates


def get_template(tid: str) -> PromptTemplate:
    try:
        return registry()[tid]
    except KeyError:
        raise UnknownTemplateError(f"unknown template id {tid!r}") from None


def render_prompt(tid: str, variables: dict[str, str]) -> str:
    """Substitute placeholder values verbatim; no unresolved placeholders may
    remain, so a missing variable is an error."""
    template = get_template(tid)
    missing = template.placeholders - set(variables)
    if missing:
        raise MissingPlaceholderError(
            f"template {tid} needs values for {sorted(missing)}"
        )
    return _PLACEHOLDER_RE.sub(lambda m: variables[m.group(1)], template.body)
