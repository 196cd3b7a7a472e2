"""Dialogue data model and the transcript parser/renderer.

A dialogue is an ordered, role-alternating sequence of utterances between an
information seeker (meta-reviewer, decision maker, or buyer) and a dialogue
agent. Utterances may carry per-utterance reward annotations which the
renderer emits as trailing "F1: x, NLI: x, Kprec: x, Specificity: x" suffixes
and the parser strips back out. All values are immutable once constructed and
safe to share across threads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum


class TranscriptError(ValueError):
    """Base class for transcript parse/render failures."""


class UnparseableTranscript(TranscriptError):
    """Raw text contains no recognizable role label."""


class TooShortTranscript(TranscriptError):
    """Parsed dialogue has fewer than two utterances."""


class Role(str, Enum):
    SEEKER = "seeker"
    AGENT = "agent"


PROVENANCES = ("initial", "refined", "human", "live")


@dataclass(frozen=True)
class RewardVector:
    """Per-utterance scores; every present value lies in [0, 1].

    Fields map onto the annotation keys used in transcripts:
    q2_f1 <-> "F1", q2_nli <-> "NLI", k_prec <-> "Kprec",
    specificity <-> "Specificity".
    """

    k_prec: float | None = None
    q2_f1: float | None = None
    q2_nli: float | None = None
    specificity: float | None = None

    def __post_init__(self) -> None:
        for name, value in self.to_dict().items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"reward {name}={value} outside [0, 1]")

    def to_dict(self) -> dict[str, float]:
        """Present fields only."""
        out = {}
        for name in ("k_prec", "q2_f1", "q2_nli", "specificity"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, float]) -> "RewardVector":
        unknown = set(data) - {"k_prec", "q2_f1", "q2_nli", "specificity"}
        if unknown:
            raise ValueError(f"unknown reward fields: {sorted(unknown)}")
        return cls(**data)

    @property
    def is_empty(self) -> bool:
        return not self.to_dict()


@dataclass(frozen=True)
class Utterance:
    role: Role
    text: str
    rewards: RewardVector | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("utterance text empty after whitespace trim")


@dataclass(frozen=True)
class Dialogue:
    """Ordered utterances with strictly alternating roles."""

    paper_id: str
    utterances: tuple[Utterance, ...]
    provenance: str = "initial"

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        for prev, cur in zip(self.utterances, self.utterances[1:]):
            if prev.role == cur.role:
                raise ValueError("dialogue roles must strictly alternate")


@dataclass(frozen=True)
class KnowledgeSource:
    """The documents an agent must ground its answers in."""

    title: str
    paper_type: str
    documents: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if self.paper_type not in ("long", "short"):
            raise ValueError(f"paper_type must be 'long' or 'short', got {self.paper_type!r}")
        if not self.documents:
            raise ValueError("knowledge source needs at least one document")
        labels = [label for label, _ in self.documents]
        if len(set(labels)) != len(labels):
            raise ValueError("document labels must be unique")


@dataclass(frozen=True)
class RoleLexicon:
    """Ordered mapping from surface speaker labels to roles.

    Lookup is tolerant of case, hyphens, and spaces ("Meta-Reviewer",
    "MetaReviewer", and "meta reviewer" all resolve alike). The first label
    listed for a role is the canonical one used when rendering.
    """

    labels: tuple[tuple[str, Role], ...]

    def __post_init__(self) -> None:
        roles = {role for _, role in self.labels}
        if roles != {Role.SEEKER, Role.AGENT}:
            raise ValueError("lexicon needs at least one label per role")

    @staticmethod
    def _key(label: str) -> str:
        return re.sub(r"[^a-z0-9]", "", label.lower())

    def role_of(self, label: str) -> Role | None:
        key = self._key(label)
        for surface, role in self.labels:
            if self._key(surface) == key:
                return role
        return None

    def label_for(self, role: Role) -> str:
        for surface, r in self.labels:
            if r == role:
                return surface
        raise ValueError(f"no label for role {role}")  # unreachable given __post_init__


DEFAULT_LEXICON = RoleLexicon(
    labels=(
        ("Meta-Reviewer", Role.SEEKER),
        ("Dialogue Agent", Role.AGENT),
    )
)

# Annotation keys as they appear in transcripts, in render order.
_REWARD_KEYS = (("F1", "q2_f1"), ("NLI", "q2_nli"), ("Kprec", "k_prec"), ("Specificity", "specificity"))

_KEY_TO_FIELD = {
    "f1": "q2_f1",
    "nli": "q2_nli",
    "kprec": "k_prec",
    "kprecision": "k_prec",
    "spec": "specificity",
    "specificity": "specificity",
}

# One trailing "<key>: <value>" pair, value restricted to [0, 1] so prose like
# "achieves F1: 92.4" is never mistaken for an annotation. Anchored to the end
# of the segment and stripped iteratively, which handles partial annotation
# sets and the occasional "and" separator between pairs.
_TRAILING_REWARD = re.compile(
    r"[\s,;]*(?:\band[\s,]+)?\b(F1|NLI|KPrecision|KPrec|Specificity|Spec)\s*[:=]\s*"
    r"(1(?:\.0+)?|0(?:\.\d+)?|\.\d+)\s*[.]?\s*$",
    re.IGNORECASE,
)

_SEGMENT_LABEL = re.compile(r"^\s*\**([A-Za-z][A-Za-z .\-]{0,30}?)\**\s*:\s*(.*)")


def strip_reward_suffix(text: str) -> tuple[str, RewardVector | None]:
    """Split trailing reward annotations off a segment.

    Returns the remaining text and the parsed vector, or ``None`` when the
    segment carries no annotation. Only end-anchored pairs are stripped;
    reward-like fragments mid-sentence are left untouched.
    """
    found: dict[str, float] = {}
    remaining = text
    while True:
        m = _TRAILING_REWARD.search(remaining)
        if m is None:
            break
        field_name = _KEY_TO_FIELD[m.group(1).lower()]
        # Scanning right-to-left, so an earlier (leftmost) duplicate loses.
        found.setdefault(field_name, float(m.group(2)))
        remaining = remaining[: m.start()]
    if not found:
        return text, None
    return remaining.rstrip(" \t,;"), RewardVector(**found)


def strip_role_prefix(text: str, lexicon: RoleLexicon = DEFAULT_LEXICON) -> tuple[str, Role | None]:
    """Remove a leading "<Label>:" marker if the label is in the lexicon."""
    m = _SEGMENT_LABEL.match(text)
    if m is not None:
        role = lexicon.role_of(m.group(1))
        if role is not None:
            return text[m.start(2) :].strip(), role
    return text.strip(), None


def clean_response_text(raw: str, lexicon: RoleLexicon = DEFAULT_LEXICON) -> tuple[str, RewardVector | None]:
    """Normalize a single model-produced response: drop any role label prefix
    and any trailing reward annotation."""
    text, _ = strip_role_prefix(raw.strip(), lexicon)
    text, rewards = strip_reward_suffix(text)
    return text.strip(), rewards


def parse_transcript(
    raw: str,
    lexicon: RoleLexicon = DEFAULT_LEXICON,
    *,
    paper_id: str = "",
    provenance: str = "initial",
) -> Dialogue:
    """Parse raw LLM output into a structured dialogue.

    Segments start on lines beginning with a lexicon label followed by ":".
    Lines before the first label (preambles) are dropped, continuation lines
    attach to the current segment, trailing reward annotations become
    :class:`RewardVector` values, and consecutive same-role segments are
    merged so the alternation invariant always holds.

    Raises :class:`UnparseableTranscript` when no label is found anywhere and
    :class:`TooShortTranscript` when fewer than two utterances remain.
    """
    if not raw.strip():
        raise UnparseableTranscript("empty transcript")

    segments: list[tuple[Role, list[str]]] = []
    for line in raw.splitlines():
        role = None
        body = line
        m = _SEGMENT_LABEL.match(line)
        if m is not None:
            role = lexicon.role_of(m.group(1))
            if role is not None:
                body = m.group(2)
        if role is not None:
            segments.append((role, [body]))
        elif segments:
            segments[-1][1].append(line)
        # else: preamble before the first labelled segment, dropped

    if not segments:
        raise UnparseableTranscript("no recognized role label in transcript")

    utterances: list[Utterance] = []
    for role, lines in segments:
        text, rewards = strip_reward_suffix("\n".join(lines).strip())
        text = text.strip()
        if not text:
            continue
        if utterances and utterances[-1].role == role:
            prev = utterances[-1]
            merged_rewards = rewards if rewards is not None else prev.rewards
            utterances[-1] = Utterance(role, prev.text + "\n" + text, merged_rewards)
        else:
            utterances.append(Utterance(role, text, rewards))

    if len(utterances) < 2:
        raise TooShortTranscript(f"dialogue has {len(utterances)} utterance(s), need at least 2")

    return Dialogue(paper_id=paper_id, utterances=tuple(utterances), provenance=provenance)


def format_reward_suffix(rewards: RewardVector) -> str:
    """Render present reward fields as ", F1: a, NLI: b, Kprec: c, Specificity: d"."""
    parts = []
    for key, field_name in _REWARD_KEYS:
        value = getattr(rewards, field_name)
        if value is not None:
            parts.append(f"{key}: {value:.2f}")
    return ", " + ", ".join(parts) if parts else ""


def render_transcript(
    d: Dialogue,
    with_rewards: bool = False,
    lexicon: RoleLexicon = DEFAULT_LEXICON,
) -> str:
    """Render a dialogue as "<Label>: <text>" segments, one per utterance.

    With ``with_rewards`` the annotation suffix is appended at two-decimal
    precision; an utterance without rewards is then an error.
    """
    lines = []
    for i, u in enumerate(d.utterances):
        segment = f"{lexicon.label_for(u.role)}: {u.text}"
        if with_rewards:
            if u.rewards is None or u.rewards.is_empty:
                raise TranscriptError(f"utterance {i} has no rewards to render")
            segment += format_reward_suffix(u.rewards)
        lines.append(segment)
    return "\n".join(lines)


def knowledge_text(k: KnowledgeSource) -> str:
    """Deterministic flat-text form of a knowledge source, in document order."""
    lines = [f"Title: {k.title}", f"Type: {k.paper_type}"]
    lines.extend(f"{label}: {body}" for label, body in k.documents)
    return "\n".join(lines)


def documents_text(k: KnowledgeSource) -> str:
    """Only the labelled documents, for prompt bodies that carry the title
    and type in separate placeholders."""
    return "\n".join(f"{label}: {body}" for label, body in k.documents)


def dialogue_to_record(d: Dialogue) -> dict:
    """Serializable record form (see the dataset file schema)."""
    utterances = []
    for u in d.utterances:
        item: dict = {"role": u.role.value, "text": u.text}
        if u.rewards is not None and not u.rewards.is_empty:
            item["rewards"] = u.rewards.to_dict()
        utterances.append(item)
    return {"paper_id": d.paper_id, "provenance": d.provenance, "utterances": utterances}


def dialogue_from_record(record: dict) -> Dialogue:
    try:
        utterances = tuple(
            Utterance(
                role=Role(item["role"]),
                text=item["text"],
                rewards=RewardVector.from_dict(item["rewards"]) if item.get("rewards") else None,
            )
            for item in record["utterances"]
        )
        return Dialogue(
            paper_id=record["paper_id"],
            utterances=utterances,
            provenance=record.get("provenance", "initial"),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed dialogue record: {exc}") from exc
