"""Review-corpus ingestion, filtering, splitting, and dataset statistics.

The corpus file is UTF-8 JSON Lines, one paper per line with fields
``id``, ``title``, ``paper_type`` ("long"|"short"), ``reviews`` (non-empty
array of strings), and optional ``meta_review`` and ``decision``
("accept"|"reject"|"unknown"). All operations here are pure and safe for
concurrent use.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

from .dialogue import Dialogue, Role
from .metrics import DEFAULT_TOKENIZER, TokenizerConfig, distinct_ngrams, tokenize

PAPER_TYPES = ("long", "short")
DECISIONS = ("accept", "reject", "unknown")


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid corpus operations."""


@dataclass(frozen=True)
class PaperRecord:
    """A paper's title, type, and reviews, with optional gold labels."""

    id: str
    title: str
    paper_type: str
    reviews: tuple[str, ...]
    meta_review: str | None = None
    decision: str = "unknown"

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("paper id must be non-empty")
        if self.paper_type not in PAPER_TYPES:
            raise CorpusError(f"paper_type must be one of {PAPER_TYPES}, got {self.paper_type!r}")
        if not self.reviews:
            raise CorpusError(f"paper {self.id!r} has no reviews")
        if any(not r.strip() for r in self.reviews):
            raise CorpusError(f"paper {self.id!r} has an empty review")
        if self.decision not in DECISIONS:
            raise CorpusError(f"decision must be one of {DECISIONS}, got {self.decision!r}")


@dataclass(frozen=True)
class CorpusSplit:
    train: tuple[PaperRecord, ...]
    validation: tuple[PaperRecord, ...]
    test: tuple[PaperRecord, ...]
    seed: int


@dataclass(frozen=True)
class StatsReport:
    dialogue_count: int
    avg_agent_tokens: float
    avg_seeker_tokens: float
    avg_turns: float
    distinct_ngrams: dict[int, int]


def _record_from_json(data: dict) -> PaperRecord:
    required = {"id", "title", "paper_type", "reviews"}
    missing = required - set(data)
    if missing:
        raise CorpusError(f"missing fields {sorted(missing)}")
    return PaperRecord(
        id=str(data["id"]),
        title=str(data["title"]),
        paper_type=data["paper_type"],
        reviews=tuple(data["reviews"]),
        meta_review=data.get("meta_review"),
        decision=data.get("decision", "unknown"),
    )


def load_corpus(path: str | Path) -> list[PaperRecord]:
    """Load a JSONL corpus file, preserving input order.

    Raises :class:`CorpusError` naming the offending line for malformed
    records, and on duplicate ids.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    records: list[PaperRecord] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                record = _record_from_json(data)
            except (json.JSONDecodeError, CorpusError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            if record.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate paper id {record.id!r}")
            seen.add(record.id)
            records.append(record)
    return records


def filter_by_review_count(records: list[PaperRecord], n: int) -> list[PaperRecord]:
    """Keep exactly the records with ``n`` reviews, in input order."""
    if n < 1:
        raise CorpusError(f"review count must be >= 1, got {n}")
    return [r for r in records if len(r.reviews) == n]


def split_corpus(
    records: list[PaperRecord],
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> CorpusSplit:
    """Deterministic train/validation/test split.

    The records are shuffled under ``seed`` and sliced train-first.
    Validation and test sizes are floored (``floor(ratio * N)``); the train
    set takes the remainder, so the union is always complete.
    """
    if len(ratios) != 3:
        raise CorpusError("ratios must be a (train, validation, test) triple")
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise CorpusError(f"ratios must sum to 1.0, got {sum(ratios)}")
    if not records:
        raise CorpusError("cannot split an empty corpus")

    shuffled = list(records)
    random.Random(seed).shuffle(shuffled)
    n = len(shuffled)
    n_val = int(ratios[1] * n)
    n_test = int(ratios[2] * n)
    n_train = n - n_val - n_test
    return CorpusSplit(
        train=tuple(shuffled[:n_train]),
        validation=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
        seed=seed,
    )


def corpus_stats(
    dialogues: list[Dialogue],
    cfg: TokenizerConfig = DEFAULT_TOKENIZER,
) -> StatsReport:
    """Token/turn averages plus seeker-side n-gram diversity.

    Agent and seeker token averages are per-utterance means restricted to the
    respective role; distinct n-grams (n = 2, 3, 4) are counted over seeker
    utterances only.
    """
    if not dialogues:
        raise CorpusError("cannot compute statistics over an empty dialogue list")

    agent_counts: list[int] = []
    seeker_counts: list[int] = []
    seeker_texts: list[str] = []
    for d in dialogues:
        for u in d.utterances:
            n_tokens = len(tokenize(u.text, cfg))
            if u.role == Role.AGENT:
                agent_counts.append(n_tokens)
            else:
                seeker_counts.append(n_tokens)
                seeker_texts.append(u.text)

    def mean(values: list[int]) -> float:
        return sum(values) / len(values) if values else 0.0

    return StatsReport(
        dialogue_count=len(dialogues),
        avg_agent_tokens=mean(agent_counts),
        avg_seeker_tokens=mean(seeker_counts),
        avg_turns=sum(len(d.utterances) for d in dialogues) / len(dialogues),
        distinct_ngrams={n: distinct_ngrams(seeker_texts, n, cfg) for n in (2, 3, 4)},
    )
