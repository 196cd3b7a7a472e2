from __future__ import annotations

import json

import pytest

from reviewforge.corpus import PaperRecord
from reviewforge.dialogue import Dialogue, KnowledgeSource, RewardVector, Role, Utterance

REVIEWS_A = (
    "The paper proposes a benchmark for code intelligence systems with strong baselines.",
    "The experimental evaluation is on a single dataset only and the protocol is unclear.",
    "The task is well defined and the dataset could interest the community.",
)
REVIEWS_B = (
    "The method uses set transformers to model token overlap between institution names.",
    "Results improve the MAP metric over simple baselines on the GRID dataset.",
    "The related work on set based models should be extended further.",
)
REVIEWS_C = (
    "The writing is clear and the motivation is convincing throughout the paper.",
    "The ablation study isolates the contribution of each component carefully.",
    "Reviewer confidence is low because the appendix proofs were not checked.",
)


@pytest.fixture
def paper_records() -> list[PaperRecord]:
    return [
        PaperRecord(id="p1", title="Benchmarking Code Intelligence", paper_type="long",
                    reviews=REVIEWS_A, decision="accept"),
        PaperRecord(id="p2", title="Predicting Institution Hierarchies", paper_type="short",
                    reviews=REVIEWS_B, decision="reject"),
        PaperRecord(id="p3", title="Careful Ablations Everywhere", paper_type="long",
                    reviews=REVIEWS_C),
    ]


@pytest.fixture
def corpus_file(tmp_path, paper_records):
    path = tmp_path / "corpus.jsonl"
    lines = []
    for r in paper_records:
        record = {"id": r.id, "title": r.title, "paper_type": r.paper_type, "reviews": list(r.reviews)}
        if r.decision != "unknown":
            record["decision"] = r.decision
        lines.append(json.dumps(record))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def knowledge(paper_records) -> KnowledgeSource:
    r = paper_records[0]
    return KnowledgeSource(
        title=r.title,
        paper_type=r.paper_type,
        documents=tuple((f"Review {i}", text) for i, text in enumerate(r.reviews, start=1)),
    )


def make_dialogue(texts: list[str], paper_id: str = "p1", provenance: str = "initial",
                  rewards: list[RewardVector | None] | None = None) -> Dialogue:
    """Alternating dialogue starting on a seeker turn."""
    rewards = rewards or [None] * len(texts)
    utterances = tuple(
        Utterance(Role.SEEKER if i % 2 == 0 else Role.AGENT, text, rv)
        for i, (text, rv) in enumerate(zip(texts, rewards))
    )
    return Dialogue(paper_id=paper_id, utterances=utterances, provenance=provenance)
