from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reviewforge.corpus import (
    CorpusError,
    PaperRecord,
    corpus_stats,
    filter_by_review_count,
    load_corpus,
    split_corpus,
)
from reviewforge.metrics import tokenize

from .conftest import make_dialogue


def _papers(n: int) -> list[PaperRecord]:
    return [
        PaperRecord(id=f"p{i}", title=f"Paper {i}", paper_type="long", reviews=("r1", "r2", "r3"))
        for i in range(n)
    ]


class TestLoadCorpus:
    def test_valid_file(self, corpus_file, paper_records):
        records = load_corpus(corpus_file)
        assert [r.id for r in records] == [r.id for r in paper_records]
        assert records[0].reviews == paper_records[0].reviews
        assert records[2].decision == "unknown"  # absent label stays total

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorpusError):
            load_corpus(tmp_path / "absent.jsonl")

    def test_missing_title_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            json.dumps({"id": "a", "title": "ok", "paper_type": "long", "reviews": ["r"]})
            + "\n"
            + json.dumps({"id": "b", "paper_type": "long", "reviews": ["r"]})
            + "\n"
        )
        with pytest.raises(CorpusError, match=":2:"):
            load_corpus(path)

    def test_duplicate_id(self, tmp_path):
        line = json.dumps({"id": "p1", "title": "t", "paper_type": "long", "reviews": ["r"]})
        path = tmp_path / "dup.jsonl"
        path.write_text(line + "\n" + line + "\n")
        with pytest.raises(CorpusError, match="duplicate"):
            load_corpus(path)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text("{not json}\n")
        with pytest.raises(CorpusError, match=":1:"):
            load_corpus(path)

    def test_empty_reviews_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text(json.dumps({"id": "a", "title": "t", "paper_type": "long", "reviews": []}) + "\n")
        with pytest.raises(CorpusError):
            load_corpus(path)


class TestFilter:
    def test_keeps_exact_counts(self):
        records = [
            PaperRecord(id="a", title="t", paper_type="long", reviews=("1", "2", "3")),
            PaperRecord(id="b", title="t", paper_type="long", reviews=("1", "2")),
            PaperRecord(id="c", title="t", paper_type="long", reviews=("1", "2", "3")),
        ]
        assert [r.id for r in filter_by_review_count(records, 3)] == ["a", "c"]

    def test_empty_input(self):
        assert filter_by_review_count([], 3) == []

    def test_no_matches(self):
        records = [
            PaperRecord(id="a", title="t", paper_type="long", reviews=tuple("abcd")),
            PaperRecord(id="b", title="t", paper_type="long", reviews=tuple("abcde")),
        ]
        assert filter_by_review_count(records, 3) == []

    def test_invalid_n(self):
        with pytest.raises(CorpusError):
            filter_by_review_count([], 0)

    @given(counts=st.lists(st.integers(1, 5), min_size=0, max_size=20), n=st.integers(1, 5))
    def test_idempotent(self, counts, n):
        records = [
            PaperRecord(id=f"p{i}", title="t", paper_type="long", reviews=tuple(f"r{j}" for j in range(c)))
            for i, c in enumerate(counts)
        ]
        once = filter_by_review_count(records, n)
        assert filter_by_review_count(once, n) == once


class TestSplit:
    def test_sizes_n10(self):
        split = split_corpus(_papers(10), seed=42)
        assert (len(split.train), len(split.validation), len(split.test)) == (6, 2, 2)

    def test_sizes_n5(self):
        split = split_corpus(_papers(5), seed=0)
        assert (len(split.train), len(split.validation), len(split.test)) == (3, 1, 1)

    def test_deterministic(self):
        records = _papers(23)
        first = split_corpus(records, seed=7)
        second = split_corpus(records, seed=7)
        assert first == second

    def test_different_seed_usually_differs(self):
        records = _papers(50)
        assert split_corpus(records, seed=1) != split_corpus(records, seed=2)

    def test_empty_input(self):
        with pytest.raises(CorpusError):
            split_corpus([])

    def test_bad_ratios(self):
        with pytest.raises(CorpusError):
            split_corpus(_papers(3), ratios=(0.5, 0.2, 0.2))

    @given(n=st.integers(1, 200), seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=100)
    def test_disjoint_and_complete(self, n, seed):
        records = _papers(n)
        split = split_corpus(records, seed=seed)
        ids = [r.id for part in (split.train, split.validation, split.test) for r in part]
        assert len(ids) == len(set(ids)) == n
        assert set(ids) == {r.id for r in records}


class TestStats:
    def test_agent_token_average_hand_count(self):
        # Agent utterances of 10, 20, and 30 tokens -> mean 20.
        d1 = make_dialogue(["seeker asks", " ".join(["tok"] * 10), "again", " ".join(["tok"] * 20)])
        d2 = make_dialogue(["hello", " ".join(["tok"] * 30)])
        report = corpus_stats([d1, d2])
        assert report.avg_agent_tokens == pytest.approx(20.0, abs=1e-12)
        assert report.dialogue_count == 2

    def test_avg_turns(self):
        dialogues = [make_dialogue(["a", "b", "c", "d"]) for _ in range(3)]
        assert corpus_stats(dialogues).avg_turns == pytest.approx(4.0)

    def test_seeker_bigrams_hand_enumeration(self):
        d = make_dialogue(["the cat sat", "reply one", "the cat ran", "reply two"])
        assert corpus_stats([d]).distinct_ngrams[2] == 3

    def test_empty_is_error(self):
        with pytest.raises(CorpusError):
            corpus_stats([])

    def test_matches_brute_force(self):
        rng = random.Random(11)
        words = ["alpha", "beta", "gamma", "delta"]
        dialogues = [
            make_dialogue(
                [" ".join(rng.choice(words) for _ in range(rng.randrange(1, 8))) for _ in range(2 * rng.randrange(1, 4))]
            )
            for _ in range(5)
        ]
        report = corpus_stats(dialogues)
        agent_tokens = [
            len(tokenize(u.text)) for d in dialogues for i, u in enumerate(d.utterances) if i % 2 == 1
        ]
        seeker_tokens = [
            len(tokenize(u.text)) for d in dialogues for i, u in enumerate(d.utterances) if i % 2 == 0
        ]
        assert report.avg_agent_tokens == pytest.approx(sum(agent_tokens) / len(agent_tokens), abs=1e-12)
        assert report.avg_seeker_tokens == pytest.approx(sum(seeker_tokens) / len(seeker_tokens), abs=1e-12)
