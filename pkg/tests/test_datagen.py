from __future__ import annotations

import json

import pytest

from reviewforge.datagen import (
    DatagenError,
    RunManifest,
    build_manifest,
    eval_responses,
    evaluate_dataset,
    knowledge_from_paper,
    load_dataset,
    sample_dialogues,
    synthesize_dataset,
)
from reviewforge.dialogue import (
    RewardVector,
    Role,
    dialogue_to_record,
    knowledge_text,
)
from reviewforge.gateway import GroundedMockLlm
from reviewforge.metrics import k_precision, specificity
from reviewforge.remuse import RemuseConfig

from .conftest import make_dialogue

RC = RemuseConfig(reward_subset=frozenset({"k_prec"}), iterations=1)
MOCK_PROVIDER = {"kind": "mock_grounded"}


def _manifest(corpus_file, tmp_path, resume=False, provider=MOCK_PROVIDER) -> RunManifest:
    return build_manifest(str(corpus_file), str(tmp_path / "dataset.jsonl"), RC, provider, resume=resume)


class TestManifest:
    def test_every_corpus_id_present(self, corpus_file, tmp_path):
        manifest = _manifest(corpus_file, tmp_path)
        assert set(manifest.status) == {"p1", "p2", "p3"}
        assert all(st.state == "pending" for st in manifest.status.values())

    def test_round_trip(self, corpus_file, tmp_path):
        manifest = _manifest(corpus_file, tmp_path)
        manifest.save()
        loaded = RunManifest.load(manifest.manifest_path)
        assert loaded.to_dict() == manifest.to_dict()


class TestSynthesize:
    def test_full_batch(self, corpus_file, tmp_path):
        manifest = synthesize_dataset(_manifest(corpus_file, tmp_path))
        assert manifest.counts() == {"pending": 0, "done": 3, "failed": 0}
        dialogues = load_dataset(manifest.output_path)
        assert [d.paper_id for d in dialogues] == ["p1", "p2", "p3"]
        assert all(d.provenance == "refined" for d in dialogues)
        # Construction-time rewards are stored on the records.
        assert all(u.rewards is not None for d in dialogues for u in d.utterances)

    def test_failure_isolation(self, corpus_file, tmp_path):
        provider = {"kind": "mock_grounded", "fail_titles": ["Predicting Institution Hierarchies"]}
        manifest = synthesize_dataset(_manifest(corpus_file, tmp_path, provider=provider))
        assert manifest.counts() == {"pending": 0, "done": 2, "failed": 1}
        assert manifest.status["p2"].state == "failed"
        assert "parseable" in manifest.status["p2"].reason
        assert [d.paper_id for d in load_dataset(manifest.output_path)] == ["p1", "p3"]

    def test_resume_skips_done(self, corpus_file, tmp_path):
        manifest = synthesize_dataset(_manifest(corpus_file, tmp_path))
        first = (tmp_path / "dataset.jsonl").read_bytes()
        llm = GroundedMockLlm()
        again = build_manifest(
            str(corpus_file), str(tmp_path / "dataset.jsonl"), RC, MOCK_PROVIDER, resume=True
        )
        synthesize_dataset(again, llm=llm)
        assert (tmp_path / "dataset.jsonl").read_bytes() == first
        assert llm.calls == []  # nothing left to do

    def test_kill_and_resume_matches_uninterrupted(self, corpus_file, tmp_path):
        # Uninterrupted reference run.
        reference = tmp_path / "ref.jsonl"
        synthesize_dataset(
            build_manifest(str(corpus_file), str(reference), RC, MOCK_PROVIDER)
        )

        # Interrupted run: 3 calls per paper, die during paper 2.
        out = tmp_path / "dataset.jsonl"
        manifest = build_manifest(str(corpus_file), str(out), RC, MOCK_PROVIDER)
        with pytest.raises(KeyboardInterrupt):
            synthesize_dataset(manifest, llm=GroundedMockLlm(interrupt_after_calls=4))
        interrupted = RunManifest.load(manifest.manifest_path)
        assert interrupted.status["p1"].state == "done"
        assert interrupted.status["p2"].state == "pending"

        resumed = build_manifest(str(corpus_file), str(out), RC, MOCK_PROVIDER, resume=True)
        synthesize_dataset(resumed)
        assert out.read_bytes() == reference.read_bytes()

    def test_worker_pool_preserves_corpus_order(self, corpus_file, tmp_path):
        sequential = tmp_path / "seq.jsonl"
        synthesize_dataset(build_manifest(str(corpus_file), str(sequential), RC, MOCK_PROVIDER))
        pooled = tmp_path / "pooled.jsonl"
        synthesize_dataset(
            build_manifest(str(corpus_file), str(pooled), RC, MOCK_PROVIDER), workers=3
        )
        assert pooled.read_bytes() == sequential.read_bytes()

    def test_invalid_workers(self, corpus_file, tmp_path):
        with pytest.raises(DatagenError):
            synthesize_dataset(_manifest(corpus_file, tmp_path), workers=0)

    def test_trace_sidecar(self, corpus_file, tmp_path):
        traces = tmp_path / "traces.jsonl"
        synthesize_dataset(_manifest(corpus_file, tmp_path), traces_path=str(traces))
        lines = [json.loads(line) for line in traces.read_text().splitlines()]
        assert [t["paper_id"] for t in lines] == ["p1", "p2", "p3"]
        assert all(len(t["rounds"]) == 1 for t in lines)


def _write_dataset(path, dialogues):
    path.write_text(
        "\n".join(json.dumps(dialogue_to_record(d), sort_keys=True) for d in dialogues) + "\n"
    )


class TestEvaluateDataset:
    def _grounded_dialogue(self, record, paper_records):
        paper = next(p for p in paper_records if p.id == record)
        return make_dialogue(
            ["What does the first review say?", paper.reviews[0],
             "And the second?", paper.reviews[1]],
            paper_id=paper.id,
        )

    def test_verbatim_agent_turns_score_one(self, corpus_file, paper_records, tmp_path):
        dataset = tmp_path / "ds.jsonl"
        _write_dataset(dataset, [self._grounded_dialogue(pid, paper_records) for pid in ("p1", "p2", "p3")])
        report = evaluate_dataset(dataset, corpus_file)
        assert report.mean_agent_k_prec == pytest.approx(1.0, abs=1e-12)
        assert report.done == 3 and report.failed == 0 and report.skipped == 0
        assert report.annotation_discrepancies == 0

    def test_matches_brute_force(self, corpus_file, paper_records, tmp_path):
        dataset = tmp_path / "ds.jsonl"
        dialogues = [
            make_dialogue(
                ["Is the method novel at all?", "The method is partially novel they say.",
                 "What about 92.4 results?", paper_records[0].reviews[2]],
                paper_id="p1",
            ),
            self._grounded_dialogue("p2", paper_records),
        ]
        _write_dataset(dataset, dialogues)
        report = evaluate_dataset(dataset, corpus_file)

        # Brute force, straight from raw utterances.
        expected_kprec, expected_spec = [], []
        for d in dialogues:
            paper = next(p for p in paper_records if p.id == d.paper_id)
            ktext = knowledge_text(knowledge_from_paper(paper))
            agent = [k_precision(u.text, ktext) for u in d.utterances if u.role is Role.AGENT]
            expected_kprec.append(sum(agent) / len(agent))
            spec = [specificity(u.text) for u in d.utterances]
            expected_spec.append(sum(spec) / len(spec))
        assert report.mean_agent_k_prec == pytest.approx(
            sum(expected_kprec) / len(expected_kprec), abs=1e-12
        )
        assert report.mean_specificity == pytest.approx(
            sum(expected_spec) / len(expected_spec), abs=1e-12
        )
        assert report.skipped == 1  # p3 has no dialogue

    def test_corrupted_annotations_are_flagged(self, corpus_file, paper_records, tmp_path):
        d = self._grounded_dialogue("p1", paper_records)
        corrupted = make_dialogue(
            [u.text for u in d.utterances],
            paper_id="p1",
            rewards=[RewardVector(k_prec=0.123) for _ in d.utterances],  # wrong on purpose
        )
        dataset = tmp_path / "ds.jsonl"
        _write_dataset(dataset, [corrupted])
        report = evaluate_dataset(dataset, corpus_file)
        assert report.annotation_discrepancies == 4
        # Stored annotations never influence the recomputed means.
        assert report.mean_agent_k_prec == pytest.approx(1.0, abs=1e-12)

    def test_empty_dataset_is_error(self, corpus_file, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(DatagenError):
            evaluate_dataset(empty, corpus_file)

    def test_unresolved_paper_id(self, corpus_file, tmp_path):
        dataset = tmp_path / "ds.jsonl"
        _write_dataset(dataset, [make_dialogue(["a?", "b."], paper_id="ghost")])
        with pytest.raises(DatagenError, match="ghost"):
            evaluate_dataset(dataset, corpus_file)


def _write_examples(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")


class TestEvalResponses:
    def test_identity_predictions_score_bleu_100(self, corpus_file, tmp_path):
        gold = [
            {"id": "e1", "paper_id": "p1", "text": "the benchmark includes strong baselines"},
            {"id": "e2", "paper_id": "p2", "text": "the MAP metric improves over baselines"},
        ]
        preds = [{"id": r["id"], "text": r["text"]} for r in gold]
        _write_examples(tmp_path / "gold.jsonl", gold)
        _write_examples(tmp_path / "pred.jsonl", preds)
        report = eval_responses(tmp_path / "pred.jsonl", tmp_path / "gold.jsonl", corpus_file)
        assert report.bleu == pytest.approx(100.0, abs=1e-9)

    def test_knowledge_copies_maximize_k_prec(self, corpus_file, paper_records, tmp_path):
        gold = [{"id": "e1", "paper_id": "p1", "text": "a reference answer that differs"}]
        preds = [{"id": "e1", "text": paper_records[0].reviews[0]}]
        _write_examples(tmp_path / "gold.jsonl", gold)
        _write_examples(tmp_path / "pred.jsonl", preds)
        report = eval_responses(tmp_path / "pred.jsonl", tmp_path / "gold.jsonl", corpus_file)
        assert report.mean_agent_k_prec == pytest.approx(1.0, abs=1e-12)
        assert report.bleu < 100.0

    def test_id_mismatch_names_ids(self, corpus_file, tmp_path):
        _write_examples(tmp_path / "gold.jsonl", [{"id": "e1", "paper_id": "p1", "text": "t"}])
        _write_examples(tmp_path / "pred.jsonl", [{"id": "e9", "text": "t"}])
        with pytest.raises(DatagenError, match="e9"):
            eval_responses(tmp_path / "pred.jsonl", tmp_path / "gold.jsonl", corpus_file)


class TestSampling:
    def test_deterministic_sample(self, paper_records):
        dialogues = [make_dialogue([f"q {i}?", f"a {i}."], paper_id=f"p{i}") for i in range(10)]
        first = sample_dialogues(dialogues, 4, seed=3)
        second = sample_dialogues(dialogues, 4, seed=3)
        assert first == second
        assert len(first) == 4

    def test_oversample_returns_all(self):
        dialogues = [make_dialogue(["q?", "a."])]
        assert sample_dialogues(dialogues, 10, seed=0) == dialogues
