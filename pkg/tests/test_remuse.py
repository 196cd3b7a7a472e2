from __future__ import annotations

import json

import httpx
import pytest

from reviewforge.dialogue import (
    Dialogue,
    RewardVector,
    Role,
    Utterance,
    knowledge_text,
    render_transcript,
)
from reviewforge.gateway import GroundedMockLlm, ScriptedLlm
from reviewforge.metrics import k_precision
from reviewforge.remuse import (
    FeedbackMode,
    GenerationUnparseable,
    RemuseConfig,
    RemuseError,
    evaluate_and_annotate,
    generate_feedback,
    generate_initial,
    refine,
    refine_response,
    run_remuse,
)
from reviewforge.scorer import ScorerEndpoint

from .conftest import make_dialogue

VALID_TRANSCRIPT = (
    "Meta-Reviewer: What does the first review say?\n"
    "Dialogue Agent: The paper proposes a benchmark for code intelligence systems with strong baselines.\n"
    "Meta-Reviewer: Any concerns?\n"
    "Dialogue Agent: The experimental evaluation is on a single dataset only and the protocol is unclear."
)


def _scorer_client(value: float = 0.5) -> httpx.Client:
    def handler(request: httpx.Request) -> httpx.Response:
        n = len(json.loads(request.content)["items"])
        return httpx.Response(200, json={"scores": [value] * n})

    return httpx.Client(transport=httpx.MockTransport(handler))


class TestGenerateInitial:
    def test_valid_mock_transcript(self, knowledge):
        llm = ScriptedLlm(outputs=[VALID_TRANSCRIPT])
        d = generate_initial(knowledge, "extensive", llm, paper_id="p1")
        assert len(d.utterances) == 4
        assert d.provenance == "initial"
        assert d.paper_id == "p1"
        assert "Generate a multi-turn dialogue" in llm.calls[0]
        assert knowledge.documents[0][1] in llm.calls[0]

    def test_persistent_garbage_exhausts_budget(self, knowledge):
        llm = ScriptedLlm(outputs=["garbage"] * 3)
        with pytest.raises(GenerationUnparseable) as err:
            generate_initial(knowledge, "extensive", llm, parse_retry_budget=2)
        assert err.value.raw == "garbage"
        assert len(llm.calls) == 3

    def test_retry_recovers(self, knowledge):
        llm = ScriptedLlm(outputs=["garbage", VALID_TRANSCRIPT])
        d = generate_initial(knowledge, "extensive", llm, parse_retry_budget=2)
        assert len(d.utterances) == 4
        assert len(llm.calls) == 2

    def test_doubled_speaker_is_merged(self, knowledge):
        doubled = (
            "Meta-Reviewer: Question?\n"
            "Dialogue Agent: Part one.\n"
            "Dialogue Agent: Part two.\n"
            "Meta-Reviewer: Thanks.\n"
            "Dialogue Agent: Welcome."
        )
        d = generate_initial(knowledge, "extensive", ScriptedLlm(outputs=[doubled]))
        assert len(d.utterances) == 4
        assert d.utterances[1].text == "Part one.\nPart two."

    def test_agent_first_transcript_retries(self, knowledge):
        agent_first = "Dialogue Agent: Hi.\nMeta-Reviewer: Hello."
        llm = ScriptedLlm(outputs=[agent_first, VALID_TRANSCRIPT])
        d = generate_initial(knowledge, "extensive", llm)
        assert d.utterances[0].role is Role.SEEKER
        assert len(llm.calls) == 2


class TestEvaluateAndAnnotate:
    def test_verbatim_agent_turns_score_one(self, knowledge):
        d = make_dialogue(["Tell me about it?", knowledge.documents[0][1]])
        scored, annotated = evaluate_and_annotate(d, knowledge, frozenset({"k_prec"}))
        assert scored.utterances[1].rewards.k_prec == pytest.approx(1.0)
        assert "Kprec: 1.00" in annotated

    def test_subset_fidelity_specificity_only(self, knowledge):
        d = make_dialogue(["It is fine?", "The number is 92.4 exactly."])
        _, annotated = evaluate_and_annotate(d, knowledge, frozenset({"specificity"}))
        assert "Specificity:" in annotated
        assert "Kprec" not in annotated
        assert "F1" not in annotated
        assert "NLI" not in annotated

    def test_q2_requires_scorer(self, knowledge):
        d = make_dialogue(["a?", "b."])
        with pytest.raises(ValueError):
            evaluate_and_annotate(d, knowledge, frozenset({"q2"}))

    def test_q2_via_scorer(self, knowledge, monkeypatch):
        import reviewforge.scorer as scorer_mod

        client = _scorer_client(0.5)
        monkeypatch.setattr(scorer_mod.httpx, "Client", lambda *a, **kw: client)
        endpoint = ScorerEndpoint(base_url="http://s", metric_names=frozenset({"q2_f1", "q2_nli"}))
        d = make_dialogue(["a question?", "an answer."])
        scored, annotated = evaluate_and_annotate(d, knowledge, frozenset({"q2"}), endpoint)
        assert scored.utterances[0].rewards == RewardVector(q2_f1=0.5, q2_nli=0.5)
        assert "F1: 0.50, NLI: 0.50" in annotated

    def test_inputs_not_mutated(self, knowledge):
        d = make_dialogue(["q?", "a."])
        evaluate_and_annotate(d, knowledge, frozenset({"k_prec"}))
        assert all(u.rewards is None for u in d.utterances)


class TestGenerateFeedback:
    def test_rewarded_prompt_mentions_per_utterance_scores(self, knowledge):
        llm = ScriptedLlm(outputs=["Feedback: improve grounding"])
        annotated = "Meta-Reviewer: Hi, Kprec: 0.00\nDialogue Agent: Yes, Kprec: 0.50"
        fb = generate_feedback(annotated, knowledge, FeedbackMode.REWARDED, llm)
        assert "follow each utterance" in llm.calls[0]
        assert fb.text == "improve grounding"
        assert fb.rewards_before == (RewardVector(k_prec=0.0), RewardVector(k_prec=0.5))

    def test_marker_stripping(self, knowledge):
        llm = ScriptedLlm(outputs=["Feedback: add citations"])
        fb = generate_feedback(
            "Meta-Reviewer: Hi\nDialogue Agent: Hello", knowledge, FeedbackMode.GENERIC, llm
        )
        assert fb.text == "add citations"

    def test_empty_completion_is_error(self, knowledge):
        llm = ScriptedLlm(outputs=[""])
        with pytest.raises(RemuseError):
            generate_feedback(
                "Meta-Reviewer: Hi\nDialogue Agent: Hello", knowledge, FeedbackMode.GENERIC, llm
            )

    def test_rewarded_mode_requires_annotations(self, knowledge):
        llm = ScriptedLlm(outputs=["Feedback: x"])
        with pytest.raises(ValueError):
            generate_feedback(
                "Meta-Reviewer: Hi\nDialogue Agent: Hello", knowledge, FeedbackMode.REWARDED, llm
            )


class TestRefine:
    def test_echo_refiner_preserves_texts(self, knowledge):
        d = make_dialogue(["What did they say?", "They liked it."])
        llm = ScriptedLlm(fn=lambda prompt: render_transcript(d))
        from reviewforge.remuse import FeedbackRecord

        refined = refine(knowledge, FeedbackRecord(text="nothing to change"), d, llm)
        assert [u.text for u in refined.utterances] == [u.text for u in d.utterances]
        assert refined.provenance == "refined"

    def test_copy_knowledge_refiner_scores_one(self, knowledge):
        d = make_dialogue(["What did they say?", "Something ungrounded entirely."])
        review = knowledge.documents[0][1]
        llm = ScriptedLlm(
            outputs=[f"Meta-Reviewer: What did they say?\nDialogue Agent: {review}"]
        )
        from reviewforge.remuse import FeedbackRecord

        refined = refine(knowledge, FeedbackRecord(text="ground it"), d, llm)
        assert k_precision(refined.utterances[1].text, knowledge_text(knowledge)) == pytest.approx(1.0)

    def test_annotated_output_is_stripped(self, knowledge):
        from reviewforge.remuse import FeedbackRecord

        llm = ScriptedLlm(
            outputs=["Meta-Reviewer: Hi, Kprec: 0.10\nDialogue Agent: Hello, Kprec: 0.90"]
        )
        refined = refine(knowledge, FeedbackRecord(text="f"), make_dialogue(["a?", "b."]), llm)
        assert refined.utterances[0].text == "Hi"
        assert refined.utterances[0].rewards == RewardVector(k_prec=0.1)

    def test_prompt_carries_unannotated_transcript(self, knowledge):
        from reviewforge.remuse import FeedbackRecord

        d = make_dialogue(
            ["q?", "a."],
            rewards=[RewardVector(k_prec=0.1), RewardVector(k_prec=0.9)],
        )
        llm = ScriptedLlm(outputs=[VALID_TRANSCRIPT])
        refine(knowledge, FeedbackRecord(text="f"), d, llm)
        assert "Kprec" not in llm.calls[0].split("Dialogue:")[1]


class TestRunRemuse:
    def test_zero_iterations_identity(self, knowledge):
        rc = RemuseConfig(reward_subset=frozenset({"k_prec"}), iterations=0)
        trace = run_remuse(knowledge, rc, GroundedMockLlm(), paper_id="p1")
        assert trace.rounds == ()
        assert trace.final == trace.initial

    def test_one_round_trace(self, knowledge):
        rc = RemuseConfig(reward_subset=frozenset({"k_prec"}), iterations=1)
        llm = GroundedMockLlm()
        trace = run_remuse(knowledge, rc, llm)
        assert len(trace.rounds) == 1
        assert trace.final == trace.rounds[0].refined
        # Step order: initial generation, feedback, refinement.
        assert len(llm.calls) == 3

    def test_copy_knowledge_refiner_improves_k_prec(self, knowledge):
        rc = RemuseConfig(reward_subset=frozenset({"k_prec"}), iterations=1)
        trace = run_remuse(knowledge, rc, GroundedMockLlm())
        ktext = knowledge_text(knowledge)

        def mean_agent(d: Dialogue) -> float:
            values = [
                k_precision(u.text, ktext) for u in d.utterances if u.role is Role.AGENT
            ]
            return sum(values) / len(values)

        assert mean_agent(trace.initial) < 1.0
        assert mean_agent(trace.final) == pytest.approx(1.0, abs=1e-12)

    def test_two_iterations_last_wins(self, knowledge):
        round_outputs = [
            VALID_TRANSCRIPT,  # initial
            "Feedback: first round",
            "Meta-Reviewer: Round one?\nDialogue Agent: First refinement.",
            "Feedback: second round",
            "Meta-Reviewer: Round two?\nDialogue Agent: Second refinement.",
        ]
        rc = RemuseConfig(reward_subset=frozenset({"k_prec"}), iterations=2)
        trace = run_remuse(knowledge, rc, ScriptedLlm(outputs=round_outputs))
        assert len(trace.rounds) == 2
        assert trace.final.utterances[1].text == "Second refinement."

    def test_step_error_attaches_partial_trace(self, knowledge):
        outputs = [
            VALID_TRANSCRIPT,
            "Feedback: ok",
            "Meta-Reviewer: r1?\nDialogue Agent: Refined once.",
            "",  # second-round feedback is empty -> error
        ]
        rc = RemuseConfig(reward_subset=frozenset({"k_prec"}), iterations=2)
        with pytest.raises(RemuseError) as err:
            run_remuse(knowledge, rc, ScriptedLlm(outputs=outputs))
        assert err.value.trace is not None
        assert len(err.value.trace.rounds) == 1

    def test_rewarded_feedback_gets_annotated_transcript(self, knowledge):
        rc = RemuseConfig(
            reward_subset=frozenset({"k_prec"}),
            feedback_mode=FeedbackMode.REWARDED,
            iterations=1,
        )
        llm = GroundedMockLlm()
        run_remuse(knowledge, rc, llm)
        feedback_prompt = llm.calls[1]
        assert "Kprec:" in feedback_prompt

    def test_generic_feedback_gets_plain_transcript(self, knowledge):
        rc = RemuseConfig(
            reward_subset=frozenset({"k_prec"}),
            feedback_mode=FeedbackMode.GENERIC,
            iterations=1,
        )
        llm = GroundedMockLlm()
        run_remuse(knowledge, rc, llm)
        assert "Kprec:" not in llm.calls[1]


class TestRefineResponse:
    def _history(self):
        return Dialogue("p1", (Utterance(Role.SEEKER, "Summarize the reviews for me?"),), "live")

    def test_zero_iterations_returns_unchanged(self, knowledge):
        rc = RemuseConfig(reward_subset=frozenset({"k_prec"}), iterations=0)
        out = refine_response(knowledge, self._history(), "Original answer.", rc, GroundedMockLlm())
        assert out == "Original answer."

    def test_knowledge_copy_scores_one(self, knowledge):
        rc = RemuseConfig(reward_subset=frozenset({"k_prec"}), iterations=1)
        out = refine_response(knowledge, self._history(), "Something ungrounded.", rc, GroundedMockLlm())
        assert k_precision(out, knowledge_text(knowledge)) == pytest.approx(1.0)

    def test_history_must_end_on_seeker_turn(self, knowledge):
        rc = RemuseConfig(reward_subset=frozenset({"k_prec"}))
        history = make_dialogue(["q?", "a."])
        with pytest.raises(ValueError):
            refine_response(knowledge, history, "resp", rc, GroundedMockLlm())

    def test_empty_response_rejected(self, knowledge):
        rc = RemuseConfig(reward_subset=frozenset({"k_prec"}))
        with pytest.raises(ValueError):
            refine_response(knowledge, self._history(), "  ", rc, GroundedMockLlm())


class TestBestOfTrace:
    def test_picks_highest_agent_k_prec(self, knowledge):
        from reviewforge.remuse import FeedbackRecord, RefinementRound, RefinementTrace, best_of_trace

        review = knowledge.documents[0][1]
        grounded = make_dialogue(["What did they say?", review])
        drifted = make_dialogue(["What did they say?", "Completely ungrounded drivel words."],
                                provenance="refined")
        trace = RefinementTrace(
            initial=grounded,
            rounds=(RefinementRound(FeedbackRecord(text="f"), drifted),),
        )
        assert best_of_trace(trace, knowledge) == grounded
        assert trace.final == drifted  # the default pipeline still takes the last refinement

    def test_ties_keep_the_later_dialogue(self, knowledge):
        from reviewforge.remuse import FeedbackRecord, RefinementRound, RefinementTrace, best_of_trace

        review = knowledge.documents[0][1]
        first = make_dialogue(["Q one?", review])
        second = make_dialogue(["Q two differs?", review], provenance="refined")
        trace = RefinementTrace(
            initial=first, rounds=(RefinementRound(FeedbackRecord(text="f"), second),)
        )
        assert best_of_trace(trace, knowledge) == second


class TestConfigValidation:
    def test_empty_reward_subset(self):
        with pytest.raises(ValueError):
            RemuseConfig(reward_subset=frozenset())

    def test_unknown_reward(self):
        with pytest.raises(ValueError):
            RemuseConfig(reward_subset=frozenset({"bleu"}))

    def test_negative_iterations(self):
        with pytest.raises(ValueError):
            RemuseConfig(iterations=-1)

    def test_default_is_single_iteration(self):
        assert RemuseConfig().iterations == 1
