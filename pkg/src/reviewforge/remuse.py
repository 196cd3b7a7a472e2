"""Reward-based multi-aspect self-editing over whole dialogues and single
responses.

One run is four steps: generate an initial dialogue zero-shot, score every
utterance with the configured reward metrics, verbalize the scores into
natural-language feedback, and regenerate the dialogue conditioned on that
feedback. Rounds chain (round i+1 refines round i's output) and the final
dialogue is the last refined output unconditionally. Each step is a pure
function of its inputs; nothing is mutated, so distinct knowledge sources can
be processed in parallel.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum

from .dialogue import (
    Dialogue,
    KnowledgeSource,
    RewardVector,
    Role,
    TranscriptError,
    Utterance,
    clean_response_text,
    documents_text,
    format_reward_suffix,
    knowledge_text,
    parse_transcript,
    render_transcript,
)
from .gateway import GatewayError
from .metrics import MetricError, k_precision, specificity
from .prompts import (
    FEEDBACK_KINDS,
    INITIAL_VARIANTS,
    PromptError,
    PromptKind,
    Scenario,
    lexicon_for,
    render_prompt,
    template_id,
)
from .scorer import ScoreItem, ScorerEndpoint, ScorerError, request_scores

REWARD_GROUPS = frozenset({"k_prec", "q2", "specificity"})


class FeedbackMode(str, Enum):
    GENERIC = "generic"
    ACTIONABLE = "actionable"
    REWARDED = "rewarded"


class RemuseError(Exception):
    """A step failed; ``trace`` holds whatever completed before the failure."""

    def __init__(self, message: str, trace: "RefinementTrace | None" = None):
        super().__init__(message)
        self.trace = trace


class GenerationUnparseable(RemuseError):
    """Parse retries exhausted; ``raw`` is the last completion text."""

    def __init__(self, message: str, raw: str, trace: "RefinementTrace | None" = None):
        super().__init__(message, trace)
        self.raw = raw


@dataclass(frozen=True)
class RemuseConfig:
    reward_subset: frozenset[str] = REWARD_GROUPS
    feedback_mode: FeedbackMode = FeedbackMode.REWARDED
    iterations: int = 1
    prompt_variant: str = "extensive"
    parse_retry_budget: int = 2
    scenario: Scenario = Scenario.META_REVIEW

    def __post_init__(self) -> None:
        if not self.reward_subset:
            raise ValueError("reward_subset must be non-empty")
        unknown = self.reward_subset - REWARD_GROUPS
        if unknown:
            raise ValueError(f"unknown rewards: {sorted(unknown)}")
        if self.prompt_variant not in INITIAL_VARIANTS:
            raise ValueError(f"unknown prompt variant {self.prompt_variant!r}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.parse_retry_budget < 0:
            raise ValueError("parse_retry_budget must be >= 0")


@dataclass(frozen=True)
class FeedbackRecord:
    text: str
    rewards_before: tuple[RewardVector, ...] = ()

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("feedback text must be non-empty")


@dataclass(frozen=True)
class RefinementRound:
    feedback: FeedbackRecord
    refined: Dialogue


@dataclass(frozen=True)
class RefinementTrace:
    initial: Dialogue
    rounds: tuple[RefinementRound, ...] = ()

    @property
    def final(self) -> Dialogue:
        return self.rounds[-1].refined if self.rounds else self.initial


_FEEDBACK_MARKER = re.compile(r"^\s*feedback\s*:\s*", re.IGNORECASE)


def _strip_feedback_marker(text: str) -> str:
    return _FEEDBACK_MARKER.sub("", text.strip(), count=1).strip()


def _knowledge_vars(k: KnowledgeSource) -> dict[str, str]:
    return {"title": k.title, "paper_type": k.paper_type, "knowledge": documents_text(k)}


def _parse_with_retry(
    llm,
    prompt: str,
    *,
    scenario: Scenario,
    parse_retry_budget: int,
    paper_id: str,
    provenance: str,
) -> Dialogue:
    """Complete and parse; a fresh completion is requested on each parse
    failure (no repair heuristics, so the output distribution is untouched)."""
    lexicon = lexicon_for(scenario)
    last_raw = ""
    for _ in range(parse_retry_budget + 1):
        last_raw = llm.complete(prompt)
        try:
            d = parse_transcript(last_raw, lexicon, paper_id=paper_id, provenance=provenance)
        except TranscriptError:
            continue
        if d.utterances[0].role is not Role.SEEKER:
            continue  # scenario expects the information seeker to open
        return d
    raise GenerationUnparseable(
        f"no parseable transcript after {parse_retry_budget + 1} attempts", raw=last_raw
    )


def generate_initial(
    k: KnowledgeSource,
    variant: str,
    llm,
    *,
    scenario: Scenario = Scenario.META_REVIEW,
    parse_retry_budget: int = 2,
    paper_id: str = "",
) -> Dialogue:
    """Step I: zero-shot initial dialogue from the knowledge source."""
    prompt = render_prompt(template_id(scenario, INITIAL_VARIANTS[variant]), _knowledge_vars(k))
    return _parse_with_retry(
        llm,
        prompt,
        scenario=scenario,
        parse_retry_budget=parse_retry_budget,
        paper_id=paper_id,
        provenance="initial",
    )


def _scorer_fields(subset: frozenset[str], scorer: ScorerEndpoint | None) -> frozenset[str]:
    fields = set()
    if "q2" in subset:
        fields.update({"q2_f1", "q2_nli"})
    if "specificity" in subset and scorer is not None and "specificity" in scorer.metric_names:
        fields.add("specificity")
    return frozenset(fields)


def evaluate_and_annotate(
    d: Dialogue,
    k: KnowledgeSource,
    subset: frozenset[str],
    scorer: ScorerEndpoint | None = None,
    *,
    scenario: Scenario = Scenario.META_REVIEW,
) -> tuple[Dialogue, str]:
    """Step II: score every utterance for every metric in ``subset``.

    Returns a new dialogue carrying the rewards plus its reward-annotated
    transcript. Knowledge precision and the specificity proxy are computed
    natively; Q2 fields (and specificity, when the scorer advertises it)
    come from the external scorer.
    """
    unknown = subset - REWARD_GROUPS
    if unknown:
        raise ValueError(f"unknown rewards: {sorted(unknown)}")
    if "q2" in subset and scorer is None:
        raise ValueError("q2 rewards require a configured scorer endpoint")

    ktext = knowledge_text(k)
    remote_fields = _scorer_fields(subset, scorer)
    remote: list[RewardVector] | None = None
    if remote_fields:
        assert scorer is not None
        endpoint = replace(scorer, metric_names=remote_fields)
        items = [ScoreItem(utterance=u.text, knowledge=ktext) for u in d.utterances]
        remote = request_scores(endpoint, items)

    annotated: list[Utterance] = []
    for i, u in enumerate(d.utterances):
        values: dict[str, float] = {}
        if "k_prec" in subset:
            values["k_prec"] = k_precision(u.text, ktext)
        if "specificity" in subset and "specificity" not in remote_fields:
            values["specificity"] = specificity(u.text)
        if remote is not None:
            values.update(remote[i].to_dict())
        annotated.append(replace(u, rewards=RewardVector(**values)))

    scored = replace(d, utterances=tuple(annotated))
    return scored, render_transcript(scored, with_rewards=True, lexicon=lexicon_for(scenario))


def generate_feedback(
    annotated: str,
    k: KnowledgeSource,
    mode: FeedbackMode,
    llm,
    *,
    scenario: Scenario = Scenario.META_REVIEW,
    rewards_before: tuple[RewardVector, ...] | None = None,
) -> FeedbackRecord:
    """Step III: verbalize improvement feedback for the (annotated)
    transcript. A leading "Feedback:" marker is stripped from the completion.
    """
    if not annotated.strip():
        raise ValueError("annotated transcript must be non-empty")
    if mode is FeedbackMode.REWARDED and not re.search(
        r"(F1|NLI|Kprec|Specificity)\s*:\s*\d", annotated, re.IGNORECASE
    ):
        raise ValueError("rewarded feedback requires reward annotations in the transcript")

    prompt = render_prompt(
        template_id(scenario, FEEDBACK_KINDS[mode.value]),
        {"knowledge": documents_text(k), "dialogue": annotated},
    )
    completion = llm.complete(prompt)
    text = _strip_feedback_marker(completion)
    if not text:
        raise RemuseError("feedback completion was empty")

    if rewards_before is None:
        try:
            parsed = parse_transcript(annotated, lexicon_for(scenario))
            rewards_before = tuple(u.rewards or RewardVector() for u in parsed.utterances)
        except TranscriptError:
            rewards_before = ()
    return FeedbackRecord(text=text, rewards_before=rewards_before)


def refine(
    k: KnowledgeSource,
    fb: FeedbackRecord,
    d: Dialogue,
    llm,
    *,
    scenario: Scenario = Scenario.META_REVIEW,
    parse_retry_budget: int = 2,
) -> Dialogue:
    """Step IV: regenerate the dialogue conditioned on the feedback.

    The prompt carries the un-annotated transcript; reward annotations appear
    only in the feedback step.
    """
    prompt = render_prompt(
        template_id(scenario, PromptKind.REFINE),
        {
            "knowledge": documents_text(k),
            "feedback": fb.text,
            "dialogue": render_transcript(d, with_rewards=False, lexicon=lexicon_for(scenario)),
        },
    )
    return _parse_with_retry(
        llm,
        prompt,
        scenario=scenario,
        parse_retry_budget=parse_retry_budget,
        paper_id=d.paper_id,
        provenance="refined",
    )


def run_remuse(
    k: KnowledgeSource,
    rc: RemuseConfig,
    llm,
    scorer: ScorerEndpoint | None = None,
    *,
    paper_id: str = "",
) -> RefinementTrace:
    """Run Step I once, then ``rc.iterations`` rounds of Steps II-IV.

    Round i+1 refines round i's output; the final dialogue is the last
    refined output unconditionally. Any step failure raises
    :class:`RemuseError` with the partial trace attached.
    """
    initial = generate_initial(
        k,
        rc.prompt_variant,
        llm,
        scenario=rc.scenario,
        parse_retry_budget=rc.parse_retry_budget,
        paper_id=paper_id,
    )
    rounds: list[RefinementRound] = []
    current = initial
    for _ in range(rc.iterations):
        partial = RefinementTrace(initial=initial, rounds=tuple(rounds))
        try:
            scored, annotated_text = evaluate_and_annotate(
                current, k, rc.reward_subset, scorer, scenario=rc.scenario
            )
            if rc.feedback_mode is FeedbackMode.REWARDED:
                feedback_input = annotated_text
            else:
                feedback_input = render_transcript(
                    scored, with_rewards=False, lexicon=lexicon_for(rc.scenario)
                )
            fb = generate_feedback(
                feedback_input,
                k,
                rc.feedback_mode,
                llm,
                scenario=rc.scenario,
                rewards_before=tuple(u.rewards or RewardVector() for u in scored.utterances),
            )
            refined = refine(
                k, fb, scored, llm, scenario=rc.scenario, parse_retry_budget=rc.parse_retry_budget
            )
        except RemuseError as exc:
            exc.trace = partial
            raise
        except (ScorerError, GatewayError, TranscriptError, MetricError, PromptError, ValueError) as exc:
            raise RemuseError(str(exc), trace=partial) from exc
        rounds.append(RefinementRound(feedback=fb, refined=refined))
        current = refined
    return RefinementTrace(initial=initial, rounds=tuple(rounds))


def best_of_trace(trace: RefinementTrace, k: KnowledgeSource) -> Dialogue:
    """Opt-in selector: the trace dialogue with the highest mean agent
    knowledge precision (ties keep the later dialogue). The default pipeline
    accepts the last refined output unconditionally; this exists only behind
    an explicit flag."""
    ktext = knowledge_text(k)

    def mean_agent_kprec(d: Dialogue) -> float:
        values = [k_precision(u.text, ktext) for u in d.utterances if u.role is Role.AGENT]
        return sum(values) / len(values) if values else 0.0

    candidates = [trace.initial] + [r.refined for r in trace.rounds]
    best = candidates[0]
    best_score = mean_agent_kprec(best)
    for candidate in candidates[1:]:
        score = mean_agent_kprec(candidate)
        if score >= best_score:
            best, best_score = candidate, score
    return best


def score_response(
    response: str,
    k: KnowledgeSource,
    subset: frozenset[str],
    scorer: ScorerEndpoint | None = None,
) -> RewardVector:
    """Reward vector for a single candidate response."""
    if "q2" in subset and scorer is None:
        raise ValueError("q2 rewards require a configured scorer endpoint")
    ktext = knowledge_text(k)
    values: dict[str, float] = {}
    if "k_prec" in subset:
        values["k_prec"] = k_precision(response, ktext)
    remote_fields = _scorer_fields(subset, scorer)
    if "specificity" in subset and "specificity" not in remote_fields:
        values["specificity"] = specificity(response)
    if remote_fields:
        assert scorer is not None
        endpoint = replace(scorer, metric_names=remote_fields)
        remote = request_scores(endpoint, [ScoreItem(utterance=response, knowledge=ktext)])
        values.update(remote[0].to_dict())
    return RewardVector(**values)


def refine_response(
    k: KnowledgeSource,
    history: Dialogue,
    response: str,
    rc: RemuseConfig,
    llm,
    scorer: ScorerEndpoint | None = None,
) -> str:
    """Response-level variant of the loop: score, get feedback, and rewrite a
    single agent response, once per configured iteration."""
    if not history.utterances or history.utterances[-1].role is not Role.SEEKER:
        raise ValueError("history must end on a seeker turn")
    if not response.strip():
        raise ValueError("response must be non-empty")

    lexicon = lexicon_for(rc.scenario)
    agent_label = lexicon.label_for(Role.AGENT)
    history_text = render_transcript(history, with_rewards=False, lexicon=lexicon)
    current = response.strip()
    for _ in range(rc.iterations):
        rewards = score_response(current, k, rc.reward_subset, scorer)
        annotated = f"{agent_label}: {current}{format_reward_suffix(rewards)}"
        fb_prompt = render_prompt(
            template_id(rc.scenario, PromptKind.RESPONSE_FEEDBACK),
            {"knowledge": documents_text(k), "history": history_text, "response": annotated},
        )
        fb_text = _strip_feedback_marker(llm.complete(fb_prompt))
        if not fb_text:
            raise RemuseError("response feedback completion was empty")

        refine_prompt = render_prompt(
            template_id(rc.scenario, PromptKind.RESPONSE_REFINE),
            {
                "knowledge": documents_text(k),
                "feedback": fb_text,
                "history": history_text,
                "response": f"{agent_label}: {current}",
            },
        )
        refined = ""
        last_raw = ""
        for _attempt in range(rc.parse_retry_budget + 1):
            last_raw = llm.complete(refine_prompt)
            refined, _ = clean_response_text(last_raw, lexicon)
            if refined:
                break
        if not refined:
            raise GenerationUnparseable("refined response was empty", raw=last_raw)
        current = refined
    return current
