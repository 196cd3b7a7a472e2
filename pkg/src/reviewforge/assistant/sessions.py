"""Live assistant sessions: grounded reply generation, persistence, timing,
and decision capture.

Each session is an alternating seeker/agent transcript over one paper's
reviews. Message handling within a session is serialized (concurrent posts
queue by default, or are rejected as busy); distinct sessions are fully
independent. A seeker turn is only persisted together with the agent reply,
so a gateway failure can never leave a transcript dangling on a seeker turn.
"""

from __future__ import annotations

import threading
import time
import uuid
from collections import defaultdict
from dataclasses import dataclass, field

from ..corpus import PaperRecord
from ..datagen import knowledge_from_paper
from ..dialogue import (
    Dialogue,
    RewardVector,
    Role,
    Utterance,
    clean_response_text,
    dialogue_to_record,
    documents_text,
    knowledge_text,
    render_transcript,
)
from ..gateway import GatewayError
from ..metrics import MetricError, k_precision, specificity
from ..prompts import PromptKind, Scenario, lexicon_for, render_prompt, template_id
from ..remuse import RemuseConfig, RemuseError, refine_response
from ..scorer import ScorerEndpoint


class ApiError(Exception):
    """Service-level error carrying an HTTP status and a stable code."""

    def __init__(self, status_code: int, code: str, message: str):
        super().__init__(message)
        self.status_code = status_code
        self.code = code
        self.message = message


@dataclass(frozen=True)
class AssistantConfig:
    show_rewards: bool = False
    refine_enabled: bool = False
    refine_iterations: int = 1
    max_prompt_chars: int = 24000
    busy_policy: str = "queue"  # queue | reject
    scenario: Scenario = Scenario.META_REVIEW

    def __post_init__(self) -> None:
        if self.busy_policy not in ("queue", "reject"):
            raise ValueError("busy_policy must be 'queue' or 'reject'")
        if self.refine_iterations < 0:
            raise ValueError("refine_iterations must be >= 0")


@dataclass
class SessionState:
    id: str
    paper_id: str
    created_at: float
    utterances: list[Utterance] = field(default_factory=list)
    message_timestamps: list[float] = field(default_factory=list)
    decision: str | None = None
    meta_review: str | None = None
    closed_at: float | None = None

    @property
    def open(self) -> bool:
        return self.closed_at is None

    def to_record(self) -> dict:
        transcript = Dialogue(
            paper_id=self.paper_id, utterances=tuple(self.utterances), provenance="live"
        )
        return {
            "id": self.id,
            "paper_id": self.paper_id,
            "created_at": self.created_at,
            "transcript": dialogue_to_record(transcript),
            "decision": self.decision,
            "meta_review": self.meta_review,
            "closed_at": self.closed_at,
            "message_timestamps": list(self.message_timestamps),
        }


@dataclass(frozen=True)
class StudyLogEntry:
    session_id: str
    paper_id: str
    duration_seconds: float
    turn_count: int
    decision: str
    gold_decision: str | None

    def to_record(self) -> dict:
        return {
            "session_id": self.session_id,
            "paper_id": self.paper_id,
            "duration_seconds": self.duration_seconds,
            "turn_count": self.turn_count,
            "decision": self.decision,
            "gold_decision": self.gold_decision,
        }


class SessionManager:
    def __init__(
        self,
        corpus: list[PaperRecord],
        llm,
        store,
        *,
        clock=time.time,
        config: AssistantConfig = AssistantConfig(),
        scorer: ScorerEndpoint | None = None,
    ):
        self.papers = {r.id: r for r in corpus}
        self.llm = llm
        self.store = store
        self.clock = clock
        self.config = config
        self.scorer = scorer
        self.sessions: dict[str, SessionState] = {}
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._replay()

    def _replay(self) -> None:
        for event in self.store.replay():
            kind = event.get("type")
            if kind == "session_created":
                self.sessions[event["session_id"]] = SessionState(
                    id=event["session_id"],
                    paper_id=event["paper_id"],
                    created_at=event["created_at"],
                )
            elif kind == "message":
                session = self.sessions.get(event["session_id"])
                if session is not None:
                    session.utterances.append(Utterance(Role(event["role"]), event["text"]))
                    session.message_timestamps.append(event["timestamp"])
            elif kind == "decision":
                session = self.sessions.get(event["session_id"])
                if session is not None:
                    session.decision = event["decision"]
                    session.meta_review = event["meta_review"]
                    session.closed_at = event["closed_at"]

    def _get(self, session_id: str) -> SessionState:
        session = self.sessions.get(session_id)
        if session is None:
            raise ApiError(404, "session_not_found", f"no session {session_id!r}")
        return session

    def create_session(self, paper_id: str) -> SessionState:
        if paper_id not in self.papers:
            raise ApiError(404, "paper_not_found", f"no paper {paper_id!r} in the loaded corpus")
        session = SessionState(id=uuid.uuid4().hex, paper_id=paper_id, created_at=self.clock())
        self.store.append(
            {
                "type": "session_created",
                "session_id": session.id,
                "paper_id": session.paper_id,
                "created_at": session.created_at,
            }
        )
        self.sessions[session.id] = session
        return session

    def _build_prompt(self, session: SessionState, pending: Utterance) -> str:
        paper = self.papers[session.paper_id]
        k = knowledge_from_paper(paper)
        lexicon = lexicon_for(self.config.scenario)
        history = list(session.utterances) + [pending]
        tid = template_id(self.config.scenario, PromptKind.RESPONSE_GENERATE)
        while True:
            prompt = render_prompt(
                tid,
                {
                    "title": k.title,
                    "paper_type": k.paper_type,
                    "knowledge": documents_text(k),
                    "history": render_transcript(
                        Dialogue(session.paper_id, tuple(history), "live"), lexicon=lexicon
                    ),
                },
            )
            # Knowledge is never dropped; oldest history turns go first.
            if len(prompt) <= self.config.max_prompt_chars or len(history) <= 1:
                return prompt
            history = history[1:]

    def post_message(self, session_id: str, text: str) -> tuple[str, RewardVector | None]:
        session = self._get(session_id)
        if not text or not text.strip():
            raise ApiError(422, "validation_error", "message text must be non-empty")
        lock = self._locks[session_id]
        if not lock.acquire(blocking=self.config.busy_policy == "queue"):
            raise ApiError(429, "busy", "another message is in flight for this session")
        try:
            if not session.open:
                raise ApiError(409, "session_closed", "session is closed")
            seeker = Utterance(Role.SEEKER, text.strip())
            seeker_ts = self.clock()
            reply = self._generate_reply(session, seeker)
            agent_ts = self.clock()

            rewards = None
            if self.config.show_rewards:
                rewards = self._reply_rewards(session.paper_id, reply)

            # Persist the exchange only now: a failed generation leaves the
            # transcript untouched, never ending on a seeker turn.
            self.store.append(
                {
                    "type": "message",
                    "session_id": session.id,
                    "role": Role.SEEKER.value,
                    "text": seeker.text,
                    "timestamp": seeker_ts,
                }
            )
            self.store.append(
                {
                    "type": "message",
                    "session_id": session.id,
                    "role": Role.AGENT.value,
                    "text": reply,
                    "timestamp": agent_ts,
                }
            )
            session.utterances.extend([seeker, Utterance(Role.AGENT, reply)])
            session.message_timestamps.extend([seeker_ts, agent_ts])
            return reply, rewards
        finally:
            lock.release()

    def _generate_reply(self, session: SessionState, pending: Utterance) -> str:
        prompt = self._build_prompt(session, pending)
        lexicon = lexicon_for(self.config.scenario)
        try:
            raw = self.llm.complete(prompt)
            reply, _ = clean_response_text(raw, lexicon)
            if not reply:
                raise ApiError(502, "upstream_error", "provider returned an empty reply")
            if self.config.refine_enabled and self.config.refine_iterations > 0:
                paper = self.papers[session.paper_id]
                history = Dialogue(
                    session.paper_id, tuple(list(session.utterances) + [pending]), "live"
                )
                rc = RemuseConfig(
                    reward_subset=frozenset({"k_prec", "specificity"}),
                    iterations=self.config.refine_iterations,
                    scenario=self.config.scenario,
                )
                reply = refine_response(
                    knowledge_from_paper(paper), history, reply, rc, self.llm, self.scorer
                )
            return reply
        except (GatewayError, RemuseError) as exc:
            raise ApiError(502, "upstream_error", str(exc)) from exc

    def _reply_rewards(self, paper_id: str, reply: str) -> RewardVector | None:
        ktext = knowledge_text(knowledge_from_paper(self.papers[paper_id]))
        try:
            return RewardVector(k_prec=k_precision(reply, ktext), specificity=specificity(reply))
        except MetricError:
            return None

    def submit_decision(self, session_id: str, decision: str, meta_review: str) -> SessionState:
        session = self._get(session_id)
        if decision not in ("accept", "reject"):
            raise ApiError(422, "validation_error", "decision must be 'accept' or 'reject'")
        if not meta_review or not meta_review.strip():
            raise ApiError(422, "validation_error", "meta_review text must be non-empty")
        lock = self._locks[session_id]
        with lock:
            if not session.open:
                raise ApiError(409, "session_closed", "decision already submitted")
            session.decision = decision
            session.meta_review = meta_review.strip()
            session.closed_at = self.clock()
            self.store.append(
                {
                    "type": "decision",
                    "session_id": session.id,
                    "decision": session.decision,
                    "meta_review": session.meta_review,
                    "closed_at": session.closed_at,
                }
            )
        return session

    def study_log(self, paper_id: str | None = None) -> list[StudyLogEntry]:
        entries = []
        for session in self.sessions.values():
            if session.open:
                continue
            if paper_id is not None and session.paper_id != paper_id:
                continue
            paper = self.papers.get(session.paper_id)
            gold = paper.decision if paper is not None and paper.decision != "unknown" else None
            assert session.decision is not None and session.closed_at is not None
            entries.append(
                StudyLogEntry(
                    session_id=session.id,
                    paper_id=session.paper_id,
                    duration_seconds=session.closed_at - session.created_at,
                    turn_count=len(session.utterances),
                    decision=session.decision,
                    gold_decision=gold,
                )
            )
        entries.sort(key=lambda e: e.session_id)
        return entries
