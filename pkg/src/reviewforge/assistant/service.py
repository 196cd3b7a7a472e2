"""HTTP API for the live grounded assistant.

All error responses carry ``{"code", "message"}``. The app is a plain
factory over a :class:`SessionManager`, so tests can inject a scripted
provider and a fixture clock.
"""

from __future__ import annotations

import time

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from ..corpus import PaperRecord
from ..scorer import ScorerEndpoint
from .sessions import ApiError, AssistantConfig, SessionManager
from .store import EventStore


class CreateSessionBody(BaseModel):
    paper_id: str


class MessageBody(BaseModel):
    text: str


class DecisionBody(BaseModel):
    decision: str
    meta_review: str


def create_app(
    *,
    corpus: list[PaperRecord],
    llm,
    store_path: str,
    clock=time.time,
    config: AssistantConfig = AssistantConfig(),
    scorer: ScorerEndpoint | None = None,
) -> FastAPI:
    manager = SessionManager(
        corpus, llm, EventStore(store_path), clock=clock, config=config, scorer=scorer
    )
    app = FastAPI(title="reviewforge assistant")
    app.state.manager = manager
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(ApiError)
    async def handle_api_error(_request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status_code, content={"code": exc.code, "message": exc.message}
        )

    @app.exception_handler(RequestValidationError)
    async def handle_validation(_request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422, content={"code": "validation_error", "message": str(exc.errors())}
        )

    @app.get("/papers")
    def list_papers():
        return [
            {
                "id": r.id,
                "title": r.title,
                "paper_type": r.paper_type,
                "review_count": len(r.reviews),
            }
            for r in manager.papers.values()
        ]

    @app.get("/papers/{paper_id}")
    def get_paper(paper_id: str):
        paper = manager.papers.get(paper_id)
        if paper is None:
            raise ApiError(404, "paper_not_found", f"no paper {paper_id!r}")
        # Gold meta-review/decision stay server-side; the study UI must not
        # reveal them.
        return {
            "id": paper.id,
            "title": paper.title,
            "paper_type": paper.paper_type,
            "reviews": list(paper.reviews),
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        return manager.create_session(body.paper_id).to_record()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return manager._get(session_id).to_record()

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody):
        reply, rewards = manager.post_message(session_id, body.text)
        return {"reply": reply, "rewards": rewards.to_dict() if rewards is not None else None}

    @app.post("/sessions/{session_id}/decision")
    def submit_decision(session_id: str, body: DecisionBody):
        return manager.submit_decision(session_id, body.decision, body.meta_review).to_record()

    @app.get("/study/log")
    def study_log(paper_id: str | None = None):
        return [entry.to_record() for entry in manager.study_log(paper_id)]

    return app
