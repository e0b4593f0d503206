"""HTTP inference service with per-session dialogue state.

Sessions always run predicted-answer history: each turn's context is built
from the session's own earlier answers, never from gold data. Model weights
are shared read-only across requests; each session guards its turn log with
a lock, so asks within one session serialize while different sessions run in
parallel. Sessions are in-memory and evicted after `session_ttl` seconds of
inactivity.
"""
from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .data import Dialogue, HistoryMode, Turn, build_context
from .pipeline import Predictor, PreparedParagraph, _pad_context

DEFAULT_SESSION_TTL = 3600.0


class CreateSessionBody(BaseModel):
    paragraph: str
    k: int | None = None


class AskBody(BaseModel):
    question: str


@dataclass
class SessionTurn:
    question: str
    answer: str
    answer_type: str
    start: int
    end: int
    score: float


@dataclass
class Session:
    id: str
    prepared: PreparedParagraph
    k: int
    turns: list[SessionTurn] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_used: float = 0.0


class SessionStore:
    def __init__(self, ttl: float, clock=time.monotonic):
        self._sessions: dict[str, Session] = {}
        self._guard = threading.Lock()
        self._ttl = ttl
        self._clock = clock

    def _evict_expired(self, now: float) -> None:
        dead = [sid for sid, s in self._sessions.items() if now - s.last_used > self._ttl]
        for sid in dead:
            del self._sessions[sid]

    def add(self, session: Session) -> None:
        with self._guard:
            now = self._clock()
            self._evict_expired(now)
            session.last_used = now
            self._sessions[session.id] = session

    def get(self, session_id: str) -> Session:
        with self._guard:
            now = self._clock()
            self._evict_expired(now)
            session = self._sessions.get(session_id)
            if session is None:
                raise HTTPException(status_code=404, detail="unknown session")
            session.last_used = now
            return session


def _session_dialogue(session: Session, question: str) -> tuple[Dialogue, dict]:
    """Recast the turn log as a dialogue so context building is the same code
    path as batch evaluation."""
    turns = [
        Turn(question=t.question, answer_texts=[t.answer], span=None)
        for t in session.turns
    ]
    turns.append(Turn(question=question, answer_texts=[""], span=None))
    store = {
        (session.id, i + 1): t.answer for i, t in enumerate(session.turns)
    }
    return Dialogue(id=session.id, source="", paragraph="", turns=turns), store


def create_app(
    predictor: Predictor,
    *,
    session_ttl: float = DEFAULT_SESSION_TTL,
    clock=time.monotonic,
) -> FastAPI:
    app = FastAPI(title="convmc inference service")
    store = SessionStore(session_ttl, clock)

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "dataset_mode": predictor.dataset_mode}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        if not body.paragraph.strip():
            raise HTTPException(status_code=400, detail="empty paragraph")
        k = predictor.model.k if body.k is None else body.k
        if not 0 <= k <= predictor.model.k:
            raise HTTPException(
                status_code=400,
                detail=f"k must be in [0, {predictor.model.k}]",
            )
        prepared = predictor.prepare(body.paragraph)
        session = Session(id=uuid.uuid4().hex, prepared=prepared, k=k)
        store.add(session)
        return {
            "session_id": session.id,
            "paragraph": prepared.text,
            "token_spans": [list(span) for span in prepared.alignment],
            "k": k,
        }

    @app.post("/sessions/{session_id}/ask")
    def ask(session_id: str, body: AskBody):
        if not body.question.strip():
            raise HTTPException(status_code=400, detail="empty question")
        session = store.get(session_id)
        with session.lock:
            dialogue, predicted = _session_dialogue(session, body.question)
            turn_index = len(session.turns) + 1
            ctx = build_context(
                dialogue,
                turn_index,
                session.k,
                HistoryMode.PREDICTED,
                predicted_store=predicted,
            )
            ctx = _pad_context(ctx, predictor.model.k)
            answer = predictor.answer(session.prepared, ctx)
            turn = SessionTurn(
                question=body.question,
                answer=answer.final_text,
                answer_type=answer.answer_type.value,
                start=answer.global_start,
                end=answer.global_end,
                score=answer.score,
            )
            session.turns.append(turn)
        return {
            "answer": turn.answer,
            "type": turn.answer_type,
            "span": {"start": turn.start, "end": turn.end},
            "score": turn.score,
            "turn": turn_index,
        }

    @app.get("/sessions/{session_id}/history")
    def history(session_id: str):
        session = store.get(session_id)
        with session.lock:
            turns = [
                {
                    "turn": i + 1,
                    "question": t.question,
                    "answer": t.answer,
                    "type": t.answer_type,
                    "span": {"start": t.start, "end": t.end},
                    "score": t.score,
                }
                for i, t in enumerate(session.turns)
            ]
        return {
            "session_id": session.id,
            "paragraph": session.prepared.text,
            "token_spans": [list(span) for span in session.prepared.alignment],
            "k": session.k,
            "turns": turns,
        }

    return app
