"""Multi-round graph-grounded question answering sessions.

A session pins the retrieval context at creation. Questions are answered
with a prompt holding the system instructions, the context block verbatim,
the recent conversation history and the new question. The interaction
protocol reserves two commands: "new" restarts keyword entry and "exit"
leaves the system; anything else is a question.
"""

from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from . import prompt_assets
from .graph_store import GraphStore
from .llm_gateway import ChatMessage, ChatRequest, LlmGateway
from .retrieval import (
    ContextBlock,
    EmptyKeywordError,
    SearchLimits,
    format_context,
    search_keyword,
)

__all__ = [
    "EngineConfig",
    "QASession",
    "SessionEndedError",
    "SessionManager",
    "Transition",
    "TransitionKind",
    "EmptyKeywordError",
    "ask",
    "build_messages",
    "handle_command",
    "reap_expired",
    "start_session",
]

STATE_ACTIVE = "active"
STATE_ENDED = "ended"

COMMAND_RESTART = "new"
COMMAND_EXIT = "exit"


class SessionEndedError(Exception):
    """Raised when an ended session receives a question."""


@dataclass(frozen=True)
class EngineConfig:
    answer_model: str = "default"
    system_prompt_template: str = prompt_assets.QA_GROUNDED
    ungrounded_prompt_template: str = prompt_assets.QA_PLAIN
    max_history_turns: int = 6
    session_ttl: float = 1800.0
    temperature: float = 0.7
    max_tokens: int = 2048
    search_limits: SearchLimits = SearchLimits()

    def __post_init__(self) -> None:
        if self.max_history_turns < 1:
            raise ValueError("max_history_turns must be >= 1")


@dataclass
class QASession:
    session_id: str
    keyword: str
    context: ContextBlock
    history: list[tuple[str, str]] = field(default_factory=list)
    created_at: float = 0.0
    last_active: float = 0.0
    state: str = STATE_ACTIVE

    @property
    def no_context(self) -> bool:
        return self.context.hit_count == 0

    @property
    def active(self) -> bool:
        return self.state == STATE_ACTIVE

    def end(self) -> None:
        self.state = STATE_ENDED


class TransitionKind(Enum):
    ANSWERED = "answered"
    RESTARTED = "restarted"
    ENDED = "ended"


@dataclass(frozen=True)
class Transition:
    kind: TransitionKind
    answer: str | None = None


def start_session(
    store: GraphStore,
    keyword: str,
    cfg: EngineConfig = EngineConfig(),
    now: float | None = None,
) -> QASession:
    """Retrieve and pin the context for a keyword; empty hits are allowed
    and flagged via ``session.no_context``."""
    hits = search_keyword(store, keyword, cfg.search_limits)
    context = format_context(hits)
    stamp = time.time() if now is None else now
    return QASession(
        session_id=secrets.token_urlsafe(16),
        keyword=keyword.strip(),
        context=context,
        created_at=stamp,
        last_active=stamp,
    )


def build_messages(
    session: QASession, question: str, cfg: EngineConfig
) -> tuple[ChatMessage, ...]:
    """Deterministic prompt: system + context, trimmed history, question."""
    if session.no_context:
        system_text = prompt_assets.load_text(cfg.ungrounded_prompt_template)
    else:
        system_text = prompt_assets.render(
            cfg.system_prompt_template, context=session.context.text
        )
    messages = [ChatMessage("system", system_text)]
    for asked, answered in session.history[-cfg.max_history_turns :]:
        messages.append(ChatMessage("user", asked))
        messages.append(ChatMessage("assistant", answered))
    messages.append(ChatMessage("user", question))
    return tuple(messages)


def ask(
    session: QASession,
    question: str,
    gateway: LlmGateway,
    cfg: EngineConfig = EngineConfig(),
    now: float | None = None,
) -> str:
    """Answer one question inside the session and append it to history.

    A gateway failure propagates without touching the session state.
    """
    if not session.active:
        raise SessionEndedError(f"session {session.session_id} has ended")
    question = question.strip()
    if not question:
        raise ValueError("question is empty")
    request = ChatRequest(
        messages=build_messages(session, question, cfg),
        model=cfg.answer_model,
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
    )
    answer = gateway.chat(request).content
    session.history.append((question, answer))
    session.last_active = time.time() if now is None else now
    return answer


def handle_command(
    session: QASession,
    user_input: str,
    gateway: LlmGateway,
    cfg: EngineConfig = EngineConfig(),
    now: float | None = None,
) -> Transition:
    """Route one line of input: "new" restarts, "exit" ends, rest is asked."""
    if not session.active:
        raise SessionEndedError(f"session {session.session_id} has ended")
    command = user_input.strip().lower()
    if command == COMMAND_RESTART:
        session.end()
        return Transition(TransitionKind.RESTARTED)
    if command == COMMAND_EXIT:
        session.end()
        return Transition(TransitionKind.ENDED)
    answer = ask(session, user_input, gateway, cfg, now=now)
    return Transition(TransitionKind.ANSWERED, answer=answer)


def reap_expired(
    sessions: Iterable[QASession], now: float, ttl: float
) -> int:
    """End sessions idle longer than ``ttl`` seconds; returns how many."""
    ended = 0
    for session in sessions:
        if session.active and now - session.last_active > ttl:
            session.end()
            ended += 1
    return ended


class SessionManager:
    """Thread-safe registry of live sessions with TTL reaping.

    Asks within one session are serialized by a per-session lock; separate
    sessions proceed concurrently. When the registry is full the
    longest-idle session is ended and evicted.
    """

    def __init__(self, cfg: EngineConfig = EngineConfig(), max_sessions: int = 256):
        self.cfg = cfg
        self.max_sessions = max_sessions
        self._lock = threading.Lock()
        self._sessions: dict[str, QASession] = {}
        self._session_locks: dict[str, threading.Lock] = {}

    def create(
        self, store: GraphStore, keyword: str, now: float | None = None
    ) -> QASession:
        session = start_session(store, keyword, self.cfg, now=now)
        self._register(session, now)
        return session

    def adopt(
        self, keyword: str, context: ContextBlock, now: float | None = None
    ) -> QASession:
        """Register a session around an already-retrieved context, so a
        caller that needed the raw hits does not search twice."""
        stamp = time.time() if now is None else now
        session = QASession(
            session_id=secrets.token_urlsafe(16),
            keyword=keyword,
            context=context,
            created_at=stamp,
            last_active=stamp,
        )
        self._register(session, now)
        return session

    def _register(self, session: QASession, now: float | None) -> None:
        with self._lock:
            self.reap(now)
            while len(self._sessions) >= self.max_sessions:
                oldest = min(self._sessions.values(), key=lambda s: s.last_active)
                oldest.end()
                self._evict(oldest.session_id)
            self._sessions[session.session_id] = session
            self._session_locks[session.session_id] = threading.Lock()

    def get(self, session_id: str) -> QASession | None:
        return self._sessions.get(session_id)

    def lock_for(self, session_id: str) -> threading.Lock | None:
        return self._session_locks.get(session_id)

    def reap(self, now: float | None = None) -> int:
        stamp = time.time() if now is None else now
        reaped = reap_expired(
            list(self._sessions.values()), stamp, self.cfg.session_ttl
        )
        return reaped

    def _evict(self, session_id: str) -> None:
        self._sessions.pop(session_id, None)
        self._session_locks.pop(session_id, None)

    def drop(self, session_id: str) -> None:
        with self._lock:
            self._evict(session_id)

    def __len__(self) -> int:
        return len(self._sessions)
