"""HTTP service exposing graph search and multi-round question answering.

Two authenticated endpoints drive the flow: POST /search retrieves a
keyword's neighborhood and opens a session; POST /ask routes questions and
the "new"/"exit" commands within that session. GET /health and GET /openapi
are public; when a UI bundle directory is configured it is served at /.
Authentication is a single API key in the X-API-Key header, declared in the
interface description so interactive docs offer the Authorize flow.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Callable

import httpx
from fastapi import Depends, FastAPI, HTTPException, Security
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.security import APIKeyHeader
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import qa_engine
from .graph_store import GraphStore
from .llm_gateway import GatewayError, HttpGateway, LlmGateway, MockGateway
from .qa_engine import EngineConfig, SessionManager, TransitionKind
from .retrieval import (
    EmptyKeywordError,
    RetrievalHit,
    SearchLimits,
    format_context,
    search_keyword,
)

logger = logging.getLogger(__name__)

API_KEY_HEADER = "X-API-Key"


@dataclass(frozen=True)
class ApiConfig:
    bind_address: str = "0.0.0.0"
    port: int = 8000
    api_key: str = ""
    auth_enabled: bool = True
    cors_allowed_origins: tuple[str, ...] = ()
    max_sessions: int = 256
    ui_dir: str | None = None

    def __post_init__(self) -> None:
        if self.auth_enabled and not self.api_key:
            raise ValueError("api_key must be non-empty while auth is enabled")


class LimitsIn(BaseModel):
    max_nodes: int = Field(default=10, ge=1)
    max_edges_per_node: int = Field(default=50, ge=1)


class SearchRequest(BaseModel):
    keyword: str
    limits: LimitsIn | None = None


class EdgeOut(BaseModel):
    relation: str
    neighbor_name: str
    neighbor_label: str
    direction: str


class HitOut(BaseModel):
    node_id: str
    name: str
    label: str
    match_kind: str
    edges: list[EdgeOut]


class SearchResponse(BaseModel):
    session_id: str
    hits: list[HitOut]
    context_text: str
    hit_count: int
    no_context: bool


class AskRequest(BaseModel):
    session_id: str
    question: str


class AskResponse(BaseModel):
    answer: str | None = None
    restart: bool = False
    ended: bool = False
    turn_index: int | None = None
    history_length: int | None = None
    ungrounded: bool = False


class HealthResponse(BaseModel):
    status: str
    graph_stats: dict
    model_endpoint_ok: bool


def serialize_hit(hit: RetrievalHit) -> HitOut:
    node = hit.matched_node
    edges = []
    for edge, neighbor in hit.edges:
        edges.append(
            EdgeOut(
                relation=edge.relation,
                neighbor_name=neighbor.name,
                neighbor_label=neighbor.label.identifier,
                direction="out" if edge.from_id == node.node_id else "in",
            )
        )
    return HitOut(
        node_id=node.node_id,
        name=node.name,
        label=node.label.identifier,
        match_kind=hit.match_kind,
        edges=edges,
    )


def default_model_probe(gateway: LlmGateway) -> Callable[[], bool]:
    """Reachability check for /health: mock gateways are always ok; HTTP
    gateways get a cheap GET /models with a short timeout."""

    def probe() -> bool:
        if isinstance(gateway, MockGateway):
            return True
        if isinstance(gateway, HttpGateway):
            try:
                response = gateway._client.get("/models", timeout=3.0)
                return response.status_code < 500
            except httpx.HTTPError:
                return False
        return True

    return probe


def create_app(
    store: GraphStore | None,
    gateway: LlmGateway,
    api_config: ApiConfig | None = None,
    engine_config: EngineConfig | None = None,
    model_probe: Callable[[], bool] | None = None,
) -> FastAPI:
    api_config = api_config if api_config is not None else ApiConfig(api_key="dev-key")
    engine_config = engine_config if engine_config is not None else EngineConfig()
    manager = SessionManager(engine_config, max_sessions=api_config.max_sessions)
    probe = model_probe if model_probe is not None else default_model_probe(gateway)

    app = FastAPI(
        title="Knowledge Graph QA API",
        description=(
            "Keyword retrieval over a typed knowledge graph plus "
            "graph-grounded multi-round question answering."
        ),
        version="1.0.0",
    )
    app.state.store = store
    app.state.gateway = gateway
    app.state.manager = manager
    app.state.api_config = api_config
    app.state.engine_config = engine_config

    if api_config.cors_allowed_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(api_config.cors_allowed_origins),
            allow_methods=["*"],
            allow_headers=["*"],
        )

    api_key_scheme = APIKeyHeader(name=API_KEY_HEADER, auto_error=False)

    def require_api_key(provided: str | None = Security(api_key_scheme)) -> None:
        if not api_config.auth_enabled:
            return
        if provided != api_config.api_key:
            raise HTTPException(status_code=401, detail="missing or invalid API key")

    def require_store() -> GraphStore:
        if app.state.store is None:
            raise HTTPException(status_code=503, detail="graph store unavailable")
        return app.state.store

    @app.post(
        "/search",
        response_model=SearchResponse,
        dependencies=[Depends(require_api_key)],
    )
    def search(request: SearchRequest) -> SearchResponse:
        current_store = require_store()
        limits = (
            SearchLimits(
                max_nodes=request.limits.max_nodes,
                max_edges_per_node=request.limits.max_edges_per_node,
            )
            if request.limits is not None
            else engine_config.search_limits
        )
        try:
            hits = search_keyword(current_store, request.keyword, limits)
        except EmptyKeywordError:
            raise HTTPException(status_code=400, detail="keyword is empty") from None
        context = format_context(hits)
        session = manager.adopt(request.keyword.strip(), context)
        return SearchResponse(
            session_id=session.session_id,
            hits=[serialize_hit(hit) for hit in hits],
            context_text=context.text,
            hit_count=context.hit_count,
            no_context=session.no_context,
        )

    @app.post(
        "/ask",
        response_model=AskResponse,
        response_model_exclude_none=True,
        dependencies=[Depends(require_api_key)],
    )
    def ask(request: AskRequest) -> AskResponse:
        manager.reap()
        session = manager.get(request.session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        if not session.active:
            raise HTTPException(status_code=410, detail="session has ended")
        if not request.question.strip():
            raise HTTPException(status_code=400, detail="question is empty")
        lock = manager.lock_for(request.session_id)
        with lock:
            try:
                transition = qa_engine.handle_command(
                    session, request.question, gateway, engine_config
                )
            except qa_engine.SessionEndedError:
                raise HTTPException(
                    status_code=410, detail="session has ended"
                ) from None
            except GatewayError as exc:
                logger.warning("upstream model failure: %s", exc)
                raise HTTPException(
                    status_code=502, detail=f"upstream model failure: {exc}"
                ) from None
        if transition.kind is TransitionKind.RESTARTED:
            return AskResponse(restart=True, ended=True)
        if transition.kind is TransitionKind.ENDED:
            return AskResponse(ended=True)
        return AskResponse(
            answer=transition.answer,
            turn_index=len(session.history),
            history_length=len(session.history),
            ungrounded=session.no_context,
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        stats = (
            app.state.store.stats().to_dict()
            if app.state.store is not None
            else {"node_count": 0, "edge_count": 0}
        )
        return HealthResponse(
            status="ok", graph_stats=stats, model_endpoint_ok=probe()
        )

    @app.get("/openapi", include_in_schema=False)
    def openapi_document() -> JSONResponse:
        return JSONResponse(app.openapi())

    if api_config.ui_dir and Path(api_config.ui_dir).is_dir():
        app.mount(
            "/", StaticFiles(directory=api_config.ui_dir, html=True), name="ui"
        )

    return app
