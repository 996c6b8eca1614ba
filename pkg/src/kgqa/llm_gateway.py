"""Client layer for OpenAI-compatible chat-completion endpoints.

Every module that needs a language model talks to a gateway object with a
single ``chat`` method. ``HttpGateway`` speaks the chat-completions wire
format (messages in, choices/content out) with bounded retries and an
in-flight cap; ``MockGateway`` replays a script so the whole pipeline runs
deterministically offline.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

VALID_ROLES = ("system", "user", "assistant")


class GatewayError(Exception):
    """Base class for gateway failures."""


class AuthError(GatewayError):
    """Credentials rejected by the endpoint. Never retried."""


class TransportError(GatewayError):
    """Transport or server failure after retries were exhausted."""


class GatewayTimeoutError(GatewayError):
    """Request deadline exceeded after retries were exhausted."""


class MalformedResponseError(GatewayError):
    """Endpoint returned a body the chat-completions schema cannot explain."""


class ParseError(GatewayError):
    """Reply contains no well-formed structured block."""


class SchemaError(GatewayError):
    """Structured reply is missing required fields or has wrong types."""


class MockScriptExhaustedError(GatewayError):
    """The scripted mock ran out of entries."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in VALID_ROLES:
            raise ValueError(f"role must be one of {VALID_ROLES}, got {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"{self.role} message content must be non-empty")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    model: str = "default"
    temperature: float = 0.0
    max_tokens: int = 2048
    timeout: float = 60.0

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]], **kwargs: Any) -> "ChatRequest":
        return cls(messages=tuple(ChatMessage(r, c) for r, c in pairs), **kwargs)


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str = "stop"
    usage: Mapping[str, int] | None = None


@dataclass(frozen=True)
class GatewayConfig:
    base_url: str = "http://localhost:11434/v1"
    api_key: str = ""
    max_retries: int = 2
    retry_backoff: float = 0.5
    max_concurrent_requests: int = 4

    def __post_init__(self) -> None:
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None) -> "GatewayConfig":
        env = os.environ if env is None else env
        return cls(
            base_url=env.get("KGQA_LLM_BASE_URL", cls.base_url),
            api_key=env.get("KGQA_LLM_API_KEY", ""),
            max_retries=int(env.get("KGQA_LLM_MAX_RETRIES", cls.max_retries)),
            retry_backoff=float(env.get("KGQA_LLM_BACKOFF", cls.retry_backoff)),
            max_concurrent_requests=int(
                env.get("KGQA_LLM_MAX_CONCURRENT", cls.max_concurrent_requests)
            ),
        )


def default_model_from_env(env: Mapping[str, str] | None = None) -> str:
    env = os.environ if env is None else env
    return env.get("KGQA_LLM_MODEL", "default")


class LlmGateway(Protocol):
    def chat(self, request: ChatRequest) -> ChatResponse: ...


class HttpGateway:
    """Chat-completions client with retry, backoff and an in-flight cap.

    Transient failures (connection errors, timeouts, 408/429/5xx) are retried
    up to ``max_retries`` times with linear backoff. Authentication failures
    and other client errors are raised immediately.
    """

    def __init__(
        self,
        config: GatewayConfig,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ) -> None:
        self.config = config
        self._semaphore = threading.BoundedSemaphore(config.max_concurrent_requests)
        self._sleep = sleep
        headers = {}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers=headers,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def chat(self, request: ChatRequest) -> ChatResponse:
        attempts = 1 + self.config.max_retries
        last_error: GatewayError | None = None
        with self._semaphore:
            for attempt in range(attempts):
                if attempt:
                    self._sleep(self.config.retry_backoff * attempt)
                try:
                    return self._send_once(request)
                except (AuthError, MalformedResponseError):
                    raise
                except (TransportError, GatewayTimeoutError) as exc:
                    last_error = exc
                    logger.warning(
                        "chat attempt %d/%d failed: %s", attempt + 1, attempts, exc
                    )
        assert last_error is not None
        raise last_error

    def _send_once(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model,
            "messages": [
                {"role": m.role, "content": m.content} for m in request.messages
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        try:
            response = self._client.post(
                "/chat/completions", json=payload, timeout=request.timeout
            )
        except httpx.TimeoutException as exc:
            raise GatewayTimeoutError(str(exc)) from exc
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc

        if response.status_code in (401, 403):
            raise AuthError(f"endpoint rejected credentials (HTTP {response.status_code})")
        if response.status_code in (408, 429) or response.status_code >= 500:
            raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
        if response.status_code >= 400:
            raise MalformedResponseError(
                f"HTTP {response.status_code}: {response.text[:200]}"
            )
        try:
            body = response.json()
            choice = body["choices"][0]
            content = choice["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected response body: {exc}") from exc
        if content is None:
            raise MalformedResponseError("response carried no content")
        return ChatResponse(
            content=content,
            finish_reason=choice.get("finish_reason", "stop"),
            usage=body.get("usage"),
        )


@dataclass
class MockCall:
    """One observed request, recorded by the mock for assertions."""

    request: ChatRequest
    index: int


class MockGateway:
    """Deterministic scripted gateway for offline tests and CLI runs.

    ``script`` is a sequence of entries consumed in order. An entry is either
    a reply string or a dict with one of:

    - ``{"content": "...", "finish_reason": "..."}`` — a reply;
    - ``{"error": "transport"|"auth"|"timeout"|"malformed", "message": "..."}``
      — a raised failure;
    - optional ``"delay"`` seconds, applied before replying (used to observe
      concurrency).

    When the script is exhausted the mock raises, unless a ``default`` reply
    was configured. The same script always produces byte-identical replies.
    """

    def __init__(
        self,
        script: Sequence[str | Mapping[str, Any]] = (),
        default: str | None = None,
        max_concurrent: int | None = None,
    ) -> None:
        self._script = list(script)
        self._default = default
        self._cursor = 0
        self._lock = threading.Lock()
        self._semaphore = (
            threading.BoundedSemaphore(max_concurrent) if max_concurrent else None
        )
        self._in_flight = 0
        self.calls: list[MockCall] = []
        self.max_in_flight_observed = 0

    @classmethod
    def from_file(cls, path: str | os.PathLike, **kwargs: Any) -> "MockGateway":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), **kwargs)

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def chat(self, request: ChatRequest) -> ChatResponse:
        if self._semaphore is not None:
            self._semaphore.acquire()
        try:
            with self._lock:
                self._in_flight += 1
                self.max_in_flight_observed = max(
                    self.max_in_flight_observed, self._in_flight
                )
                self.calls.append(MockCall(request=request, index=self._cursor))
                entry = self._next_entry()
            try:
                return self._play(entry, request)
            finally:
                with self._lock:
                    self._in_flight -= 1
        finally:
            if self._semaphore is not None:
                self._semaphore.release()

    def _next_entry(self) -> str | Mapping[str, Any]:
        if self._cursor < len(self._script):
            entry = self._script[self._cursor]
            self._cursor += 1
            return entry
        if self._default is not None:
            return self._default
        raise MockScriptExhaustedError(
            f"mock script exhausted after {len(self._script)} entries"
        )

    def _play(self, entry: str | Mapping[str, Any], request: ChatRequest) -> ChatResponse:
        if isinstance(entry, str):
            return ChatResponse(content=entry)
        delay = entry.get("delay")
        if delay:
            time.sleep(float(delay))
        error = entry.get("error")
        if error:
            message = entry.get("message", f"scripted {error} failure")
            raised = {
                "transport": TransportError,
                "auth": AuthError,
                "timeout": GatewayTimeoutError,
                "malformed": MalformedResponseError,
            }.get(error)
            if raised is None:
                raise ValueError(f"unknown scripted error kind {error!r}")
            raise raised(message)
        return ChatResponse(
            content=entry["content"],
            finish_reason=entry.get("finish_reason", "stop"),
        )


# -- structured-output helpers ----------------------------------------------

_FENCE_RE = re.compile(r"```(?:[a-zA-Z0-9_-]+)?\s*\n?(.*?)```", re.DOTALL)


def _candidate_blocks(text: str) -> Iterable[str]:
    for match in _FENCE_RE.finditer(text):
        yield match.group(1)
    yield text


def _first_json_value(text: str) -> Any:
    decoder = json.JSONDecoder()
    for block in _candidate_blocks(text):
        for pos, ch in enumerate(block):
            if ch not in "[{":
                continue
            try:
                value, _ = decoder.raw_decode(block, pos)
            except ValueError:
                continue
            return value
    raise ParseError(f"no well-formed JSON object or array in reply: {text[:120]!r}")


def _check_fields(item: Any, contract: Mapping[str, type | tuple[type, ...]]) -> None:
    if not isinstance(item, dict):
        raise SchemaError(f"expected an object, got {type(item).__name__}")
    for name, expected in contract.items():
        if name not in item:
            raise SchemaError(f"missing required field {name!r} in {item!r}")
        value = item[name]
        types = expected if isinstance(expected, tuple) else (expected,)
        if float in types:
            types = types + (int,)
        if not isinstance(value, types) or isinstance(value, bool) and bool not in types:
            raise SchemaError(
                f"field {name!r} has type {type(value).__name__}, expected "
                f"{'/'.join(t.__name__ for t in types)}"
            )


def extract_structured(
    gateway: LlmGateway,
    prompt: str,
    contract: Mapping[str, type | tuple[type, ...]],
    *,
    system: str | None = None,
    model: str = "default",
    temperature: float = 0.0,
    max_tokens: int = 2048,
    repair: bool = False,
) -> list[dict] | dict:
    """Send a prompt and parse the reply as JSON matching ``contract``.

    Surrounding prose and code fences are tolerated: the first well-formed
    JSON object or array found is used. Object replies are checked against
    the contract directly; array replies are checked element by element.
    With ``repair=True`` a single corrective re-prompt is sent when the
    first reply cannot be parsed.
    """
    pairs: list[tuple[str, str]] = []
    if system:
        pairs.append(("system", system))
    pairs.append(("user", prompt))
    request = ChatRequest.from_pairs(
        pairs, model=model, temperature=temperature, max_tokens=max_tokens
    )
    reply = gateway.chat(request)
    try:
        value = _first_json_value(reply.content)
    except ParseError:
        if not repair:
            raise
        retry_request = ChatRequest.from_pairs(
            pairs
            + [
                ("assistant", reply.content or "(empty)"),
                ("user", "Reply again with only the JSON value, no prose."),
            ],
            model=model,
            temperature=temperature,
            max_tokens=max_tokens,
        )
        value = _first_json_value(gateway.chat(retry_request).content)

    if isinstance(value, list):
        for item in value:
            _check_fields(item, contract)
    else:
        _check_fields(value, contract)
    return value


def clamp_confidence(value: float) -> tuple[float, bool]:
    """Clamp a reported confidence into [0, 1]; the flag marks adjustment."""
    clamped = min(1.0, max(0.0, float(value)))
    return clamped, clamped != float(value)
