"""Chat-completions backends: a remote HTTP client and a deterministic offline mock."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol

import httpx

logger = logging.getLogger(__name__)

ROLES = ("system", "user")
FINISH_REASONS = ("stop", "length", "error")
RETRY_STATUS = frozenset({429, 500, 502, 503, 504})


class LLMError(Exception):
    pass


class BackendUnavailableError(LLMError):
    pass


class ProtocolError(LLMError):
    pass


class AuthError(LLMError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if not self.content:
            raise ValueError("message content must be nonempty")


@dataclass(frozen=True)
class GenerationRequest:
    model_id: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("a generation request needs at least one user message")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")

    @classmethod
    def single(cls, model_id: str, prompt: str, **kwargs) -> "GenerationRequest":
        return cls(model_id, (Message("user", prompt),), **kwargs)

    @property
    def last_user_message(self) -> str:
        return next(m.content for m in reversed(self.messages) if m.role == "user")

    def to_payload(self) -> dict:
        return {
            "model": self.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class GenerationResponse:
    content: Optional[str]
    finish_reason: str = "stop"
    usage: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if self.finish_reason not in FINISH_REASONS:
            raise ValueError(f"finish_reason must be one of {FINISH_REASONS}")
        if self.finish_reason != "error" and self.content is None:
            raise ValueError("content is required unless finish_reason is 'error'")


@dataclass(frozen=True)
class BackendConfig:
    base_url: str = "http://localhost:8000"
    api_key_env: str = "SOCIALRAG_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 1.0
    max_in_flight: int = 4

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.backoff_base < 0:
            raise ValueError(f"backoff_base must be >= 0, got {self.backoff_base}")
        if self.max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {self.max_in_flight}")

    @property
    def endpoint(self) -> str:
        return self.base_url.rstrip("/") + "/v1/chat/completions"


class Backend(Protocol):
    def generate(self, request: GenerationRequest) -> GenerationResponse: ...


def _parse_completion(response: httpx.Response) -> GenerationResponse:
    try:
        body = response.json()
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise ProtocolError(f"backend returned non-JSON body (HTTP {response.status_code})") from None
    try:
        choice = body["choices"][0]
        content = choice["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError("response has no choices[0].message.content") from None
    if content is not None and not isinstance(content, str):
        raise ProtocolError("choices[0].message.content is not a string")

    reason = choice.get("finish_reason") or "stop"
    if reason not in ("stop", "length"):
        reason = "error" if content is None else "stop"
    usage = body.get("usage")
    if isinstance(usage, dict) and "prompt_tokens" in usage:
        usage = (int(usage["prompt_tokens"]), int(usage.get("completion_tokens", 0)))
    else:
        usage = None
    return GenerationResponse(content=content, finish_reason=reason, usage=usage)


class HttpBackend:
    """Client for a ``/v1/chat/completions`` server.

    Retries 429, 5xx, timeouts and connection failures with exponential
    backoff (``backoff_base * 2**attempt`` seconds). A 401 fails at once.
    A semaphore caps concurrent requests across threads.
    """

    def __init__(
        self,
        config: BackendConfig = BackendConfig(),
        client: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        cfg = self.config
        payload = request.to_payload()
        last_error = "no attempt made"
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                delay = cfg.backoff_base * 2 ** (attempt - 1)
                logger.info("retrying in %.2fs after: %s", delay, last_error)
                self._sleep(delay)
            try:
                with self._slots:
                    response = self._client.post(
                        cfg.endpoint, json=payload, headers=self._headers(), timeout=cfg.timeout
                    )
            except httpx.TimeoutException as e:
                last_error = f"timeout: {e}"
                continue
            except httpx.TransportError as e:
                last_error = f"transport error: {e}"
                continue

            status = response.status_code
            if status == 401:
                raise AuthError(f"backend rejected credentials (HTTP 401); check ${cfg.api_key_env}")
            if status in RETRY_STATUS:
                last_error = f"HTTP {status}"
                continue
            if status >= 400:
                raise LLMError(f"backend returned HTTP {status}: {response.text[:200]}")
            return _parse_completion(response)

        raise BackendUnavailableError(
            f"backend unavailable after {cfg.max_retries + 1} attempts: {last_error}"
        )

    def close(self) -> None:
        self._client.close()


def generate(config: BackendConfig, request: GenerationRequest, client: Optional[httpx.Client] = None) -> GenerationResponse:
    backend = HttpBackend(config, client=client)
    try:
        return backend.generate(request)
    finally:
        if client is None:
            backend.close()


_SENTENCE_RE = re.compile(r"[^.!?]*(?:[.!?]+|$)")


def first_sentences(text: str, n: int) -> str:
    sentences = [s.strip() for s in _SENTENCE_RE.findall(text)]
    return " ".join([s for s in sentences if s][:n])


@dataclass(frozen=True)
class MockRule:
    pattern: str
    response: str

    def __post_init__(self):
        re.compile(self.pattern)


@dataclass(frozen=True)
class MockScript:
    """Deterministic response rules for :class:`MockBackend`.

    Rules are tried in order against the last user message (``re.search``);
    the first match returns its canned response. Otherwise the first
    ``fallback_sentences`` sentences of that message are echoed back.
    """

    rules: tuple[MockRule, ...] = ()
    fallback_sentences: int = 2

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if self.fallback_sentences < 1:
            raise ValueError("fallback_sentences must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "MockScript":
        return cls(
            rules=tuple(MockRule(r["pattern"], r["response"]) for r in d.get("rules", ())),
            fallback_sentences=int(d.get("fallback_sentences", 2)),
        )

    @classmethod
    def load(cls, path: os.PathLike | str) -> "MockScript":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def mock_generate(script: MockScript, request: GenerationRequest) -> GenerationResponse:
    text = request.last_user_message
    for rule in script.rules:
        if re.search(rule.pattern, text):
            return GenerationResponse(content=rule.response)
    return GenerationResponse(content=first_sentences(text, script.fallback_sentences))


class MockBackend:
    """Offline backend wrapping :func:`mock_generate`; records every request it sees."""

    def __init__(self, script: MockScript = MockScript()):
        self.script = script
        self.requests: list[GenerationRequest] = []
        self._lock = threading.Lock()

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        with self._lock:
            self.requests.append(request)
        return mock_generate(self.script, request)
