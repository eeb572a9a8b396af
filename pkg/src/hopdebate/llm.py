"""Chat-completion backends (scripted mock and OpenAI-compatible HTTP) with shared token accounting."""

from __future__ import annotations

import copy
import fnmatch
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import httpx

from .core import TokenUsage
from .errors import (
    MalformedResponseError,
    RateLimitedError,
    ScriptMissError,
    TransportError,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "HOPDEBATE_API_KEY"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def count_tokens_approx(text: str) -> int:
    """Word-and-punctuation count; used only when a backend reports no usage."""
    return len(_TOKEN_RE.findall(text))


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown chat role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message must have content")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


def system(content: str) -> ChatMessage:
    return ChatMessage("system", content)


def user(content: str) -> ChatMessage:
    return ChatMessage("user", content)


def assistant(content: str) -> ChatMessage:
    return ChatMessage("assistant", content)


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_output_tokens: int = 512
    tag: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("a completion request needs at least one message")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    @property
    def prompt_text(self) -> str:
        return "\n".join(m.content for m in self.messages)

    @property
    def last_user(self) -> str:
        for m in reversed(self.messages):
            if m.role == "user":
                return m.content
        return ""


@dataclass(frozen=True)
class CompletionResponse:
    content: str
    usage: TokenUsage
    backend_id: str


@dataclass(frozen=True)
class LedgerEntry:
    tag: str
    usage: TokenUsage
    scope: str = ""


class TokenLedger:
    """Append-only, thread-safe record of (tag, usage) pairs.

    A ledger created with ``parent`` forwards every entry upward, so a
    per-question ledger and the run-wide ledger stay in sync.
    """

    def __init__(self, scope: str = "", parent: TokenLedger | None = None):
        self.scope = scope
        self.parent = parent
        self._entries: list[LedgerEntry] = []
        self._lock = threading.Lock()

    def record(self, tag: str, usage: TokenUsage, scope: str | None = None) -> None:
        entry = LedgerEntry(tag, usage, self.scope if scope is None else scope)
        with self._lock:
            self._entries.append(entry)
        if self.parent is not None:
            self.parent.record(tag, usage, entry.scope)

    @property
    def entries(self) -> list[LedgerEntry]:
        with self._lock:
            return list(self._entries)

    def total(self) -> TokenUsage:
        return TokenUsage.sum(e.usage for e in self.entries)

    def to_dict(self) -> dict[str, Any]:
        report = ledger_report(self)
        return {
            "entries": [
                {"tag": e.tag, "scope": e.scope, **e.usage.to_dict()} for e in self.entries
            ],
            "by_tag": {t: u.to_dict() for t, u in report.by_tag.items()},
            "total": report.total.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TokenLedger:
        ledger = cls()
        for e in d.get("entries", ()):
            ledger.record(e["tag"], TokenUsage.from_dict(e), e.get("scope", ""))
        return ledger


@dataclass(frozen=True)
class LedgerReport:
    by_tag: dict[str, TokenUsage]
    total: TokenUsage


def ledger_report(ledger: TokenLedger | Iterable[LedgerEntry]) -> LedgerReport:
    entries = ledger.entries if isinstance(ledger, TokenLedger) else list(ledger)
    by_tag: dict[str, TokenUsage] = {}
    for e in entries:
        by_tag[e.tag] = by_tag.get(e.tag, TokenUsage()) + e.usage
    by_tag = dict(sorted(by_tag.items()))
    return LedgerReport(by_tag, TokenUsage.sum(by_tag.values()))


class Backend:
    """Base class. Subclasses implement ``_send``; ``complete`` does the accounting."""

    backend_id = "backend"

    def __init__(self, ledger: TokenLedger | None = None):
        self.ledger = ledger if ledger is not None else TokenLedger()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        response = self._send(request)
        self.ledger.record(request.tag, response.usage)
        return response

    def _send(self, request: CompletionRequest) -> CompletionResponse:
        raise NotImplementedError

    def with_ledger(self, ledger: TokenLedger) -> Backend:
        """A view of this backend that records into ``ledger`` instead."""
        clone = copy.copy(self)
        clone.ledger = ledger
        return clone

    def close(self) -> None:
        pass


# -- mock -------------------------------------------------------------------

@dataclass(frozen=True)
class MockRule:
    """One scripted response.

    ``tag`` is a glob over the request tag. ``contains`` lists substrings
    that must all occur and ``excludes`` substrings that must not; both are
    checked against the last user message, or the whole prompt when
    ``scope == "all"``.
    """

    response: str
    tag: str = "*"
    contains: tuple[str, ...] = ()
    excludes: tuple[str, ...] = ()
    scope: str = "last"
    usage: TokenUsage | None = None

    def matches(self, request: CompletionRequest) -> bool:
        if not fnmatch.fnmatchcase(request.tag, self.tag):
            return False
        text = request.prompt_text if self.scope == "all" else request.last_user
        return all(s in text for s in self.contains) and not any(s in text for s in self.excludes)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MockRule:
        def strings(v: Any) -> tuple[str, ...]:
            if v is None:
                return ()
            return (v,) if isinstance(v, str) else tuple(v)

        usage = d.get("usage")
        return cls(
            response=d["response"],
            tag=d.get("tag", "*"),
            contains=strings(d.get("contains")),
            excludes=strings(d.get("excludes")),
            scope=d.get("scope", "last"),
            usage=TokenUsage.from_dict(usage) if usage is not None else None,
        )

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"tag": self.tag, "response": self.response}
        if self.contains:
            d["contains"] = list(self.contains)
        if self.excludes:
            d["excludes"] = list(self.excludes)
        if self.scope != "last":
            d["scope"] = self.scope
        if self.usage is not None:
            d["usage"] = self.usage.to_dict()
        return d


class MockBackend(Backend):
    """Deterministic backend driven by an ordered rule list; first match wins."""

    backend_id = "mock"

    def __init__(self, rules: Sequence[MockRule | dict], ledger: TokenLedger | None = None):
        super().__init__(ledger)
        self.rules = tuple(r if isinstance(r, MockRule) else MockRule.from_dict(r) for r in rules)

    @classmethod
    def from_file(cls, path: str | os.PathLike, ledger: TokenLedger | None = None) -> MockBackend:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, dict):
            data = data["rules"]
        return cls(data, ledger)

    def _send(self, request: CompletionRequest) -> CompletionResponse:
        for rule in self.rules:
            if rule.matches(request):
                usage = rule.usage or TokenUsage(
                    count_tokens_approx(request.prompt_text), count_tokens_approx(rule.response)
                )
                return CompletionResponse(rule.response, usage, self.backend_id)
        preview = request.last_user[:120].replace("\n", " ")
        raise ScriptMissError(f"no mock rule for tag={request.tag!r}: {preview!r}")


class CallbackBackend(Backend):
    """Backend whose reply is computed by a Python callable ``fn(request) -> str``."""

    backend_id = "callback"

    def __init__(self, fn: Callable[[CompletionRequest], str], ledger: TokenLedger | None = None):
        super().__init__(ledger)
        self.fn = fn

    def _send(self, request: CompletionRequest) -> CompletionResponse:
        content = self.fn(request)
        usage = TokenUsage(count_tokens_approx(request.prompt_text), count_tokens_approx(content))
        return CompletionResponse(content, usage, self.backend_id)


# -- HTTP -------------------------------------------------------------------

class HttpBackend(Backend):
    """Client for any endpoint speaking the OpenAI chat-completions protocol."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        *,
        max_attempts: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        max_in_flight: int = 4,
        ledger: TokenLedger | None = None,
        sleep: Callable[[float], None] = time.sleep,
        client: httpx.Client | None = None,
    ):
        super().__init__(ledger)
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.sleep = sleep
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._client = client or httpx.Client(timeout=timeout)
        self.backend_id = f"http:{model}"

    @property
    def url(self) -> str:
        if self.base_url.endswith("/v1"):
            return self.base_url + "/chat/completions"
        return self.base_url + "/v1/chat/completions"

    def _payload(self, request: CompletionRequest) -> dict[str, Any]:
        return {
            "model": self.model,
            "messages": [m.to_dict() for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

    def _send(self, request: CompletionRequest) -> CompletionResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = self._payload(request)
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            delay = self.backoff * (2 ** attempt)
            try:
                with self._gate:
                    resp = self._client.post(self.url, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_error = TransportError(f"POST {self.url} failed: {exc}")
            else:
                if resp.status_code == 429:
                    retry_after = _retry_after(resp)
                    last_error = RateLimitedError(f"rate limited by {self.url}", retry_after)
                    if retry_after is not None:
                        delay = retry_after
                elif resp.status_code >= 500:
                    last_error = TransportError(f"HTTP {resp.status_code} from {self.url}")
                elif resp.status_code >= 400:
                    raise TransportError(f"HTTP {resp.status_code} from {self.url}: {resp.text[:200]}")
                else:
                    return self._parse(resp, request)
            if attempt + 1 < self.max_attempts:
                log.warning("attempt %d/%d failed (%s); retrying in %.2fs",
                            attempt + 1, self.max_attempts, last_error, delay)
                self.sleep(delay)
        assert last_error is not None
        raise last_error

    def _parse(self, resp: httpx.Response, request: CompletionRequest) -> CompletionResponse:
        try:
            body = resp.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"response without message content: {exc}") from exc
        if not isinstance(content, str):
            raise MalformedResponseError("message content is not a string")
        usage_d = body.get("usage") or {}
        if "prompt_tokens" in usage_d:
            usage = TokenUsage(int(usage_d.get("prompt_tokens", 0)), int(usage_d.get("completion_tokens", 0)))
        else:
            usage = TokenUsage(count_tokens_approx(request.prompt_text), count_tokens_approx(content))
        return CompletionResponse(content, usage, self.backend_id)

    def close(self) -> None:
        self._client.close()


def _retry_after(resp: httpx.Response) -> float | None:
    value = resp.headers.get("retry-after")
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None
