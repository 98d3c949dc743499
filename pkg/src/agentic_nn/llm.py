"""Chat-completion access: one gateway, a live HTTP backend and a scripted one.

The scripted backend answers from an ordered rule list, so whole training
runs can be replayed byte for byte without a provider.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from collections import Counter
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol, Union

import httpx

from .errors import (
    MalformedProviderReply,
    NoMatchingRule,
    ProviderError,
    RateLimited,
    Timeout,
    TransientProviderError,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    user_text: str
    system_text: str | None = None
    temperature: float = 0.0
    max_output_tokens: int = 1024
    # what the call is for (agent, selector, judge, ...); used for accounting only
    purpose: str = "agent"

    def __post_init__(self) -> None:
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")

    @property
    def fingerprint(self) -> str:
        blob = (self.system_text or "") + "\x00" + self.user_text
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class UsageRecord:
    input_tokens: int = 0
    output_tokens: int = 0
    cumulative_cost_estimate: float = 0.0


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: UsageRecord
    backend: str  # "live" or "scripted"


@dataclass(frozen=True)
class RawReply:
    text: str
    input_tokens: int
    output_tokens: int


class Backend(Protocol):
    kind: str

    def send(self, request: ChatRequest) -> RawReply: ...


# ---------------------------------------------------------------------------
# scripted backend

Matcher = Union[str, Callable[[ChatRequest], bool]]
Reply = Union[str, Callable[[ChatRequest], str]]


@dataclass(frozen=True)
class Rule:
    """``match`` is a substring of the user text, ``"sha256:<hex>"`` of the
    request fingerprint, or a predicate. ``reply`` is text or a function of
    the request."""

    match: Matcher
    reply: Reply

    def matches(self, request: ChatRequest) -> bool:
        if callable(self.match):
            return bool(self.match(request))
        if self.match.startswith("sha256:"):
            return self.match[len("sha256:"):] == request.fingerprint
        return self.match in request.user_text

    def answer(self, request: ChatRequest) -> str:
        return self.reply(request) if callable(self.reply) else self.reply


class ScriptedOracle:
    """Ordered rules; the first matching rule wins."""

    def __init__(self, rules: Iterable[Rule | tuple[Matcher, Reply]] = (), default_reply: str | None = None):
        self.rules = [r if isinstance(r, Rule) else Rule(*r) for r in rules]
        self.default_reply = default_reply

    def lookup(self, request: ChatRequest) -> str:
        for rule in self.rules:
            if rule.matches(request):
                return rule.answer(request)
        if self.default_reply is not None:
            return self.default_reply
        raise NoMatchingRule(f"no rule matches request ({request.purpose}): {request.user_text[:120]!r}")

    @classmethod
    def from_obj(cls, obj: Any) -> ScriptedOracle:
        """Rules from ``[{match, reply}, ...]`` or ``{"rules": [...], "default_reply": ...}``."""
        default = None
        if isinstance(obj, dict):
            default = obj.get("default_reply")
            obj = obj.get("rules", [])
        rules = []
        for i, item in enumerate(obj):
            if not isinstance(item, dict) or "match" not in item or "reply" not in item:
                raise ValueError(f"rule {i} must be an object with 'match' and 'reply'")
            rules.append(Rule(str(item["match"]), str(item["reply"])))
        return cls(rules, default)

    @classmethod
    def from_json(cls, path: str | Path) -> ScriptedOracle:
        return cls.from_obj(json.loads(Path(path).read_text(encoding="utf-8")))


def count_tokens(text: str) -> int:
    """Crude whitespace token count used for scripted usage accounting."""
    return len(text.split())


class ScriptedBackend:
    kind = "scripted"

    def __init__(self, oracle: ScriptedOracle):
        self.oracle = oracle

    def send(self, request: ChatRequest) -> RawReply:
        text = self.oracle.lookup(request)
        prompt = (request.system_text or "") + " " + request.user_text
        return RawReply(text, count_tokens(prompt), count_tokens(text))


# ---------------------------------------------------------------------------
# live backend


class LiveBackend:
    """OpenAI-compatible ``/chat/completions`` over HTTP."""

    kind = "live"

    def __init__(self, base_url: str, api_key: str, timeout: float = 60.0, client: httpx.Client | None = None):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.api_key = api_key
        self.client = client or httpx.Client(timeout=timeout)

    def payload(self, request: ChatRequest) -> dict[str, Any]:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        return {
            "model": request.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

    def send(self, request: ChatRequest) -> RawReply:
        headers = {"Authorization": f"Bearer {self.api_key}"}
        try:
            resp = self.client.post(self.url, json=self.payload(request), headers=headers)
        except httpx.TimeoutException as e:
            raise Timeout(str(e)) from e
        except httpx.TransportError as e:
            raise TransientProviderError(str(e)) from e
        if resp.status_code == 429:
            raise RateLimited(resp.text[:200])
        if resp.status_code >= 500:
            raise TransientProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
            usage = body.get("usage") or {}
            if not isinstance(text, str):
                raise TypeError("content is not a string")
            return RawReply(text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise MalformedProviderReply(f"unexpected reply shape: {e}") from e


# ---------------------------------------------------------------------------
# gateway


class Gateway:
    """Retries, parallelism bound and usage accounting around a backend.

    ``prices`` maps model name to ``(input, output)`` cost per million tokens;
    unknown models cost nothing.
    """

    def __init__(
        self,
        backend: Backend,
        *,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
        prices: Mapping[str, tuple[float, float]] | None = None,
        max_parallel: int = 4,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.prices = dict(prices or {})
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max(1, max_parallel))
        self._lock = threading.Lock()
        self._input = 0
        self._output = 0
        self._cost = 0.0
        self.calls: Counter[str] = Counter()

    @property
    def kind(self) -> str:
        return self.backend.kind

    @property
    def usage(self) -> UsageRecord:
        with self._lock:
            return UsageRecord(self._input, self._output, self._cost)

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._slots:
            raw = self._send_with_retries(request)
        price_in, price_out = self.prices.get(request.model_name, (0.0, 0.0))
        cost = (raw.input_tokens * price_in + raw.output_tokens * price_out) / 1e6
        with self._lock:
            self._input += raw.input_tokens
            self._output += raw.output_tokens
            self._cost += cost
            self.calls[request.purpose] += 1
            usage = UsageRecord(raw.input_tokens, raw.output_tokens, self._cost)
        return ChatResponse(raw.text, usage, self.backend.kind)

    def _send_with_retries(self, request: ChatRequest) -> RawReply:
        attempt = 0
        while True:
            try:
                return self.backend.send(request)
            except TransientProviderError as e:
                if attempt >= self.max_retries:
                    raise
                delay = min(self.backoff_cap, self.backoff_base * 2**attempt)
                log.warning("transient provider failure (%s); retry %d in %.1fs", e, attempt + 1, delay)
                self._sleep(delay)
                attempt += 1
