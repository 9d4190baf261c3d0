"""Provider-agnostic completion gateway.

All model traffic flows through ``Gateway.complete`` so that retries, rate
limiting, caching, and transcript recording happen in exactly one place.
Providers only know how to turn a prompt string into a response string.

Two providers ship here. ``HttpProvider`` talks JSON-over-HTTP to a real
endpoint described entirely by configuration (request template plus a
response extraction path), so new vendors need no code. ``FixtureProvider``
serves previously recorded responses keyed by prompt hash and is the
backbone of offline tests and the replay command.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

import requests

from .errors import (
    ConfigInvalid,
    MalformedProviderResponse,
    ProviderUnavailable,
    TransientProviderError,
)
from .prompts import RenderedPrompt
from .transcripts import ExchangeRecord, TranscriptRecorder


@dataclass(frozen=True)
class CompletionParams:
    """Sampling knobs forwarded to the provider and keyed into the cache."""

    temperature: float = 0.7
    max_tokens: int = 1024
    seed_hint: Optional[int] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigInvalid(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens <= 0:
            raise ConfigInvalid(f"max_tokens must be positive, got {self.max_tokens}")

    def to_record(self) -> dict:
        rec = {"temperature": self.temperature, "max_tokens": self.max_tokens}
        if self.seed_hint is not None:
            rec["seed_hint"] = self.seed_hint
        return rec


@dataclass(frozen=True)
class CompletionRequest:
    prompt: RenderedPrompt
    provider_id: str
    params: CompletionParams = CompletionParams()


@dataclass(frozen=True)
class CompletionResult:
    raw_text: str
    provider_id: str
    attempt_count: int = 1
    cache_hit: bool = False
    latency_ms: float = 0.0


class Provider:
    """Interface: subclasses set ``provider_id`` and ``context_limit``."""

    provider_id: str = ""
    context_limit: int = 4096
    # True when responses come from a recording rather than a live call.
    serves_recorded: bool = False

    def complete_text(self, prompt_text: str, params: CompletionParams) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class HttpProviderConfig:
    """Everything needed to call one HTTP completion endpoint.

    ``request_template`` is a JSON-shaped structure in which the exact
    string values ``$PROMPT``, ``$MODEL``, ``$TEMPERATURE``, ``$MAX_TOKENS``
    are replaced before sending. ``response_path`` is a dotted path into the
    response JSON (integers index into lists), e.g.
    ``choices.0.message.content``.
    """

    provider_id: str
    endpoint: str
    model: str = ""
    request_template: Mapping = field(default_factory=dict)
    response_path: str = "choices.0.message.content"
    auth_env: Optional[str] = None
    auth_header: str = "Authorization"
    auth_scheme: str = "Bearer"
    extra_headers: Mapping[str, str] = field(default_factory=dict)
    context_limit: int = 4096
    timeout_s: float = 60.0


def _substitute(node, bindings: Mapping[str, object]):
    if isinstance(node, Mapping):
        return {k: _substitute(v, bindings) for k, v in node.items()}
    if isinstance(node, (list, tuple)):
        return [_substitute(v, bindings) for v in node]
    if isinstance(node, str) and node in bindings:
        return bindings[node]
    return node


def _extract(payload, path: str):
    node = payload
    for segment in path.split("."):
        try:
            if isinstance(node, list):
                node = node[int(segment)]
            else:
                node = node[segment]
        except (KeyError, IndexError, TypeError, ValueError):
            raise MalformedProviderResponse(
                f"response has no element at {path!r} (failed on {segment!r})")
    return node


class HttpProvider(Provider):
    def __init__(self, config: HttpProviderConfig, *,
                 secret_lookup: Callable[[str], Optional[str]] = None):
        import os
        self.config = config
        self.provider_id = config.provider_id
        self.context_limit = config.context_limit
        self._secret_lookup = secret_lookup or os.environ.get

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        headers.update(self.config.extra_headers)
        if self.config.auth_env:
            secret = self._secret_lookup(self.config.auth_env)
            if not secret:
                raise ConfigInvalid(
                    f"provider {self.provider_id!r}: environment variable "
                    f"{self.config.auth_env} is not set")
            scheme = self.config.auth_scheme
            headers[self.config.auth_header] = f"{scheme} {secret}" if scheme else secret
        return headers

    def _body(self, prompt_text: str, params: CompletionParams) -> dict:
        bindings = {
            "$PROMPT": prompt_text,
            "$MODEL": self.config.model,
            "$TEMPERATURE": params.temperature,
            "$MAX_TOKENS": params.max_tokens,
        }
        return _substitute(dict(self.config.request_template), bindings)

    def complete_text(self, prompt_text: str, params: CompletionParams) -> str:
        try:
            resp = requests.post(
                self.config.endpoint,
                json=self._body(prompt_text, params),
                headers=self._headers(),
                timeout=self.config.timeout_s)
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise TransientProviderError(f"{self.provider_id}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientProviderError(
                f"{self.provider_id}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderUnavailable(
                f"{self.provider_id}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise MalformedProviderResponse(
                f"{self.provider_id}: response body is not JSON") from exc
        text = _extract(payload, self.config.response_path)
        if not isinstance(text, str):
            raise MalformedProviderResponse(
                f"{self.provider_id}: extracted value is {type(text).__name__}, "
                "expected string")
        return text


class FixtureProvider(Provider):
    """Replays recorded responses, keyed by prompt hash, FIFO per prompt.

    The same prompt can legitimately recur with different responses (the
    corrective re-ask after a parse failure re-sends modified text, but a
    sampler may also answer one prompt twice), so each key holds a queue
    rather than a single value.
    """

    serves_recorded = True

    def __init__(self, provider_id: str,
                 responses: Iterable[tuple[str, str]] = (),
                 context_limit: int = 4096):
        self.provider_id = provider_id
        self.context_limit = context_limit
        self._queues: dict[str, deque[str]] = {}
        for prompt_hash, raw_text in responses:
            self._queues.setdefault(prompt_hash, deque()).append(raw_text)

    @classmethod
    def from_transcript(cls, transcript, provider_id: Optional[str] = None,
                        context_limit: int = 4096) -> "FixtureProvider":
        pid = provider_id
        pairs = []
        for ex in transcript.exchanges:
            if pid is None:
                pid = ex.provider_id
            pairs.append((ex.prompt_sha256, ex.raw_text))
        return cls(pid or "fixture", pairs, context_limit=context_limit)

    def add(self, prompt_hash: str, raw_text: str) -> None:
        self._queues.setdefault(prompt_hash, deque()).append(raw_text)

    def complete_text(self, prompt_text: str, params: CompletionParams) -> str:
        key = hashlib.sha256(prompt_text.encode("utf-8")).hexdigest()
        queue = self._queues.get(key)
        if not queue:
            raise ProviderUnavailable(
                f"{self.provider_id}: no recorded response for prompt hash "
                f"{key[:12]}...")
        return queue.popleft()


class ResponseCache:
    """In-memory response cache with optional JSON persistence.

    Off by default at the gateway level: replay correctness requires each
    recorded exchange to be served verbatim, and a cache would fold repeated
    prompts into one response.
    """

    def __init__(self, path=None):
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()
        self._path = path
        if path is not None:
            from pathlib import Path
            p = Path(path)
            if p.exists():
                self._entries.update(json.loads(p.read_text(encoding="utf-8")))

    @staticmethod
    def key(provider_id: str, prompt_sha256: str, params: CompletionParams) -> str:
        blob = "\x1f".join([
            provider_id,
            prompt_sha256,
            repr(params.temperature),
            str(params.max_tokens),
            str(params.seed_hint),
        ])
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def get(self, key: str) -> Optional[str]:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, raw_text: str) -> None:
        with self._lock:
            self._entries[key] = raw_text
            if self._path is not None:
                from pathlib import Path
                p = Path(self._path)
                p.parent.mkdir(parents=True, exist_ok=True)
                p.write_text(json.dumps(self._entries, ensure_ascii=False,
                                        indent=2, sort_keys=True),
                             encoding="utf-8")

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


class RateLimiter:
    """Sliding-window limiter: at most ``max_requests`` per ``interval_s``.

    Clock and sleep are injectable so tests can drive time explicitly.
    """

    def __init__(self, max_requests: int, interval_s: float, *,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if max_requests <= 0:
            raise ConfigInvalid(f"max_requests must be positive, got {max_requests}")
        if interval_s <= 0:
            raise ConfigInvalid(f"interval_s must be positive, got {interval_s}")
        self.max_requests = max_requests
        self.interval_s = interval_s
        self._clock = clock
        self._sleep = sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._stamps and now - self._stamps[0] >= self.interval_s:
                    self._stamps.popleft()
                if len(self._stamps) < self.max_requests:
                    self._stamps.append(now)
                    return
                wait = self.interval_s - (now - self._stamps[0])
            self._sleep(max(wait, 1e-9))


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base_s: float = 1.0
    backoff_factor: float = 2.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ConfigInvalid(f"max_attempts must be >= 1, got {self.max_attempts}")


class Gateway:
    def __init__(self, providers: Iterable[Provider] = (), *,
                 cache: Optional[ResponseCache] = None,
                 limiter: Optional[RateLimiter] = None,
                 retry: RetryPolicy = RetryPolicy(),
                 sleep: Callable[[float], None] = time.sleep):
        self._providers: dict[str, Provider] = {}
        for p in providers:
            self.register(p)
        self._cache = cache
        self._limiter = limiter
        self._retry = retry
        self._sleep = sleep

    def register(self, provider: Provider) -> None:
        self._providers[provider.provider_id] = provider

    def complete(self, request: CompletionRequest, *,
                 provider: Optional[Provider] = None,
                 recorder: Optional[TranscriptRecorder] = None) -> CompletionResult:
        if provider is None:
            provider = self._providers.get(request.provider_id)
        if provider is None:
            raise ProviderUnavailable(
                f"no provider registered under id {request.provider_id!r}")
        if request.params.max_tokens > provider.context_limit:
            raise ConfigInvalid(
                f"max_tokens {request.params.max_tokens} exceeds provider "
                f"context limit {provider.context_limit}")

        prompt_hash = request.prompt.sha256()
        cache_key = ResponseCache.key(request.provider_id, prompt_hash,
                                      request.params)
        if self._cache is not None:
            hit = self._cache.get(cache_key)
            if hit is not None:
                result = CompletionResult(raw_text=hit,
                                          provider_id=request.provider_id,
                                          attempt_count=1, cache_hit=True,
                                          latency_ms=0.0)
                self._record(request, result, recorder)
                return result

        attempt = 0
        delay = self._retry.backoff_base_s
        while True:
            attempt += 1
            if self._limiter is not None:
                self._limiter.acquire()
            started = time.perf_counter()
            try:
                raw_text = provider.complete_text(request.prompt.text,
                                                  request.params)
            except TransientProviderError as exc:
                if attempt >= self._retry.max_attempts:
                    raise ProviderUnavailable(
                        f"{request.provider_id}: gave up after {attempt} "
                        f"attempts: {exc}") from exc
                self._sleep(delay)
                delay *= self._retry.backoff_factor
                continue
            latency_ms = (time.perf_counter() - started) * 1000.0
            result = CompletionResult(raw_text=raw_text,
                                      provider_id=request.provider_id,
                                      attempt_count=attempt,
                                      cache_hit=provider.serves_recorded,
                                      latency_ms=latency_ms)
            if self._cache is not None:
                self._cache.put(cache_key, raw_text)
            self._record(request, result, recorder)
            return result

    @staticmethod
    def _record(request: CompletionRequest, result: CompletionResult,
                recorder: Optional[TranscriptRecorder]) -> None:
        if recorder is None:
            return
        recorder.add(ExchangeRecord(
            prompt_sha256=request.prompt.sha256(),
            prompt_text=request.prompt.text,
            template_id=request.prompt.template_id.value,
            provider_id=request.provider_id,
            params=request.params.to_record(),
            raw_text=result.raw_text,
            attempt_count=result.attempt_count,
            cache_hit=result.cache_hit,
            latency_ms=result.latency_ms,
        ))
