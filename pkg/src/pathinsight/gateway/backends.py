"""Model backends: scripted mock, live chat-completions over HTTP, record/replay cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence, Union

import httpx

from ..textmetrics import tokenize
from .errors import ConfigurationError, ProviderError, ReplayMiss, RetriesExhausted
from .messages import GatewayRequest, GatewayResponse, ImagePart, Usage, canonical_hash, canonical_json

log = logging.getLogger(__name__)

DEFAULT_RETRIES = 3
DEFAULT_BACKOFF = (1.0, 2.0, 4.0)


class Backend(Protocol):
    def send(self, req: GatewayRequest) -> GatewayResponse: ...


# --------------------------------------------------------------------------
# mock
# --------------------------------------------------------------------------

Responder = Callable[[GatewayRequest, "re.Match[str] | None"], str]
ResponseSpec = Union[str, Sequence[str], Responder]


@dataclass
class MockRule:
    """Answers requests whose prompt text matches ``pattern``.

    ``response`` is a fixed string, a list consumed in order (the last entry
    repeats once exhausted), or a callable ``(request, match) -> str``.
    """

    pattern: str
    response: ResponseSpec
    _pattern: re.Pattern = field(init=False, repr=False)
    _served: int = field(default=0, init=False, repr=False)

    def __post_init__(self) -> None:
        self._pattern = re.compile(self.pattern, re.DOTALL)

    def match(self, text: str) -> "re.Match[str] | None":
        return self._pattern.search(text)

    def render(self, req: GatewayRequest, m: "re.Match[str] | None") -> str:
        if callable(self.response):
            return self.response(req, m)
        if isinstance(self.response, str):
            return self.response
        seq = list(self.response)
        out = seq[min(self._served, len(seq) - 1)]
        self._served += 1
        return out


class MockBackend:
    """Scripted backend for tests; rules are tried in order, first match wins."""

    def __init__(
        self,
        rules: Sequence[MockRule | tuple[str, ResponseSpec]] = (),
        default: ResponseSpec | None = None,
        model_id: str | None = None,
    ):
        self.rules = [r if isinstance(r, MockRule) else MockRule(*r) for r in rules]
        self.default = MockRule(r"", default) if default is not None else None
        self.model_id = model_id
        self.calls: list[GatewayRequest] = []
        self._lock = threading.Lock()

    def send(self, req: GatewayRequest) -> GatewayResponse:
        text = req.prompt_text()
        with self._lock:
            self.calls.append(req)
            for rule in self.rules:
                m = rule.match(text)
                if m is not None:
                    out = rule.render(req, m)
                    break
            else:
                if self.default is None:
                    raise ProviderError(f"mock has no rule matching request to {req.model_id!r}")
                out = self.default.render(req, None)
        return GatewayResponse(
            text=out,
            model_id=self.model_id or req.model_id,
            usage=Usage(len(tokenize(text)), len(tokenize(out))),
        )


# --------------------------------------------------------------------------
# live HTTP
# --------------------------------------------------------------------------


class TransientError(Exception):
    pass


def chat_completions_payload(req: GatewayRequest, model: str) -> dict[str, Any]:
    messages = []
    for m in req.messages:
        content: list[dict[str, Any]] = []
        for p in m.parts:
            if isinstance(p, ImagePart):
                content.append({"type": "image_url", "image_url": {"url": p.data_url()}})
            else:
                content.append({"type": "text", "text": p.text})
        messages.append({"role": m.role, "content": content})
    payload: dict[str, Any] = {
        "model": model,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }
    if req.response_format == "json_object":
        payload["response_format"] = {"type": "json_object"}
    return payload


def completions_url(base_url: str) -> str:
    base = base_url.rstrip("/")
    if base.endswith("/chat/completions"):
        return base
    if base.endswith("/v1"):
        return base + "/chat/completions"
    return base + "/v1/chat/completions"


def call_with_retries(
    fn: Callable[[], Any],
    retries: int,
    backoff: Sequence[float],
    sleep: Callable[[float], None],
    what: str,
) -> Any:
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            return fn()
        except (TransientError, httpx.TransportError) as exc:
            last = exc
            if attempt == retries:
                break
            delay = backoff[min(attempt, len(backoff) - 1)] if backoff else 0.0
            log.warning("%s: transient failure (%s); retry %d/%d in %.1fs", what, exc, attempt + 1, retries, delay)
            sleep(delay)
    raise RetriesExhausted(f"{what}: exhausted {retries} retries: {last}")


class LiveBackend:
    """OpenAI-compatible ``/v1/chat/completions`` client."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        retries: int = DEFAULT_RETRIES,
        backoff: Sequence[float] = DEFAULT_BACKOFF,
        sleep: Callable[[float], None] = time.sleep,
        client: httpx.Client | None = None,
    ):
        self.url = completions_url(base_url)
        self.model = model
        self.api_key = api_key
        self.retries = retries
        self.backoff = tuple(backoff)
        self.sleep = sleep
        self.client = client or httpx.Client(timeout=timeout)

    @classmethod
    def from_env(cls, name: str, base_url: str, model: str, key_env: str | None = None, **kw: Any) -> "LiveBackend":
        key_env = key_env or f"INSIGHT_API_KEY_{name.upper().replace('-', '_')}"
        return cls(base_url, model, os.environ.get(key_env), **kw)

    def send(self, req: GatewayRequest) -> GatewayResponse:
        payload = chat_completions_payload(req, self.model)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        def attempt() -> httpx.Response:
            resp = self.client.post(self.url, json=payload, headers=headers)
            if resp.status_code == 429 or resp.status_code >= 500:
                raise TransientError(f"HTTP {resp.status_code}")
            return resp

        resp = call_with_retries(attempt, self.retries, self.backoff, self.sleep, f"POST {self.url}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise ProviderError(f"non-JSON response body: {resp.text[:200]}", resp.status_code) from exc
        if resp.status_code >= 400 or (isinstance(body, dict) and body.get("error")):
            err = body.get("error") if isinstance(body, dict) else body
            msg = err.get("message", str(err)) if isinstance(err, dict) else str(err)
            raise ProviderError(msg, resp.status_code)
        try:
            message = body["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed completion payload: {str(body)[:200]}") from exc
        content = message.get("content")
        if isinstance(content, list):
            content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
        usage = body.get("usage") or {}
        return GatewayResponse(
            text=content or "",
            model_id=body.get("model", self.model),
            usage=Usage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
        )


# --------------------------------------------------------------------------
# record / replay
# --------------------------------------------------------------------------


class ReplayCache:
    """Content-addressed store: one JSON file per key under ``root``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def get(self, key: str) -> dict[str, Any] | None:
        path = self.path(key)
        if not path.is_file():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def put(self, key: str, doc: dict[str, Any]) -> Path:
        path = self.path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False))
        os.replace(tmp, path)
        return path


REPLAY_MODES = ("record", "replay")


class ReplayBackend:
    """Wraps another backend with the on-disk cache.

    ``record``: serve hits from cache, forward misses and store the result.
    ``replay``: cache only; a miss raises ReplayMiss.
    """

    def __init__(self, cache: ReplayCache, inner: Backend | None = None, mode: str = "replay"):
        if mode not in REPLAY_MODES:
            raise ConfigurationError(f"unknown replay mode {mode!r}")
        if mode == "record" and inner is None:
            raise ConfigurationError("record mode needs an underlying backend")
        self.cache = cache
        self.inner = inner
        self.mode = mode

    def send(self, req: GatewayRequest) -> GatewayResponse:
        key = canonical_hash(req)
        with self.cache.lock(key):
            hit = self.cache.get(key)
            if hit is not None:
                return GatewayResponse.from_dict(hit["response"], from_cache=True)
            if self.mode == "replay":
                raise ReplayMiss(key)
            resp = self.inner.send(req)
            self.cache.put(key, {"hash": key, "request": req.to_dict(), "response": resp.to_dict()})
        return resp


def cache_key(doc: Any) -> str:
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()
