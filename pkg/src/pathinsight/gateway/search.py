"""Web retrieval: live HTTP search API, local fixture file, and a cached wrapper."""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx

from .backends import DEFAULT_BACKOFF, DEFAULT_RETRIES, ReplayCache, TransientError, call_with_retries, cache_key
from .errors import GatewayError, ProviderError, ReplayMiss

MAX_DOCS = 10


@dataclass(frozen=True)
class RetrievedDoc:
    title: str
    snippet: str
    url: str
    rank: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class SearchBackend(Protocol):
    def search(self, keywords: Sequence[str]) -> list[dict[str, Any]]: ...


def _normalize_hit(hit: Any) -> dict[str, str]:
    if not isinstance(hit, Mapping):
        raise ProviderError(f"search hit is not an object: {hit!r}")
    return {
        "title": str(hit.get("title", "")),
        "snippet": str(hit.get("snippet", "")),
        "url": str(hit.get("url", "")),
    }


class FixtureSearch:
    """Canned documents keyed by keyword (case-insensitive), read from JSON.

    Documents for every keyword are concatenated in keyword order and
    de-duplicated by URL.
    """

    def __init__(self, docs: Mapping[str, Sequence[Mapping[str, Any]]]):
        self.docs = {k.lower(): [_normalize_hit(d) for d in v] for k, v in docs.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureSearch":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def search(self, keywords: Sequence[str]) -> list[dict[str, Any]]:
        out: list[dict[str, Any]] = []
        seen: set[str] = set()
        for kw in keywords:
            for doc in self.docs.get(kw.lower(), []):
                key = doc["url"] or doc["title"]
                if key in seen:
                    continue
                seen.add(key)
                out.append(doc)
        return out


class LiveSearch:
    """GET ``url?q=<keywords>`` returning a JSON list of {title, snippet, url}.

    A top-level object with a ``results`` list is accepted as well.
    """

    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        *,
        query_param: str = "q",
        timeout: float = 30.0,
        retries: int = DEFAULT_RETRIES,
        backoff: Sequence[float] = DEFAULT_BACKOFF,
        sleep: Callable[[float], None] = time.sleep,
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.api_key = api_key
        self.query_param = query_param
        self.retries = retries
        self.backoff = tuple(backoff)
        self.sleep = sleep
        self.client = client or httpx.Client(timeout=timeout)

    @classmethod
    def from_env(cls, url: str, key_env: str = "INSIGHT_API_KEY_SEARCH", **kw: Any) -> "LiveSearch":
        return cls(url, os.environ.get(key_env), **kw)

    def search(self, keywords: Sequence[str]) -> list[dict[str, Any]]:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        params = {self.query_param: " ".join(keywords)}

        def attempt() -> httpx.Response:
            resp = self.client.get(self.url, params=params, headers=headers)
            if resp.status_code == 429 or resp.status_code >= 500:
                raise TransientError(f"HTTP {resp.status_code}")
            return resp

        resp = call_with_retries(attempt, self.retries, self.backoff, self.sleep, f"GET {self.url}")
        if resp.status_code >= 400:
            raise ProviderError(resp.text[:200], resp.status_code)
        body = resp.json()
        if isinstance(body, dict):
            body = body.get("results", [])
        if not isinstance(body, list):
            raise ProviderError(f"unexpected search payload: {str(body)[:200]}")
        return [_normalize_hit(h) for h in body]


class CachedSearch:
    """Record/replay wrapper keyed by the keyword list, same semantics as ReplayBackend."""

    def __init__(self, cache: ReplayCache, inner: SearchBackend | None = None, mode: str = "replay"):
        self.cache = cache
        self.inner = inner
        self.mode = mode

    def search(self, keywords: Sequence[str]) -> list[dict[str, Any]]:
        key = cache_key({"search": list(keywords)})
        with self.cache.lock(key):
            hit = self.cache.get(key)
            if hit is not None:
                return hit["results"]
            if self.mode == "replay" or self.inner is None:
                raise ReplayMiss(key)
            results = self.inner.search(keywords)
            self.cache.put(key, {"hash": key, "keywords": list(keywords), "results": results})
        return results


class NullSearch:
    """No retrieval configured: every query returns nothing."""

    def search(self, keywords: Sequence[str]) -> list[dict[str, Any]]:
        return []


def web_retrieve(backend: SearchBackend, keywords: Sequence[str]) -> list[RetrievedDoc]:
    keywords = [k.strip() for k in keywords if k and k.strip()]
    if not keywords:
        raise GatewayError("web_retrieve needs at least one keyword")
    hits = backend.search(keywords)[:MAX_DOCS]
    return [RetrievedDoc(rank=i, **_normalize_hit(h)) for i, h in enumerate(hits, start=1)]
