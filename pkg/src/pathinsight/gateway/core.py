"""Gateway facade: endpoint routing, judge helpers, structured-output parsing."""

from __future__ import annotations

import json
import re
import threading
import time
from typing import Any, Callable, Iterable, Mapping, Sequence

from .backends import Backend
from .errors import ConfigurationError, GatewayError, JudgeFormatError
from .messages import GatewayRequest, GatewayResponse, Message, Part, as_part
from .search import NullSearch, RetrievedDoc, SearchBackend, web_retrieve

DEFAULT_MAX_IN_FLIGHT = 4

# called as observe(request, response, seconds) after every judge round-trip
Observer = Callable[[GatewayRequest, GatewayResponse, float], None]

SCORE_REMINDER = (
    "Your previous reply could not be read as a score. "
    "Reply with a single integer from 1 to 10 and nothing else."
)
VERDICT_REMINDER = (
    "Your previous reply did not end with a verdict. "
    "Finish with a final line of the form 'Verdict: 1' (correct) or 'Verdict: 0' (incorrect)."
)

_INT = re.compile(r"(?<![\d.])(\d+)(?![\d.])")
_VERDICT = re.compile(r"verdict\s*[:=]?\s*\**\s*(1|0|yes|no|correct|incorrect|accept|reject)\b", re.IGNORECASE)
_BARE_VERDICT = re.compile(r"^\W*(1|0|yes|no|correct|incorrect|accept|reject)\W*$", re.IGNORECASE)
_POSITIVE = {"1", "yes", "correct", "accept"}


def parse_score(text: str) -> int | None:
    """First standalone integer in 1..10, or None."""
    for m in _INT.finditer(text or ""):
        value = int(m.group(1))
        if 1 <= value <= 10:
            return value
    return None


def parse_verdict(text: str) -> bool | None:
    """The last 'Verdict: x' line, or a bare yes/no/1/0 reply."""
    text = text or ""
    found = _VERDICT.findall(text)
    if found:
        return found[-1].lower() in _POSITIVE
    m = _BARE_VERDICT.match(text.strip())
    if m:
        return m.group(1).lower() in _POSITIVE
    return None


def parse_json_object(text: str) -> Any:
    """Decode a JSON value from model output, tolerating code fences and chatter."""
    text = (text or "").strip()
    fence = re.search(r"```(?:json)?\s*(.*?)```", text, re.DOTALL)
    if fence:
        text = fence.group(1).strip()
    try:
        return json.loads(text)
    except ValueError:
        pass
    for open_, close in (("{", "}"), ("[", "]")):
        start, end = text.find(open_), text.rfind(close)
        if start != -1 and end > start:
            try:
                return json.loads(text[start : end + 1])
            except ValueError:
                continue
    raise ValueError("no JSON value found")


class Gateway:
    """Routes requests to per-endpoint backends with a bounded in-flight count."""

    def __init__(
        self,
        backends: Mapping[str, Backend],
        search: SearchBackend | None = None,
        max_in_flight: int | Mapping[str, int] = DEFAULT_MAX_IN_FLIGHT,
    ):
        self.backends = dict(backends)
        self.search = search or NullSearch()
        limits = max_in_flight if isinstance(max_in_flight, Mapping) else {}
        default = max_in_flight if isinstance(max_in_flight, int) else DEFAULT_MAX_IN_FLIGHT
        self._slots = {
            name: threading.BoundedSemaphore(max(1, int(limits.get(name, default)))) for name in self.backends
        }

    def backend(self, name: str) -> Backend:
        try:
            return self.backends[name]
        except KeyError:
            raise ConfigurationError(f"no endpoint configured for {name!r}") from None

    def complete(self, req: GatewayRequest) -> GatewayResponse:
        backend = self.backend(req.model_id)
        with self._slots[req.model_id]:
            resp = backend.send(req)
        if resp.text is None:
            raise GatewayError(f"{req.model_id}: response carried no text")
        return resp

    def _observed(self, req: GatewayRequest, observe: Observer | None) -> str:
        start = time.perf_counter()
        resp = self.complete(req)
        if observe is not None:
            observe(req, resp, time.perf_counter() - start)
        return resp.text

    def web_retrieve(self, keywords: Sequence[str]) -> list[RetrievedDoc]:
        return web_retrieve(self.search, keywords)

    def _judge_request(
        self, judge_id: str, rubric: str, context: Iterable[str | bytes | Part], max_tokens: int
    ) -> GatewayRequest:
        return GatewayRequest(
            model_id=judge_id,
            messages=(
                Message.of("system", rubric),
                Message("user", tuple(as_part(p) for p in context)),
            ),
            temperature=0.0,
            max_tokens=max_tokens,
        )

    def judge_score(
        self,
        judge_id: str,
        rubric: str,
        context: Iterable[str | bytes | Part],
        max_tokens: int = 256,
        observe: Observer | None = None,
    ) -> int:
        """Ask a judge for an integer score in 1..10; one re-ask on a bad format."""
        req = self._judge_request(judge_id, rubric, context, max_tokens)
        first = self._observed(req, observe)
        score = parse_score(first)
        if score is not None:
            return score
        retry = req.with_messages([Message.of("assistant", first), Message.of("user", SCORE_REMINDER)])
        second = self._observed(retry, observe)
        score = parse_score(second)
        if score is None:
            raise JudgeFormatError(judge_id, second)
        return score

    def judge_verdict(
        self,
        judge_id: str,
        rubric: str,
        context: Iterable[str | bytes | Part],
        max_tokens: int = 1024,
        observe: Observer | None = None,
    ) -> tuple[bool, str]:
        """Binary judgement (after free-form reasoning); returns (verdict, raw text)."""
        req = self._judge_request(judge_id, rubric, context, max_tokens)
        first = self._observed(req, observe)
        verdict = parse_verdict(first)
        if verdict is not None:
            return verdict, first
        retry = req.with_messages([Message.of("assistant", first), Message.of("user", VERDICT_REMINDER)])
        second = self._observed(retry, observe)
        verdict = parse_verdict(second)
        if verdict is None:
            raise JudgeFormatError(judge_id, second)
        return verdict, second
