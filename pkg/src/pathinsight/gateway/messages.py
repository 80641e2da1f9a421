"""Provider-agnostic request/response envelopes and their canonical hash."""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Union

ROLES = ("system", "user", "assistant")
RESPONSE_FORMATS = ("free_text", "json_object")


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    png: bytes

    def data_url(self) -> str:
        return "data:image/png;base64," + base64.b64encode(self.png).decode("ascii")


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class Message:
    role: str
    parts: tuple[Part, ...]

    @classmethod
    def of(cls, role: str, *parts: str | bytes | Part) -> "Message":
        return cls(role, tuple(as_part(p) for p in parts))

    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))


def as_part(value: str | bytes | Part) -> Part:
    if isinstance(value, (TextPart, ImagePart)):
        return value
    if isinstance(value, bytes):
        return ImagePart(value)
    return TextPart(str(value))


@dataclass(frozen=True)
class GatewayRequest:
    """One model call. ``model_id`` names a configured endpoint."""

    model_id: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    response_format: str = "free_text"

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        # 0 and 0.0 must hash identically
        object.__setattr__(self, "temperature", float(self.temperature))
        object.__setattr__(self, "max_tokens", int(self.max_tokens))
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("request needs at least one user message")
        for m in self.messages:
            if m.role not in ROLES:
                raise ValueError(f"unknown role {m.role!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.response_format not in RESPONSE_FORMATS:
            raise ValueError(f"unknown response_format {self.response_format!r}")

    def prompt_text(self) -> str:
        """All text parts joined, used by mock matchers."""
        return "\n".join(m.text() for m in self.messages)

    def images(self) -> list[bytes]:
        return [p.png for m in self.messages for p in m.parts if isinstance(p, ImagePart)]

    def with_messages(self, extra: Iterable[Message]) -> "GatewayRequest":
        return GatewayRequest(
            model_id=self.model_id,
            messages=self.messages + tuple(extra),
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            response_format=self.response_format,
        )

    def to_dict(self) -> dict[str, Any]:
        messages = []
        for m in self.messages:
            parts: list[dict[str, str]] = []
            for p in m.parts:
                if isinstance(p, TextPart):
                    parts.append({"type": "text", "text": p.text})
                else:
                    parts.append({"type": "image", "png_base64": base64.b64encode(p.png).decode("ascii")})
            messages.append({"role": m.role, "parts": parts})
        return {
            "model_id": self.model_id,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "response_format": self.response_format,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "GatewayRequest":
        messages = []
        for m in doc["messages"]:
            parts: list[Part] = []
            for p in m["parts"]:
                if p["type"] == "text":
                    parts.append(TextPart(p["text"]))
                elif p["type"] == "image":
                    parts.append(ImagePart(base64.b64decode(p["png_base64"])))
                else:
                    raise ValueError(f"unknown part type {p['type']!r}")
            messages.append(Message(m["role"], tuple(parts)))
        return cls(
            model_id=doc["model_id"],
            messages=tuple(messages),
            temperature=float(doc.get("temperature", 0.0)),
            max_tokens=int(doc.get("max_tokens", 1024)),
            response_format=doc.get("response_format", "free_text"),
        )


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class GatewayResponse:
    text: str
    model_id: str
    usage: Usage = field(default_factory=Usage)
    from_cache: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "model_id": self.model_id,
            "usage": {
                "prompt_tokens": self.usage.prompt_tokens,
                "completion_tokens": self.usage.completion_tokens,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any], from_cache: bool = False) -> "GatewayResponse":
        usage = doc.get("usage") or {}
        return cls(
            text=doc["text"],
            model_id=doc["model_id"],
            usage=Usage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
            from_cache=from_cache,
        )


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def canonical_hash(req: GatewayRequest | dict[str, Any]) -> str:
    """SHA-256 of the request's canonical JSON form (sorted keys, no whitespace).

    Accepts either a request or its dict form; dicts are round-tripped through
    GatewayRequest so defaults and number types are normalized first.
    """
    if isinstance(req, dict):
        req = GatewayRequest.from_dict(req)
    return hashlib.sha256(canonical_json(req.to_dict()).encode("utf-8")).hexdigest()
