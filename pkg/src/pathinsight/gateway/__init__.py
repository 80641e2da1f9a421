from .backends import (
    Backend,
    LiveBackend,
    MockBackend,
    MockRule,
    REPLAY_MODES,
    ReplayBackend,
    ReplayCache,
    chat_completions_payload,
)
from .core import Gateway, parse_json_object, parse_score, parse_verdict
from .errors import (
    ConfigurationError,
    GatewayError,
    JudgeFormatError,
    ProviderError,
    ReplayMiss,
    RetriesExhausted,
)
from .messages import (
    GatewayRequest,
    GatewayResponse,
    ImagePart,
    Message,
    TextPart,
    Usage,
    canonical_hash,
)
from .search import CachedSearch, FixtureSearch, LiveSearch, NullSearch, RetrievedDoc, web_retrieve

__all__ = [
    "Backend",
    "CachedSearch",
    "ConfigurationError",
    "FixtureSearch",
    "Gateway",
    "GatewayError",
    "GatewayRequest",
    "GatewayResponse",
    "ImagePart",
    "JudgeFormatError",
    "LiveBackend",
    "LiveSearch",
    "Message",
    "MockBackend",
    "MockRule",
    "NullSearch",
    "ProviderError",
    "REPLAY_MODES",
    "ReplayBackend",
    "ReplayCache",
    "ReplayMiss",
    "RetrievedDoc",
    "RetriesExhausted",
    "TextPart",
    "Usage",
    "canonical_hash",
    "chat_completions_payload",
    "parse_json_object",
    "parse_score",
    "parse_verdict",
    "web_retrieve",
]
