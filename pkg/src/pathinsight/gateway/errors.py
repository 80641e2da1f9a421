class GatewayError(RuntimeError):
    """Base class for model/search access failures."""


class RetriesExhausted(GatewayError):
    pass


class ProviderError(GatewayError):
    """The provider answered with an error payload; ``message`` is theirs."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(f"provider error{f' (HTTP {status})' if status else ''}: {message}")
        self.provider_message = message
        self.status = status


class ReplayMiss(GatewayError):
    def __init__(self, request_hash: str):
        super().__init__(f"replay cache miss: {request_hash}")
        self.request_hash = request_hash


class JudgeFormatError(GatewayError):
    def __init__(self, judge_id: str, raw: str):
        super().__init__(f"judge format violation from {judge_id!r}: {raw[:200]!r}")
        self.judge_id = judge_id
        self.raw = raw


class ConfigurationError(GatewayError):
    pass
