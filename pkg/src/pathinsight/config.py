"""Run configuration (a single JSON document) and gateway construction from it.

Secrets never live in the file: a live endpoint reads its key from the
environment variable named by ``key_env`` (default ``INSIGHT_API_KEY_<NAME>``).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .gateway import (
    REPLAY_MODES,
    Backend,
    CachedSearch,
    FixtureSearch,
    Gateway,
    LiveBackend,
    LiveSearch,
    NullSearch,
    ReplayBackend,
    ReplayCache,
)
from .evaluation import GEVAL_JUDGES, NOVELTY_JUDGES
from .mocks import mock_from_config
from .pipeline import MODES, AgentConfig

CACHE_ENV = "INSIGHT_CACHE_DIR"
BACKENDS = ("live", "mock")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    name: str
    backend: str = "live"
    base_url: str = ""
    model: str = ""
    key_env: str = ""
    max_in_flight: int = 4
    options: Mapping[str, Any] = field(default_factory=dict)

    @property
    def api_key_env(self) -> str:
        return self.key_env or f"INSIGHT_API_KEY_{self.name.upper().replace('-', '_')}"


@dataclass(frozen=True)
class RunConfig:
    run_id: str
    dataset: Path | None
    mode: str
    agent: AgentConfig
    endpoints: Mapping[str, EndpointConfig]
    search: Mapping[str, Any]
    geval_judges: tuple[str, ...] = ()
    novelty_judges: tuple[str, ...] = ()
    quality_judge: str | None = None
    cache_dir: Path | None = None
    parallelism: int = 1
    output_dir: Path = Path("out")
    prompts_dir: Path | None = None
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def public_dict(self) -> dict[str, Any]:
        """What gets copied into predictions: no paths that vary by machine."""
        return {
            "mode": self.mode,
            "agent": self.agent.to_dict(),
            "endpoints": {
                n: {"backend": e.backend, "model": e.model or n} for n, e in sorted(self.endpoints.items())
            },
        }


def _path(base: Path, value: Any) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(str(value)).expanduser()
    return p if p.is_absolute() else (base / p)


def parse_config(doc: Mapping[str, Any], base_dir: str | Path = ".") -> RunConfig:
    base = Path(base_dir)
    if not isinstance(doc, Mapping):
        raise ConfigError("config: expected a JSON object")
    try:
        agent = AgentConfig.from_dict(doc.get("agent", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.agent: {exc}") from exc

    mode = doc.get("mode", "agent")
    if mode not in MODES:
        raise ConfigError(f"config.mode must be one of {MODES}")

    endpoints: dict[str, EndpointConfig] = {}
    for name, spec in (doc.get("endpoints") or {}).items():
        if not isinstance(spec, Mapping):
            raise ConfigError(f"config.endpoints.{name}: expected an object")
        backend = spec.get("backend", "live")
        if backend not in BACKENDS:
            raise ConfigError(f"config.endpoints.{name}.backend must be one of {BACKENDS}")
        if backend == "live" and not spec.get("base_url"):
            raise ConfigError(f"config.endpoints.{name}: live endpoint needs base_url")
        endpoints[name] = EndpointConfig(
            name=name,
            backend=backend,
            base_url=spec.get("base_url", ""),
            model=spec.get("model", ""),
            key_env=spec.get("key_env", ""),
            max_in_flight=int(spec.get("max_in_flight", 4)),
            options={k: v for k, v in spec.items() if k not in ("backend", "base_url", "model", "key_env")},
        )

    judges = doc.get("judges") or {}
    geval = tuple(judges.get("geval", ()))
    novelty = tuple(judges.get("novelty", ()))
    if geval and len(geval) != GEVAL_JUDGES:
        raise ConfigError(f"config.judges.geval must list exactly {GEVAL_JUDGES} endpoints, got {len(geval)}")
    if novelty and len(novelty) != NOVELTY_JUDGES:
        raise ConfigError(
            f"config.judges.novelty must list exactly {NOVELTY_JUDGES} endpoints, got {len(novelty)}"
        )
    quality = judges.get("quality")

    referenced = set(geval) | set(novelty) | ({quality} if quality else set())
    if "agent" in doc:
        referenced |= {agent.backbone, agent.analysis}
    missing = sorted(r for r in referenced if r not in endpoints)
    if missing:
        raise ConfigError(f"config: endpoint(s) not defined: {', '.join(missing)}")

    parallelism = int(doc.get("parallelism", 1))
    if parallelism < 1:
        raise ConfigError("config.parallelism must be >= 1")

    search = dict(doc.get("search") or {"backend": "none"})
    if search.get("backend") == "fixture":
        search["path"] = _path(base, search.get("path"))
        if search["path"] is None:
            raise ConfigError("config.search: fixture backend needs a path")
    elif search.get("backend") == "live":
        if not search.get("url"):
            raise ConfigError("config.search: live backend needs a url")
    elif search.get("backend") not in ("none", None):
        raise ConfigError("config.search.backend must be one of live, fixture, none")

    cache_dir = _path(base, doc.get("cache_dir")) or _path(Path.cwd(), os.environ.get(CACHE_ENV))
    return RunConfig(
        run_id=str(doc.get("run_id") or "run"),
        dataset=_path(base, doc.get("dataset")),
        mode=mode,
        agent=agent,
        endpoints=endpoints,
        search=search,
        geval_judges=geval,
        novelty_judges=novelty,
        quality_judge=quality,
        cache_dir=cache_dir,
        parallelism=parallelism,
        output_dir=_path(base, doc.get("output_dir", "out")) or base / "out",
        prompts_dir=_path(base, doc.get("prompts_dir")),
        raw=dict(doc),
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return parse_config(doc, path.parent)


def _endpoint_backend(ep: EndpointConfig) -> Backend:
    if ep.backend == "mock":
        return mock_from_config(ep.options | {"model": ep.model or None}, ep.name)
    return LiveBackend.from_env(ep.name, ep.base_url, ep.model or ep.name, ep.api_key_env)


def build_gateway(cfg: RunConfig, replay: str | None = None) -> Gateway:
    """Gateway for ``cfg``; ``replay`` is None, "record" or "replay"."""
    cache = None
    if replay is not None:
        if replay not in REPLAY_MODES:
            raise ConfigError(f"replay mode must be one of {REPLAY_MODES}")
        if cfg.cache_dir is None:
            raise ConfigError(f"--{replay} needs cache_dir in the config or {CACHE_ENV}")
        cache = ReplayCache(cfg.cache_dir)

    backends: dict[str, Backend] = {}
    for name, ep in cfg.endpoints.items():
        backend = _endpoint_backend(ep) if replay != "replay" else None
        backends[name] = ReplayBackend(cache, backend, replay) if cache is not None else backend

    kind = cfg.search.get("backend", "none")
    if kind == "fixture":
        search: Any = FixtureSearch.from_file(cfg.search["path"])
    elif kind == "live":
        search = LiveSearch.from_env(cfg.search["url"], cfg.search.get("key_env", "INSIGHT_API_KEY_SEARCH"))
    else:
        search = NullSearch()
    if cache is not None and kind != "none":
        search = CachedSearch(cache, search if replay == "record" else None, replay)

    limits = {name: ep.max_in_flight for name, ep in cfg.endpoints.items()}
    return Gateway(backends, search=search, max_in_flight=limits)
