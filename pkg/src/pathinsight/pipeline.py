"""Multi-agent insight discovery over one pathology image and goal.

Stage 1 reads the image (features and keywords), retrieves reference
documents once, and writes ``m`` root questions. Stage 2 extracts
question-specific evidence with the image-analysis model and turns it into an
answer plus insight. Stage 3 proposes ``n`` follow-up candidates from the
latest question/answer of each root chain, scores them with the backbone and
sends the best one back through Stage 2. Stage 3 runs ``p`` rounds, so a case
yields ``m * (p + 1)`` insights.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Sequence, TypeVar

from .dataset import BenchmarkCase, DatasetManifest
from .gateway import Gateway, GatewayRequest, Message, RetrievedDoc, canonical_hash, parse_json_object
from .prompts import PromptSet

log = logging.getLogger(__name__)

T = TypeVar("T")

ORIGINS = ("root", "followup")

SELECTOR_RUBRIC = "You are a careful reviewer of analytical questions. Answer with an integer score only."


class PipelineError(RuntimeError):
    """A stage failed; ``trace`` holds everything logged up to the failure."""

    trace: "PipelineTrace | None" = None


class MalformedOutput(PipelineError):
    def __init__(self, detail: str = ""):
        super().__init__("malformed model output" + (f": {detail}" if detail else ""))


class CountMismatch(PipelineError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"question count mismatch: expected {expected}, got {got}")


class EmptyEvidence(PipelineError):
    def __init__(self) -> None:
        super().__init__("empty evidence")


class NoInsights(PipelineError):
    def __init__(self) -> None:
        super().__init__("no insights produced")


@dataclass(frozen=True)
class AgentConfig:
    root_question_count: int = 3
    candidate_count: int = 3
    depth: int = 3
    backbone: str = "backbone"
    analysis: str = "analysis"
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.root_question_count < 1:
            raise ValueError("root_question_count must be >= 1")
        if self.candidate_count < 1:
            raise ValueError("candidate_count must be >= 1")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @property
    def insights_per_case(self) -> int:
        return self.root_question_count * (self.depth + 1)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "AgentConfig":
        aliases = {"m": "root_question_count", "n": "candidate_count", "p": "depth"}
        known = set(cls.__dataclass_fields__)
        kwargs = {}
        for key, value in doc.items():
            key = aliases.get(key, key)
            if key not in known:
                raise ValueError(f"unknown agent option {key!r}")
            kwargs[key] = value
        return cls(**kwargs)


@dataclass(frozen=True)
class ImageSummary:
    features: str
    keywords: tuple[str, ...]


@dataclass(frozen=True)
class RootQuestion:
    index: int
    text: str


@dataclass(frozen=True)
class ImageEvidence:
    question_index: int
    findings: str


@dataclass(frozen=True)
class InsightRecord:
    question: str
    answer: str
    insight_text: str
    origin: str
    depth: int
    parent_root_index: int

    def __post_init__(self) -> None:
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}")
        if (self.depth == 0) != (self.origin == "root"):
            raise ValueError("depth is 0 exactly for root records")
        if not self.insight_text.strip():
            raise ValueError("insight_text must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "answer": self.answer,
            "insight": self.insight_text,
            "origin": self.origin,
            "depth": self.depth,
            "root": self.parent_root_index,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "InsightRecord":
        return cls(
            question=doc["question"],
            answer=doc["answer"],
            insight_text=doc["insight"],
            origin=doc["origin"],
            depth=int(doc["depth"]),
            parent_root_index=int(doc["root"]),
        )


@dataclass
class FollowupCandidate:
    text: str
    score: int | None = None


class PipelineTrace:
    """Ordered event log for one case. Safe to append from several threads."""

    def __init__(self, case_id: str = ""):
        self.case_id = case_id
        self.events: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    def log(self, event: str, **data: Any) -> None:
        with self._lock:
            self.events.append({"event": event, "case_id": self.case_id, **data})

    def gateway_calls(self) -> list[dict[str, Any]]:
        return [e for e in self.events if e["event"] == "gateway_call"]

    def stable_events(self) -> list[dict[str, Any]]:
        """Events without wall-clock fields, for determinism comparisons."""
        return [{k: v for k, v in e.items() if k != "duration_ms"} for e in self.events]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, ensure_ascii=False) + "\n" for e in self.events)


def _docs_block(docs: Sequence[RetrievedDoc]) -> str:
    if not docs:
        return "(no documents retrieved)"
    return "\n".join(f"[{d.rank}] {d.title}: {d.snippet} ({d.url})" for d in docs)


def _json_field(text: str, key: str) -> Any:
    try:
        doc = parse_json_object(text)
    except ValueError:
        raise MalformedOutput("not JSON") from None
    if not isinstance(doc, dict) or key not in doc:
        raise MalformedOutput(f"missing field {key!r}")
    return doc[key]


def _string_list(value: Any, what: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise MalformedOutput(f"{what} must be a list of strings")
    return [v.strip() for v in value if v.strip()]


def _dedupe(items: Iterable[str]) -> list[str]:
    seen: set[str] = set()
    out = []
    for item in items:
        key = item.lower()
        if key not in seen:
            seen.add(key)
            out.append(item)
    return out


class InsightAgent:
    """One configured agent; methods map one-to-one onto pipeline stages."""

    def __init__(self, gateway: Gateway, cfg: AgentConfig | None = None, prompts: PromptSet | None = None):
        self.gateway = gateway
        self.cfg = cfg or AgentConfig()
        self.prompts = prompts or PromptSet.load()

    # ---- plumbing ---------------------------------------------------------

    def _request(self, model: str, text: str, image: bytes | None, json_mode: bool) -> GatewayRequest:
        parts: list[Any] = [image] if image is not None else []
        parts.append(text)
        return GatewayRequest(
            model_id=model,
            messages=(Message.of("user", *parts),),
            temperature=self.cfg.temperature,
            max_tokens=self.cfg.max_tokens,
            response_format="json_object" if json_mode else "free_text",
        )

    def _observer(self, purpose: str, trace: PipelineTrace | None):
        def observe(req: GatewayRequest, resp: Any, seconds: float) -> None:
            if trace is not None:
                trace.log(
                    "gateway_call",
                    purpose=purpose,
                    endpoint=req.model_id,
                    request_hash=canonical_hash(req),
                    from_cache=resp.from_cache,
                    duration_ms=round(seconds * 1000, 3),
                )

        return observe

    def _call(self, purpose: str, req: GatewayRequest, trace: PipelineTrace | None) -> str:
        start = time.perf_counter()
        resp = self.gateway.complete(req)
        self._observer(purpose, trace)(req, resp, time.perf_counter() - start)
        return resp.text

    def _ask(
        self,
        purpose: str,
        req: GatewayRequest,
        parse: Callable[[str], T],
        trace: PipelineTrace | None,
    ) -> T:
        """Call, parse, and on a parse failure re-ask once with the reason attached."""
        text = self._call(purpose, req, trace)
        try:
            return parse(text)
        except PipelineError as exc:
            if trace is not None:
                trace.log("reask", purpose=purpose, reason=str(exc))
            fmt = "a JSON object in exactly the requested format" if req.response_format == "json_object" else "the requested content"
            reminder = f"Your previous reply could not be used ({exc}). Reply again with {fmt} and nothing else."
            retry = req.with_messages([Message.of("assistant", text), Message.of("user", reminder)])
            return parse(self._call(purpose, retry, trace))

    # ---- stage 1 ----------------------------------------------------------

    def summarize_image(self, image: bytes, goal: str, trace: PipelineTrace | None = None) -> ImageSummary:
        prompt = self.prompts.render("image_summary", goal=goal)

        def parse(text: str) -> ImageSummary:
            features = _json_field(text, "features")
            keywords = _dedupe(_string_list(_json_field(text, "keywords"), "keywords"))
            if not isinstance(features, str):
                raise MalformedOutput("features must be a string")
            if not keywords:
                raise MalformedOutput("no keywords")
            return ImageSummary(features=features.strip(), keywords=tuple(keywords))

        summary = self._ask("image_summary", self._request(self.cfg.backbone, prompt, image, True), parse, trace)
        if trace is not None:
            trace.log("summary", features=summary.features, keywords=list(summary.keywords))
        return summary

    def retrieve(self, summary: ImageSummary, trace: PipelineTrace | None = None) -> list[RetrievedDoc]:
        docs = self.gateway.web_retrieve(summary.keywords)
        if trace is not None:
            trace.log("retrieval", keywords=list(summary.keywords), docs=[d.to_dict() for d in docs])
        return docs

    def generate_root_questions(
        self,
        image: bytes,
        goal: str,
        summary: ImageSummary,
        docs: Sequence[RetrievedDoc],
        m: int | None = None,
        trace: PipelineTrace | None = None,
    ) -> list[RootQuestion]:
        m = self.cfg.root_question_count if m is None else m
        if m < 1:
            raise ValueError("m must be >= 1")
        prompt = self.prompts.render(
            "root_questions", goal=goal, features=summary.features, docs=_docs_block(docs), count=m
        )

        def parse(text: str) -> list[str]:
            questions = _string_list(_json_field(text, "questions"), "questions")
            if len(questions) != m:
                raise CountMismatch(m, len(questions))
            return questions

        texts = self._ask("root_questions", self._request(self.cfg.backbone, prompt, image, True), parse, trace)
        roots = [RootQuestion(i, q) for i, q in enumerate(texts, start=1)]
        if trace is not None:
            trace.log("root_questions", questions=[asdict(r) for r in roots])
        return roots

    # ---- stage 2 ----------------------------------------------------------

    def analyze_image(
        self, image: bytes, question: str, question_index: int = 0, trace: PipelineTrace | None = None
    ) -> ImageEvidence:
        prompt = self.prompts.render("image_analysis", question=question)

        def parse(text: str) -> str:
            if not text.strip():
                raise EmptyEvidence()
            return text

        findings = self._ask("image_analysis", self._request(self.cfg.analysis, prompt, image, False), parse, trace)
        if trace is not None:
            trace.log("evidence", question_index=question_index, findings=findings)
        return ImageEvidence(question_index=question_index, findings=findings)

    def answer_and_insight(
        self,
        question: str,
        image: bytes,
        evidence: ImageEvidence,
        origin: str = "root",
        depth: int = 0,
        parent_root_index: int | None = None,
        trace: PipelineTrace | None = None,
    ) -> InsightRecord:
        if not evidence.findings.strip():
            raise EmptyEvidence()
        prompt = self.prompts.render("answer_insight", question=question, evidence=evidence.findings)

        def parse(text: str) -> tuple[str, str]:
            answer = _json_field(text, "answer")
            insight = _json_field(text, "insight")
            if not isinstance(answer, str) or not isinstance(insight, str) or not insight.strip():
                raise MalformedOutput("answer and insight must be non-empty strings")
            return answer.strip(), insight.strip()

        answer, insight = self._ask(
            "answer_insight", self._request(self.cfg.backbone, prompt, image, True), parse, trace
        )
        record = InsightRecord(
            question=question,
            answer=answer,
            insight_text=insight,
            origin=origin,
            depth=depth,
            parent_root_index=evidence.question_index if parent_root_index is None else parent_root_index,
        )
        if trace is not None:
            trace.log("insight", **record.to_dict())
        return record

    # ---- stage 3 ----------------------------------------------------------

    def generate_followup_candidates(
        self,
        image: bytes,
        goal: str,
        question: str,
        answer: str,
        summary: ImageSummary,
        docs: Sequence[RetrievedDoc],
        n: int | None = None,
        prev_questions: Sequence[str] = (),
        trace: PipelineTrace | None = None,
    ) -> list[FollowupCandidate]:
        n = self.cfg.candidate_count if n is None else n
        if n < 1:
            raise ValueError("n must be >= 1")
        prompt = self.prompts.render(
            "followup_questions",
            goal=goal,
            features=summary.features,
            docs=_docs_block(docs),
            prev_questions="\n".join(f"- {q}" for q in prev_questions) or "(none)",
            question=question,
            answer=answer,
            count=n,
        )

        def parse(text: str) -> list[str]:
            questions = _string_list(_json_field(text, "questions"), "questions")
            if len(questions) != n:
                raise CountMismatch(n, len(questions))
            return questions

        texts = self._ask("followup_questions", self._request(self.cfg.backbone, prompt, image, True), parse, trace)
        if trace is not None:
            duplicates = len(texts) != len({t.lower() for t in texts})
            trace.log("candidates", question=question, candidates=texts, duplicates=duplicates)
        return [FollowupCandidate(t) for t in texts]

    def select_followup(
        self,
        candidates: Sequence[FollowupCandidate],
        context: dict[str, Any],
        trace: PipelineTrace | None = None,
    ) -> FollowupCandidate:
        """Score every candidate 1..10 with the backbone; argmax, ties to the earliest.

        ``context`` carries ``goal``, ``root`` (root question), ``answer``
        (latest answer in the chain) and optionally ``image``.
        """
        if not candidates:
            raise ValueError("select_followup needs at least one candidate")
        image = context.get("image")
        for cand in candidates:
            prompt = self.prompts.render(
                "followup_select",
                goal=context.get("goal", ""),
                root=context.get("root", ""),
                answer=context.get("answer", ""),
                candidate=cand.text,
            )
            parts: list[Any] = [image, prompt] if image is not None else [prompt]
            cand.score = self.gateway.judge_score(
                self.cfg.backbone, SELECTOR_RUBRIC, parts, observe=self._observer("followup_select", trace)
            )
        best = max(range(len(candidates)), key=lambda i: (candidates[i].score, -i))
        if trace is not None:
            trace.log(
                "selection",
                scores=[c.score for c in candidates],
                selected=best + 1,
                question=candidates[best].text,
            )
        return candidates[best]

    # ---- drivers ----------------------------------------------------------

    def run(self, image: bytes, goal: str, case_id: str = "") -> tuple[list[InsightRecord], PipelineTrace]:
        """Full pipeline on one image and goal. Ground-truth labels never enter here."""
        trace = PipelineTrace(case_id)
        try:
            records = self._run(image, goal, trace)
        except Exception as exc:
            trace.log("error", error=f"{type(exc).__name__}: {exc}")
            if isinstance(exc, PipelineError):
                exc.trace = trace
            else:
                setattr(exc, "trace", trace)
            raise
        return records, trace

    def _run(self, image: bytes, goal: str, trace: PipelineTrace) -> list[InsightRecord]:
        cfg = self.cfg
        summary = self.summarize_image(image, goal, trace)
        docs = self.retrieve(summary, trace)
        roots = self.generate_root_questions(image, goal, summary, docs, cfg.root_question_count, trace)

        chains: dict[int, list[InsightRecord]] = {}
        for root in roots:
            evidence = self.analyze_image(image, root.text, root.index, trace)
            chains[root.index] = [self.answer_and_insight(root.text, image, evidence, "root", 0, root.index, trace)]

        for depth in range(1, cfg.depth + 1):
            for root in roots:
                chain = chains[root.index]
                latest = chain[-1]
                candidates = self.generate_followup_candidates(
                    image,
                    goal,
                    latest.question,
                    latest.answer,
                    summary,
                    docs,
                    cfg.candidate_count,
                    prev_questions=[r.question for r in chain],
                    trace=trace,
                )
                best = self.select_followup(
                    candidates, {"goal": goal, "root": root.text, "answer": latest.answer, "image": image}, trace
                )
                evidence = self.analyze_image(image, best.text, root.index, trace)
                chain.append(
                    self.answer_and_insight(best.text, image, evidence, "followup", depth, root.index, trace)
                )

        return [rec for root in roots for rec in chains[root.index]]

    def run_direct(self, image: bytes, goal: str, case_id: str = "") -> tuple[list[InsightRecord], PipelineTrace]:
        """Single-call baseline: the backbone lists insights straight from the image."""
        trace = PipelineTrace(case_id)
        prompt = self.prompts.render("direct_insights", goal=goal)

        def parse(text: str) -> list[tuple[str, str]]:
            try:
                doc = parse_json_object(text)
            except ValueError:
                raise MalformedOutput("not JSON") from None
            items = doc.get("insights") if isinstance(doc, dict) else doc
            if not isinstance(items, list):
                raise MalformedOutput("missing field 'insights'")
            pairs = []
            for item in items:
                if isinstance(item, str):
                    question, insight = "", item
                elif isinstance(item, dict) and isinstance(item.get("insight"), str):
                    question, insight = str(item.get("question") or ""), item["insight"]
                else:
                    raise MalformedOutput("each insight must be a string or an object with 'insight'")
                if insight.strip():
                    pairs.append((question.strip(), insight.strip()))
            if not pairs:
                raise NoInsights()
            return pairs

        try:
            pairs = self._ask(
                "direct_insights", self._request(self.cfg.backbone, prompt, image, True), parse, trace
            )
        except Exception as exc:
            trace.log("error", error=f"{type(exc).__name__}: {exc}")
            if isinstance(exc, PipelineError):
                exc.trace = trace
            raise
        records = [
            InsightRecord(question=q, answer="", insight_text=s, origin="root", depth=0, parent_root_index=i)
            for i, (q, s) in enumerate(pairs, start=1)
        ]
        for rec in records:
            trace.log("insight", **rec.to_dict())
        return records, trace


def run_pipeline(
    case: BenchmarkCase, cfg: AgentConfig, gateway: Gateway, prompts: PromptSet | None = None
) -> tuple[list[InsightRecord], PipelineTrace]:
    return InsightAgent(gateway, cfg, prompts).run(case.read_image(), case.goal, case.case_id)


def run_direct_baseline(
    case: BenchmarkCase, cfg: AgentConfig, gateway: Gateway, prompts: PromptSet | None = None
) -> list[InsightRecord]:
    records, _ = InsightAgent(gateway, cfg, prompts).run_direct(case.read_image(), case.goal, case.case_id)
    return records


# --------------------------------------------------------------------------
# batch
# --------------------------------------------------------------------------

MODES = ("agent", "direct")


@dataclass
class CaseResult:
    case_id: str
    records: list[InsightRecord] = field(default_factory=list)
    trace: PipelineTrace | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_batch(
    manifest: DatasetManifest,
    cfg: AgentConfig,
    gateway: Gateway,
    mode: str = "agent",
    parallelism: int = 1,
    prompts: PromptSet | None = None,
) -> list[CaseResult]:
    """Run every case; a failing case is recorded and the batch carries on."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    agent = InsightAgent(gateway, cfg, prompts)

    def one(case: BenchmarkCase) -> CaseResult:
        image = case.read_image()
        try:
            if mode == "agent":
                records, trace = agent.run(image, case.goal, case.case_id)
            else:
                records, trace = agent.run_direct(image, case.goal, case.case_id)
        except Exception as exc:
            log.error("case %s failed: %s", case.case_id, exc)
            return CaseResult(case.case_id, trace=getattr(exc, "trace", None), error=f"{type(exc).__name__}: {exc}")
        return CaseResult(case.case_id, records, trace)

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        return list(pool.map(one, manifest.cases))


def predictions_document(run_id: str, config: dict[str, Any], results: Sequence[CaseResult]) -> dict[str, Any]:
    cases = []
    for res in results:
        entry: dict[str, Any] = {"case_id": res.case_id, "insights": [r.to_dict() for r in res.records]}
        if res.error is not None:
            entry["error"] = res.error
        cases.append(entry)
    return {"run_id": run_id, "config": config, "cases": cases}


def load_predictions(doc: dict[str, Any]) -> dict[str, list[InsightRecord]]:
    """case_id -> records from a predictions document."""
    if not isinstance(doc, dict) or "cases" not in doc or "run_id" not in doc:
        raise ValueError("predictions: expected an object with 'run_id' and 'cases'")
    out: dict[str, list[InsightRecord]] = {}
    for entry in doc["cases"]:
        out[entry["case_id"]] = [InsightRecord.from_dict(i) for i in entry.get("insights", [])]
    return out
