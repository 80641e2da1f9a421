"""Insight recall / precision / F1 / novelty, G-Eval judging and case quality checks."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Any, Mapping, Sequence

from .dataset import BenchmarkCase, GroundTruthInsight
from .gateway import Gateway, GatewayError, GatewayRequest, JudgeFormatError, Message, parse_json_object
from .pipeline import InsightRecord
from .prompts import PromptSet
from .textmetrics import rouge1

log = logging.getLogger(__name__)

SCORERS = ("rouge1", "geval")
GEVAL_JUDGES = 2
NOVELTY_JUDGES = 3
# an insight counts as correct when its best raw G-Eval mean (1..10) is strictly above this
CORRECT_THRESHOLD = 5
QUALITY_DIMENSIONS = ("correctness", "rationality", "coherence")


class EvaluationError(ValueError):
    pass


class MatrixCellError(GatewayError):
    def __init__(self, gt_index: int, gen_index: int, cause: Exception):
        super().__init__(f"score cell (gt={gt_index}, gen={gen_index}): {cause}")
        self.gt_index = gt_index
        self.gen_index = gen_index


def _text(item: GroundTruthInsight | InsightRecord | str) -> str:
    if isinstance(item, str):
        return item
    return item.insight_text


# --------------------------------------------------------------------------
# score matrices
# --------------------------------------------------------------------------


@dataclass
class ScoreMatrix:
    """Pairwise similarities, rows = ground truth, columns = generated insights.

    For the ``geval`` scorer ``judge_scores[i][j]`` keeps the raw 1..10 score
    of each judge so the correctness threshold can be applied exactly.
    """

    scorer_name: str
    scores: list[list[float]]
    judge_scores: list[list[list[int]]] | None = None

    def __post_init__(self) -> None:
        if not self.scores or not self.scores[0]:
            raise EvaluationError("empty insight set")
        width = len(self.scores[0])
        for row in self.scores:
            if len(row) != width:
                raise EvaluationError("ragged score matrix")
            for v in row:
                if not 0.0 <= v <= 1.0:
                    raise EvaluationError(f"score {v!r} outside [0, 1]")
        if self.judge_scores is not None:
            if len(self.judge_scores) != len(self.scores) or any(
                len(r) != width for r in self.judge_scores
            ):
                raise EvaluationError("judge_scores shape differs from scores")

    @property
    def gt_count(self) -> int:
        return len(self.scores)

    @property
    def gen_count(self) -> int:
        return len(self.scores[0])

    def column_max_raw(self, j: int) -> float:
        """Best raw judge mean for generated insight ``j`` (geval only)."""
        if self.judge_scores is None:
            return max(row[j] for row in self.scores) * 10
        return max(fmean(self.judge_scores[i][j]) for i in range(self.gt_count))

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "scorer": self.scorer_name,
            "gt_count": self.gt_count,
            "gen_count": self.gen_count,
            "scores": self.scores,
        }
        if self.judge_scores is not None:
            doc["judge_scores"] = self.judge_scores
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ScoreMatrix":
        m = cls(doc["scorer"], [list(map(float, r)) for r in doc["scores"]], doc.get("judge_scores"))
        if (m.gt_count, m.gen_count) != (doc.get("gt_count", m.gt_count), doc.get("gen_count", m.gen_count)):
            raise EvaluationError("matrix dimensions do not match its header")
        return m


def geval_context(reference: str, candidate: str) -> str:
    return f"<reference>\n{reference}\n</reference>\n\n<candidate>\n{candidate}\n</candidate>"


def score_matrix(
    gt: Sequence[GroundTruthInsight | str],
    gen: Sequence[InsightRecord | str],
    scorer: str,
    *,
    gateway: Gateway | None = None,
    judges: Sequence[str] = (),
    prompts: PromptSet | None = None,
    parallelism: int = 1,
) -> ScoreMatrix:
    if scorer not in SCORERS:
        raise EvaluationError(f"unknown scorer {scorer!r}; expected one of {SCORERS}")
    if not gt or not gen:
        raise EvaluationError("empty insight set")
    gt_texts = [_text(g) for g in gt]
    gen_texts = [_text(g) for g in gen]

    if scorer == "rouge1":
        return ScoreMatrix("rouge1", [[rouge1(a, b) for b in gen_texts] for a in gt_texts])

    if gateway is None:
        raise EvaluationError("geval scorer needs a gateway")
    if len(judges) != GEVAL_JUDGES:
        raise EvaluationError(f"geval needs exactly {GEVAL_JUDGES} judges, got {len(judges)}")
    rubric = (prompts or PromptSet.load()).render("geval_similarity")

    def cell(ij: tuple[int, int]) -> list[int]:
        i, j = ij
        try:
            return [gateway.judge_score(jid, rubric, [geval_context(gt_texts[i], gen_texts[j])]) for jid in judges]
        except Exception as exc:
            raise MatrixCellError(i, j, exc) from exc

    coords = [(i, j) for i in range(len(gt_texts)) for j in range(len(gen_texts))]
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        raw = list(pool.map(cell, coords))
    judge_scores = [[raw[i * len(gen_texts) + j] for j in range(len(gen_texts))] for i in range(len(gt_texts))]
    scores = [[sum(c) / len(c) / 10 for c in row] for row in judge_scores]
    return ScoreMatrix("geval", scores, judge_scores)


class MatrixStore:
    """Persists matrices as ``<root>/<run_id>/<case_id>/<scorer>.json``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, run_id: str, case_id: str, scorer: str) -> Path:
        return self.root / run_id / case_id / f"{scorer}.json"

    def get(self, run_id: str, case_id: str, scorer: str) -> ScoreMatrix | None:
        p = self.path(run_id, case_id, scorer)
        if not p.is_file():
            return None
        return ScoreMatrix.from_dict(json.loads(p.read_text(encoding="utf-8")))

    def put(self, run_id: str, case_id: str, matrix: ScoreMatrix) -> Path:
        p = self.path(run_id, case_id, matrix.scorer_name)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(matrix.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
        return p


# --------------------------------------------------------------------------
# recall / precision / F1
# --------------------------------------------------------------------------


def insight_recall(matrix: ScoreMatrix) -> float:
    """Mean over ground-truth insights of their best-matching generated score."""
    return fmean(max(row) for row in matrix.scores)


def insight_precision(matrix: ScoreMatrix) -> float:
    """Mean over generated insights of their best-matching ground-truth score."""
    return fmean(max(col) for col in zip(*matrix.scores))


def insight_f1(recall: float, precision: float) -> float:
    if recall + precision == 0:
        return 0.0
    f1 = 2 * recall * precision / (recall + precision)
    # rounding can push the harmonic mean an ulp outside [min, max]
    return min(max(f1, min(recall, precision)), max(recall, precision))


@dataclass(frozen=True)
class CaseEval:
    case_id: str
    scorer: str
    recall: float
    precision: float
    f1: float
    difficulty: int | None = None

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "case_id": self.case_id,
            "recall": self.recall,
            "precision": self.precision,
            "f1": self.f1,
        }
        if self.difficulty is not None:
            doc["difficulty"] = self.difficulty
        return doc


def evaluate_matrix(case_id: str, matrix: ScoreMatrix | None, scorer: str, difficulty: int | None = None) -> CaseEval:
    """Recall/precision/F1 for one case; ``None`` (no generated insights) scores 0."""
    if matrix is None:
        log.warning("case %s: no generated insights, scoring 0", case_id)
        return CaseEval(case_id, scorer, 0.0, 0.0, 0.0, difficulty)
    r, p = insight_recall(matrix), insight_precision(matrix)
    return CaseEval(case_id, scorer, r, p, insight_f1(r, p), difficulty)


# --------------------------------------------------------------------------
# novelty
# --------------------------------------------------------------------------


def novelty_scores(correct: int, incorrect: int, accepted_novel: int) -> tuple[float, float]:
    """(Original, Innovation): the novelty score without and with judge-accepted credit."""
    total = correct + incorrect
    if total == 0:
        raise EvaluationError("empty insight set")
    if not 0 <= accepted_novel <= incorrect:
        raise EvaluationError("accepted_novel must lie in [0, incorrect]")
    return correct / total, (correct + accepted_novel) / total


def accepted_by_vote(votes: Sequence[int | bool]) -> bool:
    return sum(int(v) for v in votes) >= 2


@dataclass
class InsightVerdict:
    index: int
    insight: str
    best_geval: float
    correct: bool
    votes: list[int] | None = None

    @property
    def accepted(self) -> bool:
        return bool(self.votes) and accepted_by_vote(self.votes)


@dataclass
class NoveltyReport:
    correct_count: int
    incorrect_count: int
    accepted_novel: int
    original: float
    innovation: float
    verdicts: list[InsightVerdict] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "correct": self.correct_count,
            "incorrect": self.incorrect_count,
            "accepted_novel": self.accepted_novel,
            "original": self.original,
            "innovation": self.innovation,
            "verdicts": [{**asdict(v), "accepted": v.accepted} for v in self.verdicts],
        }


class NoveltyError(GatewayError):
    def __init__(self, cause: Exception, partial: list[InsightVerdict]):
        super().__init__(f"novelty judging failed: {cause}")
        self.partial = partial


def novelty_from_verdicts(verdicts: Sequence[InsightVerdict]) -> NoveltyReport:
    correct = sum(1 for v in verdicts if v.correct)
    incorrect = len(verdicts) - correct
    accepted = sum(1 for v in verdicts if not v.correct and v.accepted)
    original, innovation = novelty_scores(correct, incorrect, accepted)
    return NoveltyReport(correct, incorrect, accepted, original, innovation, list(verdicts))


def novelty(
    gen: Sequence[InsightRecord | str],
    gt: Sequence[GroundTruthInsight],
    case: BenchmarkCase,
    judges: Sequence[str],
    matrix: ScoreMatrix,
    gateway: Gateway,
    prompts: PromptSet | None = None,
    parallelism: int = 1,
) -> NoveltyReport:
    """Split insights into correct/incorrect by G-Eval, then let three judges vote on the rest.

    The vote prompt carries the goal, the image and the annotated insights of
    the case and asks for step-by-step reasoning before a binary verdict.
    """
    if len(judges) != NOVELTY_JUDGES:
        raise EvaluationError(f"novelty needs exactly {NOVELTY_JUDGES} judges, got {len(judges)}")
    if not gen:
        raise EvaluationError("empty insight set")
    if matrix.scorer_name != "geval":
        raise EvaluationError("novelty needs the geval score matrix")
    if matrix.gen_count != len(gen) or matrix.gt_count != len(gt):
        raise EvaluationError("score matrix does not match the insight sets")

    texts = [_text(g) for g in gen]
    verdicts = []
    for j, text in enumerate(texts):
        best = matrix.column_max_raw(j)
        verdicts.append(InsightVerdict(j, text, best, best > CORRECT_THRESHOLD))

    pending = [v for v in verdicts if not v.correct]
    if pending:
        prompts = prompts or PromptSet.load()
        history = "\n".join(f"- {g.insight_text}" for g in gt)
        image = case.read_image()

        def vote(v: InsightVerdict) -> list[int]:
            rubric = prompts.render("novelty_judge", goal=case.goal, history=history, insight=v.insight)
            return [
                int(gateway.judge_verdict(jid, rubric, [image, "Judge the insight shown above."])[0])
                for jid in judges
            ]

        with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
            futures = [(v, pool.submit(vote, v)) for v in pending]
            failure: Exception | None = None
            for v, fut in futures:
                try:
                    v.votes = fut.result()
                except Exception as exc:
                    failure = failure or exc
        if failure is not None:
            raise NoveltyError(failure, verdicts)
    return novelty_from_verdicts(verdicts)


# --------------------------------------------------------------------------
# dataset quality
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QualityVerdict:
    case_id: str
    correctness: bool
    rationality: bool
    coherence: bool

    def as_tuple(self) -> tuple[bool, bool, bool]:
        return (self.correctness, self.rationality, self.coherence)


QUALITY_REMINDER = (
    "Your previous reply could not be used. Reply with only a JSON object with boolean fields "
    '"correctness", "rationality" and "coherence".'
)


def _parse_quality(text: str) -> dict[str, bool] | None:
    try:
        doc = parse_json_object(text)
    except ValueError:
        return None
    if not isinstance(doc, dict):
        return None
    out = {}
    for dim in QUALITY_DIMENSIONS:
        v = doc.get(dim)
        if isinstance(v, str) and v.strip().lower() in ("true", "yes", "false", "no"):
            v = v.strip().lower() in ("true", "yes")
        if not isinstance(v, bool):
            return None
        out[dim] = v
    return out


def quality_assess(
    case: BenchmarkCase, judge: str, gateway: Gateway, prompts: PromptSet | None = None
) -> QualityVerdict:
    prompt = (prompts or PromptSet.load()).render(
        "quality_assess",
        goal=case.goal,
        questions="\n".join(f"{i}. {g.question}" for i, g in enumerate(case.ground_truth, 1)),
        insights="\n".join(f"{i}. {g.insight_text}" for i, g in enumerate(case.ground_truth, 1)),
    )
    req = GatewayRequest(
        model_id=judge,
        messages=(Message.of("user", case.read_image(), prompt),),
        response_format="json_object",
    )
    text = gateway.complete(req).text
    parsed = _parse_quality(text)
    if parsed is None:
        retry = req.with_messages([Message.of("assistant", text), Message.of("user", QUALITY_REMINDER)])
        text = gateway.complete(retry).text
        parsed = _parse_quality(text)
    if parsed is None:
        raise JudgeFormatError(judge, text)
    return QualityVerdict(case.case_id, **parsed)


def quality_rates(verdicts: Sequence[QualityVerdict]) -> dict[str, float]:
    if not verdicts:
        raise EvaluationError("no quality verdicts")
    return {dim: fmean(float(getattr(v, dim)) for v in verdicts) for dim in QUALITY_DIMENSIONS}


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------


def _means(evals: Sequence[CaseEval], novelty_reports: Sequence[NoveltyReport]) -> dict[str, Any]:
    out: dict[str, Any] = {
        "n_cases": len(evals),
        "recall": fmean(e.recall for e in evals),
        "precision": fmean(e.precision for e in evals),
        "f1": fmean(e.f1 for e in evals),
    }
    if novelty_reports:
        out["original"] = fmean(r.original for r in novelty_reports)
        out["innovation"] = fmean(r.innovation for r in novelty_reports)
    return out


def aggregate(
    evals: Sequence[CaseEval],
    novelty_reports: Mapping[str, NoveltyReport] | None = None,
) -> dict[str, Any]:
    """Unweighted means over cases, overall and per difficulty level."""
    if not evals:
        raise EvaluationError("aggregate needs at least one case")
    novelty_reports = novelty_reports or {}
    out = _means(evals, [novelty_reports[e.case_id] for e in evals if e.case_id in novelty_reports])

    groups: dict[int, list[CaseEval]] = {}
    for e in evals:
        if e.difficulty is not None:
            groups.setdefault(e.difficulty, []).append(e)
    out["by_difficulty"] = {
        str(level): _means(group, [novelty_reports[e.case_id] for e in group if e.case_id in novelty_reports])
        for level, group in sorted(groups.items())
    }
    return out


def eval_document(
    run_id: str,
    scorer: str,
    evals: Sequence[CaseEval],
    novelty_reports: Mapping[str, NoveltyReport] | None = None,
) -> dict[str, Any]:
    """Eval output schema: run_id, scorer, per-case metrics, novelty, aggregate."""
    agg = aggregate(evals, novelty_reports)
    novelty_block = None
    if novelty_reports:
        novelty_block = {
            "original": agg["original"],
            "innovation": agg["innovation"],
            "cases": {cid: rep.to_dict() for cid, rep in novelty_reports.items()},
        }
    return {
        "run_id": run_id,
        "scorer": scorer,
        "cases": [e.to_dict() for e in evals],
        "novelty": novelty_block,
        "aggregate": agg,
    }

