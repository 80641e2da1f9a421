"""Benchmark-case data model: loading, validation, serialization and summary stats."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
MANIFEST_NAME = "manifest.json"

INSIGHT_TYPES = (
    "Descriptive",
    "Diagnostic",
    "Predictive",
    "Prescriptive",
    "Evaluative",
    "Exploratory",
)
DIFFICULTY_LEVELS = (1, 2, 3, 4)

_CANONICAL_TYPES = {t.lower(): t for t in INSIGHT_TYPES}


class DatasetError(ValueError):
    """Raised when a manifest cannot be loaded or fails validation."""


def canonical_insight_type(value: str) -> str | None:
    """Return the canonical capitalization of ``value``, or None if unknown."""
    if not isinstance(value, str):
        return None
    return _CANONICAL_TYPES.get(value.strip().lower())


@dataclass(frozen=True)
class GroundTruthInsight:
    question: str
    insight_text: str
    insight_type: str
    evidence: str = ""


@dataclass(frozen=True)
class BenchmarkCase:
    case_id: str
    image_ref: Path
    goal: str
    difficulty: int
    ground_truth: tuple[GroundTruthInsight, ...]

    def read_image(self) -> bytes:
        return Path(self.image_ref).read_bytes()


@dataclass(frozen=True)
class DatasetManifest:
    version: str
    cases: tuple[BenchmarkCase, ...]
    root: Path | None = field(default=None, compare=False)

    def get(self, case_id: str) -> BenchmarkCase:
        for case in self.cases:
            if case.case_id == case_id:
                return case
        raise KeyError(case_id)

    def __len__(self) -> int:
        return len(self.cases)


def validate_case(case: BenchmarkCase) -> list[str]:
    """Check every BenchmarkCase invariant; violations are returned, never raised."""
    problems: list[str] = []
    if not isinstance(case.case_id, str) or not case.case_id.strip():
        problems.append("case_id: must be a non-empty string")
    if not isinstance(case.goal, str) or not case.goal.strip():
        problems.append("goal: must be a non-empty string")
    if isinstance(case.difficulty, bool) or case.difficulty not in DIFFICULTY_LEVELS:
        problems.append(f"difficulty: {case.difficulty!r} not in 1..4")
    problems.extend(_image_problems(case.image_ref))
    if not case.ground_truth:
        problems.append("ground_truth: must be non-empty")
    for idx, gt in enumerate(case.ground_truth):
        where = f"ground_truth[{idx}]"
        if not isinstance(gt.question, str) or not gt.question.strip():
            problems.append(f"{where}.question: must be a non-empty string")
        if not isinstance(gt.insight_text, str) or not gt.insight_text.strip():
            problems.append(f"{where}.insight_text: must be a non-empty string")
        if gt.insight_type not in INSIGHT_TYPES:
            problems.append(f"{where}.insight_type: {gt.insight_type!r} insight_type not in taxonomy")
        if not isinstance(gt.evidence, str):
            problems.append(f"{where}.evidence: must be a string")
    return problems


def _image_problems(image_ref: Path | None) -> list[str]:
    if image_ref is None:
        return ["image: missing"]
    path = Path(image_ref)
    try:
        with path.open("rb") as fh:
            head = fh.read(len(PNG_SIGNATURE))
    except OSError as exc:
        return [f"image: unreadable file {str(path)!r} ({exc.strerror or exc})"]
    if head != PNG_SIGNATURE:
        return [f"image: {str(path)!r} is not a PNG file"]
    return []


def _case_from_dict(raw: Any, root: Path, position: int) -> BenchmarkCase:
    label = f"cases[{position}]"
    if not isinstance(raw, dict):
        raise DatasetError(f"{label}: expected an object")
    case_id = raw.get("case_id")
    if isinstance(case_id, str) and case_id:
        label = f"case {case_id!r}"
    for key in ("case_id", "image", "goal", "difficulty", "insights"):
        if key not in raw:
            raise DatasetError(f"{label}: missing field {key!r}")
    for key in ("case_id", "image", "goal"):
        if not isinstance(raw[key], str):
            raise DatasetError(f"{label}: field {key!r} must be a string")
    difficulty = raw["difficulty"]
    if isinstance(difficulty, bool) or not isinstance(difficulty, int):
        raise DatasetError(f"{label}: field 'difficulty' must be an integer")
    insights_raw = raw["insights"]
    if not isinstance(insights_raw, list):
        raise DatasetError(f"{label}: field 'insights' must be a list")

    insights = []
    for i, item in enumerate(insights_raw):
        where = f"{label}: insights[{i}]"
        if not isinstance(item, dict):
            raise DatasetError(f"{where} must be an object")
        for key in ("question", "insight", "type"):
            if not isinstance(item.get(key), str):
                raise DatasetError(f"{where}: field {key!r} must be a string")
        evidence = item.get("evidence", "")
        if not isinstance(evidence, str):
            raise DatasetError(f"{where}: field 'evidence' must be a string")
        insight_type = canonical_insight_type(item["type"]) or item["type"]
        insights.append(
            GroundTruthInsight(
                question=item["question"],
                insight_text=item["insight"],
                insight_type=insight_type,
                evidence=evidence,
            )
        )
    return BenchmarkCase(
        case_id=raw["case_id"],
        image_ref=(root / raw["image"]),
        goal=raw["goal"],
        difficulty=difficulty,
        ground_truth=tuple(insights),
    )


def parse_manifest(doc: Any, root: Path) -> DatasetManifest:
    """Build a manifest from an already-decoded JSON document and check it."""
    if not isinstance(doc, dict):
        raise DatasetError("manifest: expected a JSON object")
    if "cases" not in doc or not isinstance(doc["cases"], list):
        raise DatasetError("manifest: missing 'cases' list")
    version = doc.get("version", "1")
    if not isinstance(version, str):
        raise DatasetError("manifest: 'version' must be a string")
    if not doc["cases"]:
        raise DatasetError("empty dataset")

    cases = [_case_from_dict(raw, root, i) for i, raw in enumerate(doc["cases"])]
    seen: set[str] = set()
    for case in cases:
        if case.case_id in seen:
            raise DatasetError(f"case {case.case_id!r}: duplicate case_id")
        seen.add(case.case_id)
        problems = validate_case(case)
        if problems:
            raise DatasetError(f"case {case.case_id!r}: " + "; ".join(problems))
    return DatasetManifest(version=version, cases=tuple(cases), root=root)


def manifest_path(root: str | Path) -> Path:
    root = Path(root)
    return root if root.is_file() else root / MANIFEST_NAME


def load_dataset(root: str | Path) -> DatasetManifest:
    """Load ``manifest.json`` from ``root`` (or a manifest file path directly)."""
    path = manifest_path(root)
    if not path.is_file():
        raise DatasetError(f"missing manifest: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return parse_manifest(doc, path.parent)


def collect_violations(root: str | Path) -> dict[str, list[str]]:
    """Like load_dataset, but gathers every per-case violation instead of stopping.

    Structural errors (bad JSON, missing fields) still raise DatasetError.
    """
    path = manifest_path(root)
    if not path.is_file():
        raise DatasetError(f"missing manifest: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("cases"), list):
        raise DatasetError("manifest: missing 'cases' list")
    if not doc["cases"]:
        raise DatasetError("empty dataset")

    out: dict[str, list[str]] = {}
    seen: set[str] = set()
    for i, raw in enumerate(doc["cases"]):
        case = _case_from_dict(raw, path.parent, i)
        problems = validate_case(case)
        if case.case_id in seen:
            problems.insert(0, "case_id: duplicate")
        seen.add(case.case_id)
        if problems:
            out[case.case_id] = problems
    return out


def manifest_to_dict(manifest: DatasetManifest, root: str | Path | None = None) -> dict[str, Any]:
    """Serialize to the on-disk schema; image paths are made relative to ``root``."""
    base = Path(root) if root is not None else manifest.root
    cases = []
    for case in manifest.cases:
        image = Path(case.image_ref)
        if base is not None:
            try:
                image = image.relative_to(base)
            except ValueError:
                pass
        cases.append(
            {
                "case_id": case.case_id,
                "image": image.as_posix(),
                "goal": case.goal,
                "difficulty": case.difficulty,
                "insights": [
                    {
                        "question": gt.question,
                        "insight": gt.insight_text,
                        "type": gt.insight_type,
                        "evidence": gt.evidence,
                    }
                    for gt in case.ground_truth
                ],
            }
        )
    return {"version": manifest.version, "cases": cases}


def save_dataset(manifest: DatasetManifest, root: str | Path) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    path = root / MANIFEST_NAME
    doc = manifest_to_dict(manifest, root)
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


@dataclass(frozen=True)
class DatasetStats:
    case_count: int
    insight_count: int
    by_type: dict[str, int]
    by_difficulty: dict[int, int]
    mean_question_tokens: float
    mean_insight_tokens: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "cases": self.case_count,
            "insights": self.insight_count,
            "by_type": dict(self.by_type),
            "by_difficulty": {str(k): v for k, v in self.by_difficulty.items()},
            "mean_question_tokens": self.mean_question_tokens,
            "mean_insight_tokens": self.mean_insight_tokens,
        }


def dataset_stats(manifest: DatasetManifest) -> DatasetStats:
    from .textmetrics import tokenize

    by_type = Counter({t: 0 for t in INSIGHT_TYPES})
    by_difficulty = Counter({d: 0 for d in DIFFICULTY_LEVELS})
    q_tokens = i_tokens = total = 0
    for case in manifest.cases:
        by_difficulty[case.difficulty] += 1
        for gt in case.ground_truth:
            total += 1
            by_type[gt.insight_type] += 1
            q_tokens += len(tokenize(gt.question))
            i_tokens += len(tokenize(gt.insight_text))
    return DatasetStats(
        case_count=len(manifest.cases),
        insight_count=total,
        by_type=dict(by_type),
        by_difficulty=dict(sorted(by_difficulty.items())),
        mean_question_tokens=q_tokens / total if total else 0.0,
        mean_insight_tokens=i_tokens / total if total else 0.0,
    )
