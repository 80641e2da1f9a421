"""Plain-text and JSON rendering of eval results and redundancy statistics."""

from __future__ import annotations

from typing import Any, Mapping, Sequence

from .textmetrics import RedundancyReport

SCORER_LABELS = {"rouge1": "ROUGE-1", "geval": "G-Eval"}
METRICS = ("recall", "precision", "f1")


class ReportError(ValueError):
    pass


def fmt(value: Any) -> str:
    if value is None:
        return "-"
    return f"{value:.3f}"


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]

    def line(cells: Sequence[str]) -> str:
        return "  ".join(
            str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(cells, widths))
        ).rstrip()

    out = [line(header), "  ".join("-" * w for w in widths)]
    out.extend(line(r) for r in rows)
    return "\n".join(out) + "\n"


def comparison(evals: Sequence[Mapping[str, Any]]) -> dict[str, Any]:
    """Merge eval documents into one row per run_id.

    Each row holds recall/precision/F1 per scorer plus Original/Innovation
    (taken from whichever document carries novelty). A repeated
    (run_id, scorer) pair is an error.
    """
    if not evals:
        raise ReportError("report needs at least one eval document")
    rows: dict[str, dict[str, Any]] = {}
    for doc in evals:
        run_id, scorer = doc["run_id"], doc["scorer"]
        row = rows.setdefault(run_id, {"run_id": run_id, "original": None, "innovation": None})
        if scorer in row:
            raise ReportError(f"duplicate run_id {run_id!r} for scorer {scorer!r}")
        agg = doc["aggregate"]
        row[scorer] = {m: agg[m] for m in METRICS}
        if doc.get("novelty"):
            if row["original"] is not None:
                raise ReportError(f"duplicate run_id {run_id!r}: novelty given twice")
            row["original"] = doc["novelty"]["original"]
            row["innovation"] = doc["novelty"]["innovation"]
    scorers = [s for s in SCORER_LABELS if any(s in r for r in rows.values())]
    return {"scorers": scorers, "rows": list(rows.values())}


def render_comparison(table: Mapping[str, Any]) -> str:
    scorers = table["scorers"]
    header = ["run"]
    for metric in ("Recall", "Precision", "F1"):
        header.extend(f"{metric} {SCORER_LABELS[s]}" for s in scorers)
    header += ["Original", "Innovation"]
    body = []
    for row in table["rows"]:
        cells = [row["run_id"]]
        for metric in METRICS:
            cells.extend(fmt(row.get(s, {}).get(metric)) for s in scorers)
        cells += [fmt(row["original"]), fmt(row["innovation"])]
        body.append(cells)
    return _table(header, body)


def render_difficulty(doc: Mapping[str, Any]) -> str:
    groups = doc["aggregate"].get("by_difficulty", {})
    rows = [
        [f"level {lvl}", str(g["n_cases"]), fmt(g["recall"]), fmt(g["precision"]), fmt(g["f1"])]
        for lvl, g in groups.items()
    ]
    title = f"{doc['run_id']} ({SCORER_LABELS.get(doc['scorer'], doc['scorer'])}) by difficulty\n"
    return title + _table(["difficulty", "cases", "Recall", "Precision", "F1"], rows)


def render_redundancy(questions: RedundancyReport, insights: RedundancyReport) -> str:
    rows = [
        ["TF-IDF cosine", f"{questions.tfidf_cosine:.4f}", f"{insights.tfidf_cosine:.4f}"],
        ["Self-BLEU", f"{questions.self_bleu:.4f}", f"{insights.self_bleu:.4f}"],
        ["Distinct-2", f"{questions.distinct2:.4f}", f"{insights.distinct2:.4f}"],
        ["sentences", str(questions.sentence_count), str(insights.sentence_count)],
    ]
    return _table(["metric", "Questions", "Insights"], rows)
