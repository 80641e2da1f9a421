"""Command-line entry point: validate, run, eval, redundancy, quality, report, init-toy.

Exit codes: 0 success, 1 validation/config error, 2 some cases failed,
3 every case failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from .config import ConfigError, RunConfig, build_gateway, load_config
from .dataset import DatasetError, collect_violations, dataset_stats, load_dataset
from .gateway import GatewayError
from .evaluation import (
    SCORERS,
    CaseEval,
    EvaluationError,
    MatrixStore,
    NoveltyReport,
    ScoreMatrix,
    eval_document,
    evaluate_matrix,
    novelty,
    quality_assess,
    quality_rates,
    score_matrix,
)
from .pipeline import load_predictions, predictions_document, run_batch
from .prompts import PromptSet
from .resources import export_toy
from .report import ReportError, comparison, render_comparison, render_difficulty, render_redundancy
from .textmetrics import InsufficientCorpusError, redundancy_report

log = logging.getLogger("pathinsight")

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL, EXIT_FAILED = 0, 1, 2, 3


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_json(path: Path, doc: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def _replay_mode(args: argparse.Namespace) -> str | None:
    if getattr(args, "replay", False):
        return "replay"
    if getattr(args, "record", False):
        return "record"
    return None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        violations = collect_violations(args.dataset)
    except DatasetError as exc:
        print(f"invalid dataset: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if violations:
        for case_id, problems in violations.items():
            for p in problems:
                print(f"{case_id}: {p}")
        print(f"{len(violations)} invalid case(s)", file=sys.stderr)
        return EXIT_INVALID
    manifest = load_dataset(args.dataset)
    stats = dataset_stats(manifest)
    print(f"{stats.case_count} cases, {stats.insight_count} insights")
    print("by type: " + ", ".join(f"{k}={v}" for k, v in stats.by_type.items()))
    print("by difficulty: " + ", ".join(f"{k}={v}" for k, v in stats.by_difficulty.items()))
    print(
        f"mean tokens: questions {stats.mean_question_tokens:.2f}, insights {stats.mean_insight_tokens:.2f}"
    )
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    mode = args.mode or cfg.mode
    dataset = Path(args.dataset) if args.dataset else cfg.dataset
    if dataset is None:
        raise ConfigError("no dataset given (config 'dataset' or --dataset)")
    manifest = load_dataset(dataset)
    gateway = build_gateway(cfg, _replay_mode(args))
    prompts = PromptSet.load(cfg.prompts_dir)

    results = run_batch(manifest, cfg.agent, gateway, mode, cfg.parallelism, prompts)

    out_dir = Path(args.out) if args.out else cfg.output_dir
    run_id = cfg.run_id if mode == cfg.mode else f"{cfg.run_id}-{mode}"
    config_block = cfg.public_dict() | {"mode": mode}
    doc = predictions_document(run_id, config_block, results)
    doc["created_at"] = _now()
    pred_path = write_json(out_dir / f"{run_id}.predictions.json", doc)
    trace_path = out_dir / f"{run_id}.trace.jsonl"
    trace_path.write_text(
        "".join(r.trace.to_jsonl() for r in results if r.trace is not None), encoding="utf-8"
    )

    failed = [r for r in results if not r.ok]
    for r in results:
        status = "ok" if r.ok else f"FAILED ({r.error})"
        print(f"{r.case_id}: {len(r.records)} insights, {status}")
    print(f"predictions: {pred_path}")
    print(f"trace: {trace_path}")
    if failed and len(failed) == len(results):
        return EXIT_FAILED
    return EXIT_PARTIAL if failed else EXIT_OK


def _fingerprint(gt: Sequence[str], gen: Sequence[str]) -> str:
    return hashlib.sha256(json.dumps([list(gt), list(gen)]).encode("utf-8")).hexdigest()


def cmd_eval(args: argparse.Namespace) -> int:
    scorers = [s.strip() for s in args.scorer.split(",") if s.strip()]
    unknown = [s for s in scorers if s not in SCORERS]
    if unknown or not scorers:
        raise ConfigError(f"unknown scorer(s): {', '.join(unknown) or '(none)'}; choose from {SCORERS}")
    needs_judges = "geval" in scorers or args.novelty
    if args.novelty and "geval" not in scorers:
        raise ConfigError("--novelty needs the geval scorer")

    cfg: RunConfig | None = load_config(args.config) if args.config else None
    if needs_judges:
        if cfg is None:
            raise ConfigError("geval / novelty need --config with judge endpoints")
        if len(cfg.geval_judges) != 2:
            raise ConfigError(f"geval needs exactly 2 judges, config lists {len(cfg.geval_judges)}")
        if args.novelty and len(cfg.novelty_judges) != 3:
            raise ConfigError(f"--novelty needs exactly 3 judges, config lists {len(cfg.novelty_judges)}")
    gateway = build_gateway(cfg, _replay_mode(args)) if needs_judges and cfg is not None else None
    prompts = PromptSet.load(cfg.prompts_dir if cfg else None)
    parallelism = cfg.parallelism if cfg else 1

    pred_doc = json.loads(Path(args.pred).read_text(encoding="utf-8"))
    predictions = load_predictions(pred_doc)
    run_id = pred_doc["run_id"]
    manifest = load_dataset(args.dataset)
    known = {c.case_id for c in manifest.cases}
    stray = sorted(set(predictions) - known)
    if stray:
        raise ConfigError(f"predictions reference unknown case_id(s): {', '.join(stray)}")

    out_dir = Path(args.out) if args.out else Path(args.pred).parent
    store = MatrixStore(out_dir / "matrices")
    status = EXIT_OK
    for scorer in scorers:
        evals: list[CaseEval] = []
        novelty_reports: dict[str, NoveltyReport] = {}
        for case in manifest.cases:
            if case.case_id not in predictions:
                continue
            gen = predictions[case.case_id]
            if not gen:
                evals.append(evaluate_matrix(case.case_id, None, scorer, case.difficulty))
                continue
            gt_texts = [g.insight_text for g in case.ground_truth]
            gen_texts = [r.insight_text for r in gen]
            fp = _fingerprint(gt_texts, gen_texts)
            matrix = _cached_matrix(store, run_id, case.case_id, scorer, fp)
            if matrix is None:
                try:
                    matrix = score_matrix(
                        case.ground_truth,
                        gen,
                        scorer,
                        gateway=gateway,
                        judges=cfg.geval_judges if cfg else (),
                        prompts=prompts,
                        parallelism=parallelism,
                    )
                except GatewayError as exc:
                    log.error("%s matrix for case %s failed: %s", scorer, case.case_id, exc)
                    status = EXIT_PARTIAL
                    continue
                _store_matrix(store, run_id, case.case_id, matrix, fp)
            evals.append(evaluate_matrix(case.case_id, matrix, scorer, case.difficulty))
            if args.novelty and scorer == "geval":
                try:
                    novelty_reports[case.case_id] = novelty(
                        gen, case.ground_truth, case, cfg.novelty_judges, matrix, gateway, prompts, parallelism
                    )
                except Exception as exc:
                    log.error("novelty for case %s failed: %s", case.case_id, exc)
                    status = EXIT_PARTIAL
        if not evals:
            raise ConfigError("predictions contain none of the dataset's cases")
        doc = eval_document(run_id, scorer, evals, novelty_reports or None)
        doc["created_at"] = _now()
        path = write_json(out_dir / f"{run_id}.{scorer}.eval.json", doc)
        agg = doc["aggregate"]
        print(
            f"{scorer}: recall {agg['recall']:.3f}  precision {agg['precision']:.3f}  f1 {agg['f1']:.3f}"
            + (f"  original {agg['original']:.3f}  innovation {agg['innovation']:.3f}" if "original" in agg else "")
        )
        print(f"eval: {path}")
    return status


def _cached_matrix(store: MatrixStore, run_id: str, case_id: str, scorer: str, fp: str) -> ScoreMatrix | None:
    path = store.path(run_id, case_id, scorer)
    if not path.is_file():
        return None
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("fingerprint") != fp:
        return None
    return ScoreMatrix.from_dict(doc)


def _store_matrix(store: MatrixStore, run_id: str, case_id: str, matrix: ScoreMatrix, fp: str) -> None:
    write_json(store.path(run_id, case_id, matrix.scorer_name), matrix.to_dict() | {"fingerprint": fp})


def cmd_redundancy(args: argparse.Namespace) -> int:
    manifest = load_dataset(args.dataset)
    questions = [g.question for c in manifest.cases for g in c.ground_truth]
    insights = [g.insight_text for c in manifest.cases for g in c.ground_truth]
    try:
        q_report, i_report = redundancy_report(questions), redundancy_report(insights)
    except InsufficientCorpusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(render_redundancy(q_report, i_report), end="")
    if args.json:
        write_json(Path(args.json), {"questions": q_report.to_dict(), "insights": i_report.to_dict()})
    return EXIT_OK


def cmd_quality(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if not cfg.quality_judge:
        raise ConfigError("config.judges.quality is not set")
    manifest = load_dataset(args.dataset)
    gateway = build_gateway(cfg, _replay_mode(args))
    prompts = PromptSet.load(cfg.prompts_dir)
    verdicts = [quality_assess(c, cfg.quality_judge, gateway, prompts) for c in manifest.cases]
    for v in verdicts:
        print(f"{v.case_id}: correctness={v.correctness} rationality={v.rationality} coherence={v.coherence}")
    rates = quality_rates(verdicts)
    print("rates: " + "  ".join(f"{k} {v:.3f}" for k, v in rates.items()))
    if args.json:
        write_json(
            Path(args.json),
            {"cases": [v.__dict__ for v in verdicts], "rates": rates},
        )
    return EXIT_OK


def cmd_init_toy(args: argparse.Namespace) -> int:
    dest = export_toy(args.dest)
    print(f"toy dataset and mock config written to {dest}")
    print(f"next: pathinsight validate {dest} && pathinsight run --config {dest / 'config.json'}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    docs = [json.loads(Path(p).read_text(encoding="utf-8")) for p in args.evals]
    try:
        table = comparison(docs)
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    text = render_comparison(table)
    if args.by_difficulty:
        text += "".join("\n" + render_difficulty(d) for d in docs)
    print(text, end="")
    if args.json:
        write_json(Path(args.json), table)
    if args.text:
        Path(args.text).write_text(text, encoding="utf-8")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _add_replay_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--replay", action="store_true", help="serve model calls from the cache only")
    g.add_argument("--record", action="store_true", help="serve cache hits, call and store misses")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pathinsight", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a dataset directory")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="generate insights for every case")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("agent", "direct"))
    p.add_argument("--dataset", help="override the config's dataset")
    p.add_argument("--out", help="override the config's output_dir")
    _add_replay_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--scorer", default="rouge1", help="comma list of rouge1, geval")
    p.add_argument("--novelty", action="store_true", help="also compute Original/Innovation")
    p.add_argument("--config", help="judge endpoints (needed for geval and --novelty)")
    p.add_argument("--out", help="output directory (default: next to --pred)")
    _add_replay_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("redundancy", help="TF-IDF cosine, Self-BLEU, Distinct-2 of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--json")
    p.set_defaults(func=cmd_redundancy)

    p = sub.add_parser("quality", help="LLM quality assessment of dataset cases")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--json")
    _add_replay_flags(p)
    p.set_defaults(func=cmd_quality)

    p = sub.add_parser("init-toy", help="write the bundled toy dataset and mock config")
    p.add_argument("dest")
    p.set_defaults(func=cmd_init_toy)

    p = sub.add_parser("report", help="compare eval results")
    p.add_argument("evals", nargs="+")
    p.add_argument("--json", help="also write the table as JSON")
    p.add_argument("--text", help="also write the rendered table to a file")
    p.add_argument("--by-difficulty", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (ConfigError, DatasetError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except GatewayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
