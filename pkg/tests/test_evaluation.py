import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathinsight.dataset import load_dataset
from pathinsight.evaluation import (
    CaseEval,
    EvaluationError,
    InsightVerdict,
    MatrixCellError,
    MatrixStore,
    NoveltyError,
    QualityVerdict,
    ScoreMatrix,
    accepted_by_vote,
    aggregate,
    eval_document,
    evaluate_matrix,
    insight_f1,
    insight_precision,
    insight_recall,
    novelty,
    novelty_from_verdicts,
    novelty_scores,
    quality_assess,
    quality_rates,
    score_matrix,
)
from pathinsight.gateway import Gateway, MockBackend
from pathinsight.textmetrics import rouge1
from oracles import oracle_precision, oracle_recall, oracle_rouge1

unit = st.floats(0, 1, allow_nan=False)
matrices = st.integers(1, 6).flatmap(
    lambda r: st.integers(1, 6).flatmap(lambda c: st.lists(st.lists(unit, min_size=c, max_size=c), min_size=r, max_size=r))
)


# score matrix ----------------------------------------------------------------


def test_rouge_matrix_identity():
    assert score_matrix(["a b"], ["a b"], "rouge1").scores == [[1.0]]


def test_rouge_matrix_matches_oracle():
    gt = ["tumor invades muscle", "margins clear"]
    gen = ["tumor in muscle", "clear margins seen", "no nodes"]
    m = score_matrix(gt, gen, "rouge1")
    assert (m.gt_count, m.gen_count) == (2, 3)
    assert m.scores == [[oracle_rouge1(a, b) for b in gen] for a in gt]


def test_empty_side():
    with pytest.raises(EvaluationError, match="empty insight set"):
        score_matrix([], ["a"], "rouge1")
    with pytest.raises(EvaluationError, match="empty insight set"):
        score_matrix(["a"], [], "rouge1")


def test_matrix_entries_bounded():
    with pytest.raises(ValueError):
        ScoreMatrix("rouge1", [[1.5]])
    with pytest.raises(ValueError):
        ScoreMatrix("rouge1", [[0.1, 0.2], [0.3]])


def _judges(a="6", b="8"):
    return Gateway({"ja": MockBackend(default=a), "jb": MockBackend(default=b)})


def test_geval_mock_arithmetic():
    m = score_matrix(["x", "y"], ["p", "q", "r"], "geval", gateway=_judges(), judges=["ja", "jb"], parallelism=3)
    assert all(v == 0.7 for row in m.scores for v in row)
    assert m.judge_scores[0][0] == [6, 8]
    assert m.column_max_raw(0) == 7.0


@given(st.integers(1, 10), st.integers(1, 10))
def test_geval_normalisation(a, b):
    m = score_matrix(["x"], ["y"], "geval", gateway=_judges(str(a), str(b)), judges=["ja", "jb"])
    assert m.scores[0][0] == (a + b) / 2 / 10


def test_geval_needs_two_judges():
    with pytest.raises(EvaluationError):
        score_matrix(["x"], ["y"], "geval", gateway=_judges(), judges=["ja"])


def test_geval_cell_error_has_coordinates():
    gw = Gateway({"ja": MockBackend(default="5"), "jb": MockBackend([(r"bad", "nonsense")], default="5")})
    with pytest.raises(MatrixCellError) as err:
        score_matrix(["ok", "ok2"], ["fine", "bad one"], "geval", gateway=gw, judges=["ja", "jb"])
    assert err.value.gen_index == 1


def test_matrix_store_round_trip(tmp_path):
    store = MatrixStore(tmp_path)
    m = ScoreMatrix("geval", [[0.5, 0.7]], [[[4, 6], [6, 8]]])
    store.put("run", "case-1", m)
    assert store.get("run", "case-1", "geval") == m
    assert store.get("run", "case-1", "rouge1") is None


# recall / precision / F1 ---------------------------------------------------------


def test_recall_precision_examples():
    m = ScoreMatrix("rouge1", [[1, 0], [0, 0]])
    assert insight_recall(m) == 0.5 and insight_precision(m) == 0.5
    assert insight_recall(ScoreMatrix("rouge1", [[1]])) == 1.0
    zero = ScoreMatrix("rouge1", [[0.0] * 4 for _ in range(3)])
    assert insight_recall(zero) == 0.0 and insight_precision(zero) == 0.0
    assert insight_precision(ScoreMatrix("rouge1", [[0.4], [0.9]])) == 0.9


def test_f1_examples():
    assert insight_f1(0.5, 0.5) == 0.5
    assert insight_f1(0.3, 0.6) == pytest.approx(0.4, abs=1e-12)
    assert insight_f1(0, 0.8) == 0.0
    assert insight_f1(0, 0) == 0.0


@settings(max_examples=200)
@given(matrices)
def test_metric_identities(rows):
    m = ScoreMatrix("rouge1", rows)
    r, p = insight_recall(m), insight_precision(m)
    assert r == pytest.approx(oracle_recall(rows), abs=1e-12)
    assert p == pytest.approx(oracle_precision(rows), abs=1e-12)
    f = insight_f1(r, p)
    if r + p:
        assert abs(f - 2 * r * p / (r + p)) < 1e-12
    assert min(r, p) - 1e-12 <= f <= max(r, p) + 1e-12


@settings(max_examples=100)
@given(matrices, st.randoms())
def test_permutation_invariance(rows, rnd):
    m = ScoreMatrix("rouge1", rows)
    cols = list(range(len(rows[0])))
    rnd.shuffle(cols)
    col_perm = ScoreMatrix("rouge1", [[row[j] for j in cols] for row in rows])
    row_perm = ScoreMatrix("rouge1", rnd.sample(rows, len(rows)))
    assert insight_recall(col_perm) == pytest.approx(insight_recall(m))
    assert insight_precision(row_perm) == pytest.approx(insight_precision(m))


@settings(max_examples=100)
@given(matrices, st.data())
def test_appending_generated_never_lowers_recall(rows, data):
    extra = data.draw(st.lists(unit, min_size=len(rows), max_size=len(rows)))
    grown = [row + [e] for row, e in zip(rows, extra)]
    assert insight_recall(ScoreMatrix("rouge1", grown)) >= insight_recall(ScoreMatrix("rouge1", rows))


def test_appending_can_lower_precision():
    before = ScoreMatrix("rouge1", [[1.0]])
    after = ScoreMatrix("rouge1", [[1.0, 0.0]])
    assert insight_precision(after) < insight_precision(before)


def test_permutation_matrix_equal_metrics():
    m = ScoreMatrix("rouge1", [[0, 1, 0], [1, 0, 0], [0, 0, 1]])
    assert insight_recall(m) == insight_precision(m) == insight_f1(1.0, 1.0) == 1.0


def test_evaluate_matrix_none_is_zero():
    ev = evaluate_matrix("c", None, "rouge1")
    assert (ev.recall, ev.precision, ev.f1) == (0.0, 0.0, 0.0)


# novelty -----------------------------------------------------------------------


def test_novelty_worked_example():
    verdicts = [
        InsightVerdict(0, "a", 7.0, True),
        InsightVerdict(1, "b", 8.0, True),
        InsightVerdict(2, "c", 3.0, False, [1, 1, 0]),
        InsightVerdict(3, "d", 5.0, False, [0, 0, 1]),
    ]
    rep = novelty_from_verdicts(verdicts)
    assert (rep.correct_count, rep.incorrect_count, rep.accepted_novel) == (2, 2, 1)
    assert rep.original == 0.5 and rep.innovation == 0.75


def test_novelty_all_correct():
    assert novelty_scores(4, 0, 0) == (1.0, 1.0)


def test_novelty_empty():
    with pytest.raises(EvaluationError, match="empty insight set"):
        novelty_scores(0, 0, 0)


@given(st.integers(0, 20), st.lists(st.lists(st.integers(0, 1), min_size=3, max_size=3), max_size=20))
def test_novelty_law(m, votes):
    if m + len(votes) == 0:
        return
    accepted = sum(1 for v in votes if sum(v) >= 2)
    assert accepted == sum(accepted_by_vote(v) for v in votes)
    original, innovation = novelty_scores(m, len(votes), accepted)
    assert original == m / (m + len(votes))
    assert innovation == (m + accepted) / (m + len(votes))
    assert 0 <= original <= innovation <= 1


def _case(toy_dir):
    return load_dataset(toy_dir).cases[1]


def test_novelty_threshold_is_strict(toy_dir):
    case = _case(toy_dir)
    # raw means 5.0 and 5.5: only the second is correct
    m = ScoreMatrix("geval", [[0.5, 0.55]], [[[5, 5], [5, 6]]])
    gt = case.ground_truth[:1]
    judges = {n: MockBackend(default="Verdict: 0") for n in ("n1", "n2", "n3")}
    rep = novelty(["x", "y"], gt, case, list(judges), m, Gateway(judges))
    assert [v.correct for v in rep.verdicts] == [False, True]
    assert rep.original == 0.5 and rep.innovation == 0.5


def test_novelty_votes_and_context(toy_dir):
    case = _case(toy_dir)
    m = ScoreMatrix("geval", [[0.2, 0.9]], [[[2, 2], [9, 9]]])
    judges = {
        "n1": MockBackend(default="Reasoning.\nVerdict: 1"),
        "n2": MockBackend(default="Verdict: 1"),
        "n3": MockBackend(default="Verdict: 0"),
    }
    rep = novelty(["novel idea", "matched"], case.ground_truth[:1], case, list(judges), m, Gateway(judges))
    assert rep.accepted_novel == 1 and rep.innovation == 1.0 and rep.original == 0.5
    sent = judges["n1"].calls[0]
    assert sent.images() == [case.read_image()]
    text = sent.prompt_text()
    assert case.goal in text and case.ground_truth[0].insight_text in text and "novel idea" in text
    # correct insights are never sent to the judges
    assert len(judges["n1"].calls) == 1


def test_novelty_judge_count(toy_dir):
    case = _case(toy_dir)
    m = ScoreMatrix("geval", [[0.2]], [[[2, 2]]])
    with pytest.raises(EvaluationError):
        novelty(["x"], case.ground_truth[:1], case, ["a", "b"], m, Gateway({}))


def test_novelty_failure_keeps_partial(toy_dir):
    case = _case(toy_dir)
    m = ScoreMatrix("geval", [[0.2, 0.3]], [[[2, 2], [3, 3]]])
    judges = {
        "n1": MockBackend(default="Verdict: 1"),
        "n2": MockBackend(default="Verdict: 1"),
        "n3": MockBackend([(r"bad", "???")], default="Verdict: 0"),
    }
    with pytest.raises(NoveltyError) as err:
        novelty(["fine", "bad"], case.ground_truth[:1], case, list(judges), m, Gateway(judges))
    assert err.value.partial[0].votes == [1, 1, 0]


# quality -----------------------------------------------------------------------


def test_quality_all_true(toy_dir):
    case = _case(toy_dir)
    gw = Gateway({"q": MockBackend(default='{"correctness": true, "rationality": true, "coherence": true}')})
    assert quality_assess(case, "q", gw).as_tuple() == (True, True, True)


def test_quality_rejects_coherence(toy_dir):
    case = _case(toy_dir)
    gw = Gateway({"q": MockBackend(default='{"correctness": true, "rationality": true, "coherence": false}')})
    assert quality_assess(case, "q", gw).as_tuple() == (True, True, False)


def test_quality_format_violation(toy_dir):
    from pathinsight.gateway import JudgeFormatError

    gw = Gateway({"q": MockBackend(default="looks fine to me")})
    with pytest.raises(JudgeFormatError):
        quality_assess(_case(toy_dir), "q", gw)


def test_quality_rates():
    rates = quality_rates([QualityVerdict("a", True, True, False), QualityVerdict("b", True, False, False)])
    assert rates == {"correctness": 1.0, "rationality": 0.5, "coherence": 0.0}


# aggregation -------------------------------------------------------------------


def test_aggregate_mean_and_groups():
    evals = [CaseEval("a", "rouge1", 0.1, 0.3, 0.2, 1), CaseEval("b", "rouge1", 0.5, 0.3, 0.4, 2)]
    agg = aggregate(evals)
    assert agg["f1"] == pytest.approx(0.3)
    assert set(agg["by_difficulty"]) == {"1", "2"}
    assert sum(g["n_cases"] for g in agg["by_difficulty"].values()) == 2


def test_aggregate_single_case():
    ev = CaseEval("a", "rouge1", 0.1, 0.3, 0.15, 3)
    agg = aggregate([ev])
    assert (agg["recall"], agg["precision"], agg["f1"]) == (0.1, 0.3, 0.15)


def test_eval_document_schema():
    doc = eval_document("run", "rouge1", [CaseEval("a", "rouge1", 0.5, 0.5, 0.5, 1)])
    assert set(doc) >= {"run_id", "scorer", "cases", "novelty", "aggregate"}
    assert doc["cases"][0]["case_id"] == "a"


def test_random_matrices_against_oracle():
    rng = random.Random(3)
    for _ in range(500):
        rows = [[rng.random() for _ in range(rng.randint(1, 5))]]
        rows += [[rng.random() for _ in range(len(rows[0]))] for _ in range(rng.randint(0, 4))]
        m = ScoreMatrix("rouge1", rows)
        assert abs(insight_recall(m) - oracle_recall(rows)) < 1e-12
        assert abs(insight_precision(m) - oracle_precision(rows)) < 1e-12


def test_rouge_oracle_in_matrix_symmetry():
    assert rouge1("a b c", "c d") == oracle_rouge1("c d", "a b c")
