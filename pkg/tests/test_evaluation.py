import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hopdebate.core import Question, QuestionType, Role, TokenUsage, Transcript, Utterance
from hopdebate.errors import IdMismatchError, InvalidConfig
from hopdebate.evaluation import (
    AnalysisConfig,
    Prediction,
    QuestionRecord,
    acc_llm,
    aggregate,
    attitude_scores,
    build_report,
    combine_attitudes,
    evaluate_run,
    exact_match,
    map_phrase,
    normalize_answer,
    token_f1,
    token_report,
)
from hopdebate.llm import CallbackBackend, MockBackend, TokenLedger

from oracles import f1_by_hand, squad_normalize


@pytest.mark.parametrize("raw,norm", [("The Big Money!", "big money"), ("Paris", "paris"),
                                      ("a  cat,  the hat", "cat hat")])
def test_normalize_examples(raw, norm):
    assert normalize_answer(raw) == norm


def test_exact_match_examples():
    assert exact_match("Paris", ["Paris"]) == 1
    assert exact_match("the Paris", ["paris"]) == 1
    assert exact_match("Paris, France", ["Paris"]) == 0
    assert exact_match("Lyon", ["Paris", "Lyon"]) == 1


def test_f1_examples():
    assert token_f1("Paris", "Paris") == 1.0
    assert token_f1("paris france", "paris") == pytest.approx(2 / 3)
    assert token_f1("berlin", "paris") == 0.0
    assert token_f1("paris france", ["london", "paris"]) == pytest.approx(2 / 3)


def test_acc_llm_examples():
    q = Question("q", "Capital?", ("Paris",))
    assert acc_llm("Paris", ["Paris"], q, MockBackend([{"tag": "eval.acc", "response": "YES"}])) == 1
    assert acc_llm("Paris", ["Paris"], q, MockBackend([{"tag": "eval.acc", "response": "NO"}])) == 0
    garbage = MockBackend([{"tag": "eval.acc", "response": "hmm"}])
    assert acc_llm("Paris", ["Paris"], q, garbage) == 1
    assert acc_llm("Lyon", ["Paris"], q, garbage) == 0


def _rec(i, f1, t="Inference", em=0, failed=False, hops=2):
    return QuestionRecord(f"q{i}", em, f1, None, t, hops, TokenUsage(), failed)


def test_aggregate_examples():
    assert aggregate([_rec(1, 0.5), _rec(2, 1.0)]).f1 == 0.75
    report = build_report([_rec(1, 0.5), _rec(2, 1.0, "Null"), _rec(3, 0.0, failed=True)])
    assert set(report.by_type) == {"Inference", "Null"}
    assert report.by_type["Null"].f1 == 1.0
    assert report.overall.failed == 1 and report.overall.f1 == 0.75


def test_evaluate_run_types_and_ids():
    data = [Question("a", "Q1?", ("x",), QuestionType("Null")), Question("b", "Q2?", ("y z",))]
    preds = [Prediction("a", "x"), Prediction("b", "y", predicted_type="Temporal")]
    report = evaluate_run(preds, data)
    assert [r.type for r in report.records] == ["Null", "Temporal"]
    assert report.overall.em == 0.5 and report.by_type["Temporal"].f1 == pytest.approx(2 / 3)
    with pytest.raises(IdMismatchError):
        evaluate_run([Prediction("zzz", "x")], data)


def test_token_report_examples():
    empty = token_report(TokenLedger())
    assert empty.avg_prompt_tokens == 0.0 and empty.total == TokenUsage()
    ledger = TokenLedger()
    ledger.record("debate.fast", TokenUsage(60, 1), scope="q1")
    ledger.record("classifier", TokenUsage(40, 1), scope="q1")
    ledger.record("executor.step0", TokenUsage(300, 1), scope="q2")
    rep = token_report(ledger)
    assert rep.questions == 2 and rep.avg_prompt_tokens == 200
    assert rep.avg_prompt_by_phase["debate"] == 30 and rep.avg_prompt_by_phase["executor"] == 150
    assert sum(rep.avg_prompt_by_phase.values()) == rep.avg_prompt_tokens


# -- attitudes ---------------------------------------------------------------------------

def test_phrase_map():
    m = AnalysisConfig().similarity_phrase_map
    assert map_phrase("Very similar.", m) == 0.7
    assert map_phrase("similar", m) == 0.5
    assert map_phrase("dissimilar", m) is None
    with pytest.raises(InvalidConfig):
        AnalysisConfig(alpha=1.5).validate()


def test_combine_examples():
    z, j = np.zeros((5, 5)), np.ones((5, 5))
    f_to_s, s_to_f = combine_attitudes(z, z, z, z, z, z)
    assert not f_to_s.any() and not s_to_f.any()
    f_to_s, s_to_f = combine_attitudes(j, j, j, j, z, z, alpha=0.8, beta=0.8)
    assert np.allclose(f_to_s, 2 * j) and np.allclose(s_to_f, 1.6 * j)


mats = st.lists(st.floats(-5, 5), min_size=25, max_size=25).map(lambda v: np.array(v).reshape(5, 5))


@given(st.lists(mats, min_size=6, max_size=6), st.floats(0, 1), st.floats(0, 1), st.integers(0, 5), st.floats(-3, 3))
def test_combine_is_linear_in_each_input(ms, alpha, beta, which, c):
    base_fs, base_sf = combine_attitudes(*ms, alpha=alpha, beta=beta)
    scaled = list(ms)
    scaled[which] = ms[which] * (1 + c)
    fs, sf = combine_attitudes(*scaled, alpha=alpha, beta=beta)
    coef_fs = [alpha, alpha, 1 - alpha, 1 - alpha, 0, 0][which]
    coef_sf = [beta, beta, 0, 0, 1 - beta, 1 - beta][which]
    assert np.allclose(fs - base_fs, coef_fs * c * ms[which], atol=1e-9)
    assert np.allclose(sf - base_sf, coef_sf * c * ms[which], atol=1e-9)


def test_attitude_scores_use_previous_round_second_level():
    utts = []
    for t in (1, 2):
        for role in (Role.AFFIRMATIVE, Role.NEGATIVE, Role.FAST, Role.SLOW):
            utts.append(Utterance(t, role, f"{role.value}{t}"))
        utts.append(Utterance(t, Role.JUDGE, "CONTINUE"))
    tr = Transcript("q", tuple(utts))
    # Fast utterances are "very similar" to everything, others unrelated.
    scorer = CallbackBackend(lambda req: "very similar" if "Statement: Fast" in req.last_user else "unrelated")
    rounds = attitude_scores([tr], AnalysisConfig(), scorer)[0]
    assert np.allclose(rounds[0].f_to_s, 0.2 * 0.7) and np.allclose(rounds[0].s_to_f, 0.0)
    assert np.allclose(rounds[1].s_to_f, 0.2 * 0.7)
    # Two distinct fast texts and six others, each scored once over 25 pairs.
    assert len(scorer.ledger.entries) == 8 * 25


# -- metric properties ------------------------------------------------------------------

answers = st.text(alphabet=st.sampled_from(list("abc ,.!THE")), max_size=20)


@given(answers, answers)
def test_metric_properties(p, g):
    assert token_f1(p, g) == pytest.approx(token_f1(g, p))
    assert token_f1(p, g) == pytest.approx(f1_by_hand(p, g))
    assert normalize_answer(p) == squad_normalize(p)
    if exact_match(p, [g]):
        assert token_f1(p, g) == 1.0
    assert 0.0 <= token_f1(p, g) <= 1.0


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 1), st.sampled_from(["Inference", "Null"]), st.booleans()), max_size=15),
       st.randoms())
def test_aggregates_permutation_invariant(items, rnd):
    records = [_rec(i, f1, t, failed=bad) for i, (f1, t, bad) in enumerate(items)]
    shuffled = list(records)
    rnd.shuffle(shuffled)
    a, b = build_report(records), build_report(shuffled)
    assert a.overall == b.overall and a.by_type == b.by_type and a.by_hops == b.by_hops
