import json

import pytest
from hypothesis import given, strategies as st

from hopdebate.core import (
    ExecutionPlan,
    Operator,
    OperatorKind,
    PlanStep,
    Question,
    QuestionType,
    Role,
    SourceMode,
    TokenUsage,
    Transcript,
    Utterance,
    canonical_json,
    plan_validate,
)
from hopdebate.debate import DebateConfig


def test_question_invariants():
    with pytest.raises(ValueError):
        Question("q", "   ")
    with pytest.raises(ValueError):
        Question("q", "text", hops=5)
    assert Question("q", "text", hops=3).hops == 3


def test_question_type_label_set_is_configuration():
    assert QuestionType.parse("inference").label == "Inference"
    extended = ("Inference", "Comparison", "Temporal", "Bridge-comparison", "Compositional", "Null")
    assert QuestionType.parse("Compositional", extended).label == "Compositional"
    with pytest.raises(ValueError):
        QuestionType.parse("Compositional")


def test_exactly_five_operator_kinds():
    assert [k.value for k in OperatorKind] == ["CoT", "SingleStep", "IterativeStep", "SubStep", "AdaptiveStep"]
    with pytest.raises(ValueError):
        Operator(OperatorKind.COT, " ")


def test_plan_validate_examples():
    cfg = DebateConfig(max_rounds=3)
    empty = ExecutionPlan((), SourceMode.HARD, "", 1)
    assert "empty steps" in plan_validate(empty, cfg)

    forward = ExecutionPlan(
        (PlanStep(OperatorKind.COT), PlanStep(OperatorKind.SUB_STEP, depends_on=(2,)), PlanStep(OperatorKind.COT)),
        SourceMode.HARD, "", 1,
    )
    assert any("forward dependency" in v for v in plan_validate(forward, cfg))

    ok = ExecutionPlan(
        (PlanStep(OperatorKind.SUB_STEP), PlanStep(OperatorKind.ITERATIVE_STEP, depends_on=(0,))),
        SourceMode.HARD, "", 2,
    )
    assert plan_validate(ok, cfg) == []


def test_plan_validate_round_rules():
    cfg = DebateConfig(max_rounds=3)
    steps = (PlanStep(OperatorKind.COT),)
    assert any("soft mode" in v for v in plan_validate(ExecutionPlan(steps, SourceMode.SOFT, "", 2), cfg))
    assert plan_validate(ExecutionPlan(steps, SourceMode.SOFT, "", 3), cfg) == []
    assert any("exceeds" in v for v in plan_validate(ExecutionPlan(steps, SourceMode.HARD, "", 4), cfg))
    small_pool = DebateConfig(operator_pool=(Operator(OperatorKind.SUB_STEP, "decompose"),))
    assert any("not in pool" in v for v in plan_validate(ExecutionPlan(steps, SourceMode.HARD, "", 1), small_pool))


def test_repeated_operator_is_allowed():
    plan = ExecutionPlan((PlanStep(OperatorKind.SUB_STEP), PlanStep(OperatorKind.SUB_STEP, depends_on=(0,))),
                         SourceMode.HARD, "", 1)
    assert plan_validate(plan, DebateConfig()) == []


def _transcript():
    utts = []
    for t in (1, 2):
        for role in (Role.AFFIRMATIVE, Role.NEGATIVE, Role.FAST, Role.SLOW):
            utts.append(Utterance(t, role, f"{role.value} {t}", TokenUsage(t, 1)))
        utts.append(Utterance(t, Role.JUDGE, "CONTINUE"))
    return Transcript("q1", tuple(utts))


def test_transcript_histories_are_derived():
    tr = _transcript()
    assert [tr.utterances[i].content for i in tr.histories[Role.FAST]] == ["Fast 1", "Fast 2"]
    assert [u.content for u in tr.history(Role.SLOW, before_round=2)] == ["Slow 1"]
    assert tr.rounds == 2
    assert tr.role_order_ok()
    swapped = Transcript("q1", (tr.utterances[1], tr.utterances[0]))
    assert not swapped.role_order_ok()


def test_transcript_jsonl_round_trip():
    tr = _transcript()
    assert Transcript.from_jsonl(tr.to_jsonl()) == tr
    first = json.loads(tr.to_jsonl().splitlines()[0])
    assert list(first) == ["question_id", "round", "role", "content", "usage"]


def test_token_usage_nonnegative():
    with pytest.raises(ValueError):
        TokenUsage(-1, 0)
    assert TokenUsage(10, 5) + TokenUsage(7, 3) == TokenUsage(17, 8)


# -- round-trip properties ----------------------------------------------------------

text = st.text(min_size=1, max_size=30).filter(lambda s: s.strip())
usages = st.builds(TokenUsage, st.integers(0, 10**6), st.integers(0, 10**6))
kinds = st.sampled_from(list(OperatorKind))


@st.composite
def plans(draw):
    n = draw(st.integers(1, 5))
    steps = []
    for i in range(n):
        deps = draw(st.lists(st.integers(0, i - 1), max_size=2, unique=True)) if i else []
        steps.append(PlanStep(draw(kinds), draw(st.text(max_size=20)), tuple(deps)))
    return ExecutionPlan(tuple(steps), draw(st.sampled_from(list(SourceMode))), draw(st.text(max_size=20)),
                         draw(st.integers(1, 5)))


@given(plans())
def test_plan_round_trip(plan):
    assert ExecutionPlan.from_dict(json.loads(canonical_json(plan))) == plan


@given(st.builds(Question, text, text, st.lists(st.text(max_size=10), max_size=3).map(tuple),
                 st.none() | st.sampled_from(["Inference", "Null"]).map(QuestionType),
                 st.none() | st.sampled_from([2, 3, 4])))
def test_question_round_trip(q):
    assert Question.from_dict(json.loads(canonical_json(q))) == q


@given(st.lists(st.builds(Utterance, st.integers(1, 5), st.sampled_from(list(Role)), st.text(max_size=40), usages),
                max_size=10))
def test_transcript_round_trip(utts):
    tr = Transcript("qid", tuple(utts))
    assert Transcript.from_dict(json.loads(canonical_json(tr))) == tr
    assert Transcript.from_jsonl(tr.to_jsonl(), "qid") == tr


@given(usages, kinds, text)
def test_small_types_round_trip(usage, kind, desc):
    assert TokenUsage.from_dict(json.loads(canonical_json(usage))) == usage
    assert Operator.from_dict(json.loads(canonical_json(Operator(kind, desc)))) == Operator(kind, desc)
