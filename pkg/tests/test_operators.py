import json
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from hopdebate.core import OperatorKind, QuestionType
from hopdebate.llm import CallbackBackend, MockBackend, ledger_report
from hopdebate.operators import (
    FINAL_MARKER,
    LeafMode,
    OperatorBudget,
    build_cot_messages,
    extract_answer,
    route_for,
    run_adaptive_step,
    run_cot,
    run_iterative_step,
    run_operator,
    run_single_step,
    run_sub_step,
)
from hopdebate.prompts import load_json
from hopdebate.retrieval import Document, build_index


class CountingIndex:
    def __init__(self, inner):
        self.inner = inner
        self.queries = []

    def retrieve(self, query, k=5):
        self.queries.append(query)
        return self.inner.retrieve(query, k)

    def document(self, doc_id):
        return self.inner.document(doc_id)


DOCS = [
    Document("d1", "Paris", "Paris is the capital of France."),
    Document("d2", "France", "France is a country in Europe whose capital is Paris."),
    Document("d3", "Berlin", "Berlin is the capital of Germany."),
    Document("d4", "Rhine", "The Rhine flows through Germany and France."),
    Document("d5", "Seine", "The Seine flows through Paris."),
]


def index():
    return CountingIndex(build_index(DOCS))


def by_suffix(replies):
    """Backend answering by the last dotted component of the request tag."""
    def fn(req):
        return replies[req.tag.rsplit(".", 1)[-1]]
    return CallbackBackend(fn)


def test_extract_answer():
    assert extract_answer("Reasoning here.\nAnswer: Paris") == ("Paris", True)
    assert extract_answer(f"blah\n{FINAL_MARKER} Berlin.") == ("Berlin", True)
    assert extract_answer("No marker. It is Rome.") == ("It is Rome", False)


def test_cot_answer_and_no_retrieval():
    backend = MockBackend([{"tag": "operator.cot", "response": "The city is famous.\nAnswer: Paris"}])
    out = run_cot("Capital of France?", backend)
    assert out.answer == "Paris" and out.retrieved_doc_ids == () and out.final_marker


def test_cot_prompt_contains_all_four_demos():
    demos = load_json("cot_demos")
    assert len(demos) == 4
    sys_msg = build_cot_messages("Q?")[0].content
    for d in demos:
        block = f"Question: {d['question']}\nLet's think step by step. {d['reasoning']}\nAnswer: {d['answer']}"
        assert block in sys_msg


def test_single_step_one_retrieval_and_docs_in_score_order():
    seen = {}

    def fn(req):
        seen["prompt"] = req.last_user
        return "Answer: Paris"

    idx = index()
    out = run_single_step("capital of France", CallbackBackend(fn), idx, OperatorBudget(k_docs=3))
    assert len(idx.queries) == 1
    expected = idx.inner.retrieve("capital of France", 3).doc_ids
    assert list(out.retrieved_doc_ids) == expected
    positions = [seen["prompt"].index(idx.inner.document(d).text) for d in expected]
    assert positions == sorted(positions)


def test_single_step_without_hits_falls_back_to_closed_book():
    backend = CallbackBackend(lambda req: "Answer: unknown")
    out = run_single_step("zebra quokka", backend, build_index(DOCS))
    assert out.retrieved_doc_ids == () and out.degraded and "closed_book_fallback" in out.notes
    out = run_single_step("anything", backend, None)
    assert out.retrieved_doc_ids == () and "no_index_closed_book" in out.notes


def test_sub_step_two_follow_ups():
    script = {
        "t1": "Follow up: What is the capital of France?",
        "t2": "Follow up: What river flows through Paris?",
        "t3": f"{FINAL_MARKER} Seine",
        "single_step": "Answer: Paris",
    }
    idx = index()
    out = run_sub_step("Which river flows through France's capital?", by_suffix(script), idx, leaf=LeafMode.SINGLE_STEP)
    assert out.answer == "Seine" and len(out.sub_results) == 2
    assert len(idx.queries) == 2
    assert [q for q, _ in out.sub_results] == ["What is the capital of France?", "What river flows through Paris?"]


def test_sub_step_immediate_final():
    out = run_sub_step("Q?", by_suffix({"t1": f"{FINAL_MARKER} yes"}))
    assert out.sub_results == () and out.answer == "yes"


def test_iterative_answers_on_round_one():
    idx = index()
    out = run_iterative_step("capital of France", by_suffix({"r1": f"{FINAL_MARKER} Paris"}), idx)
    assert len(idx.queries) == 1 and out.answer == "Paris"


def test_iterative_queries_follow_sentences():
    script = {"r1": "Paris is the capital.", "r2": "The Seine flows through Paris.", "r3": f"{FINAL_MARKER} Seine"}
    idx = index()
    out = run_iterative_step("river of the capital of France", by_suffix(script), idx, OperatorBudget(max_iterations=4))
    assert idx.queries == ["river of the capital of France", "Paris is the capital.", "The Seine flows through Paris."]
    assert list(out.retrieval_queries) == idx.queries
    assert len(out.retrieved_doc_ids) == len(set(out.retrieved_doc_ids))


def test_iterative_budget_exhausted():
    script = {"r1": "Thinking.", "r2": "Still thinking.", "final": "Paris"}
    idx = index()
    out = run_iterative_step("capital of France", by_suffix(script), idx, OperatorBudget(max_iterations=2))
    assert out.budget_exhausted and out.answer == "Paris" and len(idx.queries) == 2


def test_routing_table():
    assert route_for("Null") == (OperatorKind.COT, None)
    assert route_for("Temporal") == (OperatorKind.SUB_STEP, LeafMode.SINGLE_STEP)
    assert route_for("Comparison") == (OperatorKind.SUB_STEP, LeafMode.SINGLE_STEP)
    assert route_for(QuestionType("Inference")) == (OperatorKind.SUB_STEP, LeafMode.ITERATIVE_STEP)


SUB_SCRIPT = {
    "t1": "Follow up: What is the capital of France?",
    "t2": f"{FINAL_MARKER} Paris",
    "single_step": "Answer: Paris",
    "r1": f"{FINAL_MARKER} Paris",
    "cot": "Answer: Paris",
}


def test_adaptive_temporal_equals_sub_plus_single():
    idx_a, idx_b = index(), index()
    adaptive = run_adaptive_step("When?", "Temporal", by_suffix(SUB_SCRIPT), idx_a)
    direct = run_sub_step("When?", by_suffix(SUB_SCRIPT), idx_b, leaf=LeafMode.SINGLE_STEP,
                          tag="operator.adaptive_step.sub_step")
    assert adaptive.operator == "AdaptiveStep"
    assert replace(adaptive, operator=direct.operator, notes=direct.notes) == direct
    assert idx_a.queries == idx_b.queries


def test_adaptive_inference_uses_iterative_leaf():
    out = run_adaptive_step("Who?", "Inference", by_suffix(SUB_SCRIPT), index())
    assert out.sub_results[0][1].operator == "IterativeStep"


def test_adaptive_null_is_closed_book():
    idx = index()
    out = run_adaptive_step("What is gold's symbol?", "Null", by_suffix(SUB_SCRIPT), idx)
    assert idx.queries == [] and out.total_retrievals == 0 and out.answer == "Paris"


def test_run_operator_requires_type_for_adaptive():
    with pytest.raises(ValueError):
        run_operator(OperatorKind.ADAPTIVE_STEP, "Q?", by_suffix(SUB_SCRIPT))


def test_budget_bounds():
    with pytest.raises(ValueError):
        OperatorBudget(k_docs=2)
    with pytest.raises(ValueError):
        OperatorBudget(max_iterations=0)


def test_outcome_round_trip():
    out = run_sub_step("Q?", by_suffix(SUB_SCRIPT), index(), leaf=LeafMode.SINGLE_STEP)
    assert type(out).from_dict(json.loads(json.dumps(out.to_dict()))) == out


@given(st.sampled_from(list(OperatorKind)), st.sampled_from(["Null", "Temporal", "Inference", "Comparison"]),
       st.integers(1, 4))
def test_usage_reconciles_with_ledger(kind, q_type, iterations):
    backend = by_suffix(SUB_SCRIPT | {"t1": "Follow up: capital of France?", "final": "Paris"})
    out = run_operator(kind, "capital of France", backend, build_index(DOCS), OperatorBudget(max_iterations=iterations),
                       q_type=q_type)
    assert out.usage == ledger_report(backend.ledger).total
