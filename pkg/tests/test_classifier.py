import pytest
from hypothesis import given, strategies as st

from hopdebate.classifier import (
    ClassifierConfig,
    build_classification_prompt,
    classify,
    classify_detailed,
    parse_type_label,
)
from hopdebate.errors import InvalidConfig, UnrecognizedLabel
from hopdebate.llm import MockBackend

DEFAULT = ClassifierConfig.default()
LABELS = DEFAULT.label_set

EXTENDED = DEFAULT.extended(
    {
        "Bridge-comparison": "Compares attributes of two entities that are each reached through a bridge entity.",
        "Compositional": "Composes a chain of relations where each answer feeds the next question.",
    },
    [
        ("Are both director of film FAQ: Frequently Asked Questions and director of film The Big Money "
         "from the same country?", "Bridge-comparison"),
        ("Why did the founder of Versus die?", "Compositional"),
    ],
)


def test_default_label_set():
    assert LABELS == ("Inference", "Comparison", "Temporal", "Null")


def test_zero_shot_prompt_has_descriptions_and_no_demos():
    cfg = ClassifierConfig("ZeroShot", LABELS, DEFAULT.type_descriptions, ())
    sys_msg = build_classification_prompt("Who?", cfg)[0].content
    assert all(f"- {label}: " in sys_msg for label in LABELS)
    assert "Example" not in sys_msg


def test_icl_prompt_has_one_demo_per_label_in_order():
    sys_msg = build_classification_prompt("Who?", DEFAULT)[0].content
    positions = [sys_msg.index(f"(Output: {label})") for label in LABELS]
    assert positions == sorted(positions)
    assert sys_msg.count("(Output: ") == 4


def test_extended_label_set_shows_new_demo():
    assert EXTENDED.label_set[-1] == "Null"
    sys_msg = build_classification_prompt("Who?", EXTENDED)[0].content
    assert "Why did the founder of Versus die? (Output: Compositional)" in sys_msg


def test_prompt_is_pure():
    a = build_classification_prompt("Same question?", EXTENDED)
    b = build_classification_prompt("Same question?", EXTENDED)
    assert [m.content for m in a] == [m.content for m in b]


def test_icl_requires_demo_per_label():
    cfg = ClassifierConfig("ICL", LABELS, DEFAULT.type_descriptions, DEFAULT.demonstrations[:2])
    with pytest.raises(InvalidConfig):
        cfg.validate()
    with pytest.raises(InvalidConfig):
        ClassifierConfig("Guess", LABELS, DEFAULT.type_descriptions).validate()


@pytest.mark.parametrize("raw,label", [
    ('{"type": "Inference"}', "Inference"),
    ("comparison.", "Comparison"),
    ("Temporal", "Temporal"),
    ("The type is NULL", "Null"),
    ("```json\n{\"type\": \"Temporal\"}\n```", "Temporal"),
])
def test_parse_examples(raw, label):
    assert parse_type_label(raw, LABELS).label == label


def test_parse_unrecognized():
    with pytest.raises(UnrecognizedLabel):
        parse_type_label("I think none apply", LABELS)


def test_parse_prefers_longer_hyphenated_label():
    assert parse_type_label("Bridge-comparison", EXTENDED.label_set).label == "Bridge-comparison"


def test_classify_scripted_label():
    backend = MockBackend([{"tag": "classifier", "response": "Temporal"}])
    assert classify("When?", DEFAULT, backend).label == "Temporal"
    assert len(backend.ledger.entries) == 1


def test_garbage_twice_falls_back_to_null():
    backend = MockBackend([{"tag": "classifier", "response": "banana"}])
    result = classify_detailed("Who?", DEFAULT, backend)
    assert result.label.label == "Null" and result.fallback
    assert len(result.raw_outputs) == 2 and len(backend.ledger.entries) == 2


def test_retry_recovers():
    backend = MockBackend([
        {"tag": "classifier", "contains": "not a valid answer", "response": '{"type": "Comparison"}'},
        {"tag": "classifier", "response": "hmm"},
    ])
    result = classify_detailed("Which is older?", DEFAULT, backend)
    assert result.label.label == "Comparison" and not result.fallback


def test_bridge_comparison_under_extended_set():
    q = ("Are both director of film FAQ: Frequently Asked Questions and director of film The Big Money "
         "from the same country?")
    backend = MockBackend([{"tag": "classifier", "contains": "The Big Money", "response": '{"type": "Bridge-comparison"}'}])
    assert classify(q, EXTENDED, backend).label == "Bridge-comparison"


@given(st.text(max_size=60))
def test_classify_is_total(reply):
    backend = MockBackend([{"tag": "classifier", "response": reply or " "}])
    assert classify("Any question?", DEFAULT, backend).label in LABELS
