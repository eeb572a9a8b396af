"""Answer one demo question step by step and show what each stage produced.

Runs entirely on the scripted mock backend, so the output is the same on
every machine:

    python demos/walkthrough.py
"""

from __future__ import annotations

from pathlib import Path

from hopdebate.classifier import classify_detailed
from hopdebate.core import Question, Role
from hopdebate.debate import run_debate
from hopdebate.evaluation import AnalysisConfig, attitude_scores, exact_match, token_f1, token_report
from hopdebate.executor import execute_plan
from hopdebate.llm import CallbackBackend, MockBackend, TokenLedger
from hopdebate.pipeline import load_config, load_index

DEMO = Path(__file__).resolve().parent.parent / "fixtures" / "demo"
QUESTION = Question(
    "hq-001",
    "What government position was held by the woman who portrayed Corliss Archer in the film Kiss and Tell?",
    ("Chief of Protocol",),
)


def heading(text: str) -> None:
    print(f"\n== {text} ==")


def main() -> None:
    cfg = load_config(DEMO / "config.json")
    index = load_index(cfg)
    ledger = TokenLedger(QUESTION.id)
    backend = MockBackend.from_file(cfg.backend.script, ledger)

    heading("question type")
    classification = classify_detailed(QUESTION, cfg.classifier, backend)
    print(classification.label.label)

    heading("debate")
    plan, transcript = run_debate(QUESTION, classification.label, cfg.debate, backend)
    for u in transcript.utterances:
        first_line = u.content.strip().splitlines()[0] if u.content.strip() else ""
        print(f"round {u.round} {u.role.value:<12} {first_line[:90]}")
    print(f"plan after {plan.rounds_used} round(s), {plan.source_mode.value} mode:")
    for i, step in enumerate(plan.steps):
        deps = f" (uses step {', '.join(str(d + 1) for d in step.depends_on)})" if step.depends_on else ""
        print(f"  {i + 1}. {step.operator.value}: {step.directive}{deps}")

    heading("execution")
    trace = execute_plan(plan, QUESTION, classification.label, backend, index, cfg.budget)
    for i, outcome in enumerate(trace.steps):
        print(f"step {i + 1} {outcome.operator}: answer {outcome.answer!r}, docs {list(outcome.retrieved_doc_ids)}")
        for sub_q, sub in outcome.sub_results:
            print(f"    {sub_q} -> {sub.answer}")
    print(f"final answer: {trace.final_answer}")
    print(f"EM {exact_match(trace.final_answer, QUESTION.gold_answers)}, "
          f"F1 {token_f1(trace.final_answer, QUESTION.gold_answers):.2f}")

    heading("prompt tokens by phase")
    print(token_report(ledger, dataset="demo").format_table())

    heading("attitude drift between levels")
    # A toy scorer: an utterance naming both operators of a pair counts as "very similar".
    def scorer(req):
        statement, combo = req.last_user.split("\nOperator combination: ")
        names = combo.split("\n")[0].replace(" alone", "").split(" followed by ")
        return "very similar" if all(n.lower() in statement.lower() for n in names) else "unrelated"

    rounds = attitude_scores([transcript], AnalysisConfig(), CallbackBackend(scorer))[0]
    for r in rounds:
        print(f"round {r.round}: first->second mass {r.f_to_s.sum():.2f}, "
              f"second(prev)->first mass {r.s_to_f.sum():.2f}")
    fast_rounds = len(transcript.history(Role.FAST))
    print(f"({fast_rounds} fast and {len(transcript.history(Role.SLOW))} slow utterances scored)")


if __name__ == "__main__":
    main()
