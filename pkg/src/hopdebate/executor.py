"""Run an execution plan step by step and compose the final answer."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any

from .core import ExecutionPlan, OperatorKind, PlanStep, Question, QuestionType, TokenUsage
from .errors import BackendError, InvalidConfig, RetrievalError
from .llm import Backend, CompletionRequest, TokenLedger, system, user
from .operators import (
    ANSWER_MARKER,
    LeafMode,
    OperatorBudget,
    OperatorOutcome,
    extract_answer,
    run_cot,
    run_operator,
)
from .retrieval import RetrievalIndex

log = logging.getLogger(__name__)

AGGREGATE_TAG = "executor.aggregate"
AGGREGATE_INSTRUCTION = "Given the question, the sub-questions and their answers below, state the final answer."

_RETRIEVAL_LEAVES = {
    OperatorKind.SINGLE_STEP: LeafMode.SINGLE_STEP,
    OperatorKind.ITERATIVE_STEP: LeafMode.ITERATIVE_STEP,
}


@dataclass(frozen=True)
class ExecutionTrace:
    steps: tuple[OperatorOutcome, ...]
    final_answer: str
    total_usage: TokenUsage
    aggregation_usage: TokenUsage = field(default_factory=TokenUsage)
    aggregated: bool = False
    step_errors: tuple[str | None, ...] = ()

    @property
    def degraded(self) -> bool:
        return any(s.degraded for s in self.steps)

    def to_dict(self) -> dict[str, Any]:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "final_answer": self.final_answer,
            "total_usage": self.total_usage.to_dict(),
            "aggregation_usage": self.aggregation_usage.to_dict(),
            "aggregated": self.aggregated,
            "step_errors": list(self.step_errors),
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExecutionTrace:
        return cls(
            steps=tuple(OperatorOutcome.from_dict(s) for s in d["steps"]),
            final_answer=d["final_answer"],
            total_usage=TokenUsage.from_dict(d["total_usage"]),
            aggregation_usage=TokenUsage.from_dict(d.get("aggregation_usage")),
            aggregated=d.get("aggregated", False),
            step_errors=tuple(d.get("step_errors", ())),
        )


def summarize_outcome(index: int, step: PlanStep, outcome: OperatorOutcome) -> str:
    """Text handed to later steps: answer, reasoning and sub-answers, never raw documents."""
    lines = [f"Step {index + 1} ({step.operator.value}): answer: {outcome.answer or 'unknown'}"]
    for sub_q, sub in outcome.sub_results:
        lines.append(f"  sub-question: {sub_q} -> {sub.answer or 'unknown'}")
    if outcome.reasoning and not outcome.sub_results:
        lines.append(f"  reasoning: {outcome.reasoning}")
    return "\n".join(lines)


def step_context(plan: ExecutionPlan, i: int, outcomes: list[OperatorOutcome]) -> str:
    step = plan.steps[i]
    parts = []
    if step.directive.strip():
        parts.append(f"Directive for this step: {step.directive.strip()}")
    for d in step.depends_on:
        parts.append(summarize_outcome(d, plan.steps[d], outcomes[d]))
    return "\n".join(parts)


def leaf_for(plan: ExecutionPlan, i: int) -> LeafMode:
    """Leaf mode for a sub-step at ``i``: the first later retrieval step that depends on it."""
    for step in plan.steps[i + 1:]:
        if i in step.depends_on and step.operator in _RETRIEVAL_LEAVES:
            return _RETRIEVAL_LEAVES[step.operator]
    return LeafMode.CLOSED_BOOK


def degrade_step(
    step: PlanStep,
    q: Question | str,
    backend: Backend,
    error: Exception,
    *,
    context: str = "",
    tag: str = "executor.degraded",
    spent: TokenUsage = TokenUsage(),
) -> OperatorOutcome:
    """Closed-book CoT stand-in for a step that failed for a non-backend reason.

    ``spent`` is whatever the failed attempt already consumed; it is folded
    into the substitute's usage so the trace still reconciles with the ledger.
    """
    sub = run_cot(q, backend, context=context, tag=f"{tag}.cot")
    return replace(
        sub,
        usage=sub.usage + spent,
        degraded=True,
        notes=sub.notes + (f"degraded from {step.operator.value}: {type(error).__name__}: {error}",),
    )


def _aggregate(q: Question | str, plan: ExecutionPlan, outcomes: list[OperatorOutcome],
               backend: Backend) -> tuple[str, TokenUsage]:
    text = q.text if isinstance(q, Question) else q
    body = "\n".join(summarize_outcome(i, s, o) for i, (s, o) in enumerate(zip(plan.steps, outcomes)))
    messages = [
        system(f"{AGGREGATE_INSTRUCTION} Finish with a final line of the form '{ANSWER_MARKER} <answer>'."),
        user(f"Question: {text}\n\n{body}"),
    ]
    resp = backend.complete(CompletionRequest(tuple(messages), temperature=0.0, tag=AGGREGATE_TAG))
    answer, _ = extract_answer(resp.content)
    return answer, resp.usage


def execute_plan(
    plan: ExecutionPlan,
    q: Question | str,
    q_type: QuestionType | str | None,
    backend: Backend,
    index: RetrievalIndex | None,
    budget: OperatorBudget = OperatorBudget(),
) -> ExecutionTrace:
    """Run ``plan`` in order with one backend; the original question is the root of the trace-back."""
    if not plan.steps:
        raise InvalidConfig("cannot execute an empty plan")
    outcomes: list[OperatorOutcome] = []
    errors: list[str | None] = []
    for i, step in enumerate(plan.steps):
        if any(d < 0 or d >= i for d in step.depends_on):
            raise InvalidConfig(f"step {i} depends on a step that has not run")
        context = step_context(plan, i, outcomes)
        tag = f"executor.step{i}"
        attempt = TokenLedger(backend.ledger.scope, parent=backend.ledger)
        try:
            outcome = run_operator(
                step.operator, q, backend.with_ledger(attempt), index, budget,
                q_type=q_type, leaf=leaf_for(plan, i), context=context, tag=tag,
            )
            errors.append(None)
        except BackendError:
            raise
        except (RetrievalError, ValueError) as exc:
            log.warning("step %d (%s) failed: %s; substituting closed-book CoT", i, step.operator.value, exc)
            outcome = degrade_step(step, q, backend, exc, context=context, tag=f"{tag}.degraded",
                                   spent=attempt.total())
            errors.append(f"{type(exc).__name__}: {exc}")
        outcomes.append(outcome)

    last = outcomes[-1]
    agg_usage = TokenUsage()
    aggregated = False
    if last.final_marker and last.answer:
        final = last.answer
    else:
        final, agg_usage = _aggregate(q, plan, outcomes, backend)
        aggregated = True
    total = TokenUsage.sum(o.usage for o in outcomes) + agg_usage
    return ExecutionTrace(tuple(outcomes), final, total, agg_usage, aggregated, tuple(errors))
