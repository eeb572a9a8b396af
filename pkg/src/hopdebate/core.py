"""Domain value types shared by every stage of the pipeline.

All types are frozen dataclasses with a canonical JSON form
(``to_dict`` / ``from_dict``). Field order in the JSON output follows the
dataclass field order so golden files stay stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence

DEFAULT_LABELS: tuple[str, ...] = ("Inference", "Comparison", "Temporal", "Null")


class OperatorKind(str, Enum):
    COT = "CoT"
    SINGLE_STEP = "SingleStep"
    ITERATIVE_STEP = "IterativeStep"
    SUB_STEP = "SubStep"
    ADAPTIVE_STEP = "AdaptiveStep"

    def __str__(self) -> str:
        return self.value


class Role(str, Enum):
    AFFIRMATIVE = "Affirmative"
    NEGATIVE = "Negative"
    FAST = "Fast"
    SLOW = "Slow"
    JUDGE = "Judge"

    def __str__(self) -> str:
        return self.value


# speaking order inside one debate round
ROLE_ORDER: tuple[Role, ...] = (Role.AFFIRMATIVE, Role.NEGATIVE, Role.FAST, Role.SLOW, Role.JUDGE)


class SourceMode(str, Enum):
    HARD = "Hard"
    SOFT = "Soft"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError(f"token counts must be nonnegative: {self}")

    def __add__(self, other: TokenUsage) -> TokenUsage:
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    @staticmethod
    def sum(usages: Iterable[TokenUsage]) -> TokenUsage:
        total = TokenUsage()
        for u in usages:
            total = total + u
        return total

    def to_dict(self) -> dict[str, int]:
        return {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens}

    @classmethod
    def from_dict(cls, d: dict[str, Any] | Sequence[int] | None) -> TokenUsage:
        if d is None:
            return cls()
        if isinstance(d, (list, tuple)):
            return cls(int(d[0]), int(d[1]))
        return cls(int(d.get("prompt_tokens", 0)), int(d.get("completion_tokens", 0)))


@dataclass(frozen=True)
class QuestionType:
    """A question-type label. The legal label set is configuration data."""

    label: str

    def __str__(self) -> str:
        return self.label

    @classmethod
    def parse(cls, label: str, label_set: Sequence[str] = DEFAULT_LABELS) -> QuestionType:
        for member in label_set:
            if member.lower() == label.strip().lower():
                return cls(member)
        raise ValueError(f"{label!r} is not in the label set {list(label_set)}")


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold_answers: tuple[str, ...] = ()
    declared_type: QuestionType | None = None
    hops: int | None = None

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError(f"question {self.id!r} has empty text")
        if self.hops is not None and self.hops not in (2, 3, 4):
            raise ValueError(f"question {self.id!r}: hops must be 2, 3 or 4, got {self.hops}")
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "question": self.text,
            "answers": list(self.gold_answers),
            "type": self.declared_type.label if self.declared_type else None,
            "hops": self.hops,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Question:
        t = d.get("type")
        return cls(
            id=str(d["id"]),
            text=d.get("question", d.get("text", "")),
            gold_answers=tuple(d.get("answers", ()) or ()),
            declared_type=QuestionType(t) if t else None,
            hops=d.get("hops"),
        )


@dataclass(frozen=True)
class Operator:
    kind: OperatorKind
    description: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", OperatorKind(self.kind))
        if not self.description.strip():
            raise ValueError(f"operator {self.kind} needs a description")

    def to_dict(self) -> dict[str, str]:
        return {"kind": self.kind.value, "description": self.description}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Operator:
        return cls(OperatorKind(d["kind"]), d["description"])


@dataclass(frozen=True)
class PlanStep:
    operator: OperatorKind
    directive: str = ""
    depends_on: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "operator", OperatorKind(self.operator))
        object.__setattr__(self, "depends_on", tuple(int(i) for i in self.depends_on))

    def to_dict(self) -> dict[str, Any]:
        return {
            "operator": self.operator.value,
            "directive": self.directive,
            "depends_on": list(self.depends_on),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PlanStep:
        return cls(OperatorKind(d["operator"]), d.get("directive", ""), tuple(d.get("depends_on", ())))


@dataclass(frozen=True)
class ExecutionPlan:
    steps: tuple[PlanStep, ...]
    source_mode: SourceMode
    judge_rationale: str = ""
    rounds_used: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "source_mode", SourceMode(self.source_mode))

    @property
    def operators(self) -> list[OperatorKind]:
        return [s.operator for s in self.steps]

    def to_dict(self) -> dict[str, Any]:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "source_mode": self.source_mode.value,
            "judge_rationale": self.judge_rationale,
            "rounds_used": self.rounds_used,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExecutionPlan:
        return cls(
            steps=tuple(PlanStep.from_dict(s) for s in d["steps"]),
            source_mode=SourceMode(d["source_mode"]),
            judge_rationale=d.get("judge_rationale", ""),
            rounds_used=int(d.get("rounds_used", 1)),
        )


@dataclass(frozen=True)
class Utterance:
    round: int
    role: Role
    content: str
    usage: TokenUsage = field(default_factory=TokenUsage)

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))
        if self.round < 1:
            raise ValueError(f"round must be >= 1, got {self.round}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "role": self.role.value,
            "content": self.content,
            "usage": self.usage.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Utterance:
        return cls(int(d["round"]), Role(d["role"]), d["content"], TokenUsage.from_dict(d.get("usage")))


@dataclass(frozen=True)
class Transcript:
    """Ordered debate utterances; per-role histories are derived, never stored separately."""

    question_id: str
    utterances: tuple[Utterance, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "utterances", tuple(self.utterances))

    def appended(self, utterance: Utterance) -> Transcript:
        return Transcript(self.question_id, self.utterances + (utterance,))

    @property
    def histories(self) -> dict[Role, list[int]]:
        out: dict[Role, list[int]] = {r: [] for r in ROLE_ORDER}
        for i, u in enumerate(self.utterances):
            out[u.role].append(i)
        return out

    def history(self, role: Role, before_round: int | None = None) -> list[Utterance]:
        """Utterances of ``role`` in round order, optionally only rounds < ``before_round``."""
        return [
            u for u in self.utterances
            if u.role == role and (before_round is None or u.round < before_round)
        ]

    def in_round(self, round_: int, role: Role) -> list[Utterance]:
        return [u for u in self.utterances if u.round == round_ and u.role == role]

    @property
    def rounds(self) -> int:
        return max((u.round for u in self.utterances), default=0)

    @property
    def usage(self) -> TokenUsage:
        return TokenUsage.sum(u.usage for u in self.utterances)

    def role_order_ok(self) -> bool:
        """True when rounds are nondecreasing and roles follow the speaking order within a round."""
        rank = {r: i for i, r in enumerate(ROLE_ORDER)}
        prev = (0, -1)
        for u in self.utterances:
            key = (u.round, rank[u.role])
            if key < prev:
                return False
            prev = key
        return True

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "utterances": [u.to_dict() for u in self.utterances],
            "histories": {r.value: idx for r, idx in self.histories.items()},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Transcript:
        return cls(d["question_id"], tuple(Utterance.from_dict(u) for u in d["utterances"]))

    def to_jsonl(self) -> str:
        lines = [
            canonical_json({"question_id": self.question_id, **u.to_dict()})
            for u in self.utterances
        ]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str, question_id: str | None = None) -> Transcript:
        utterances = []
        qid = question_id
        for line in text.split("\n"):
            if not line.strip():
                continue
            d = json.loads(line)
            qid = qid or d.get("question_id")
            utterances.append(Utterance.from_dict(d))
        return cls(qid or "", tuple(utterances))


def canonical_json(value: Any, indent: int | None = None) -> str:
    """Serialize a core value (or plain data) with stable field order."""
    if hasattr(value, "to_dict"):
        value = value.to_dict()
    return json.dumps(value, ensure_ascii=False, indent=indent)


def plan_validate(plan: ExecutionPlan, config: Any) -> list[str]:
    """Return every invariant violation of ``plan``; an empty list means valid.

    ``config`` needs a ``max_rounds`` attribute and may carry an
    ``operator_pool`` (sequence of :class:`Operator`).
    """
    violations: list[str] = []
    if not plan.steps:
        violations.append("empty steps")
    for i, step in enumerate(plan.steps):
        for dep in step.depends_on:
            if dep < 0:
                violations.append(f"step {i}: negative dependency {dep}")
            elif dep >= i:
                violations.append(f"step {i}: forward dependency on step {dep}")
    max_rounds = getattr(config, "max_rounds", None)
    if plan.rounds_used < 1:
        violations.append(f"rounds_used {plan.rounds_used} < 1")
    if max_rounds is not None:
        if plan.rounds_used > max_rounds:
            violations.append(f"rounds_used {plan.rounds_used} exceeds max rounds {max_rounds}")
        if plan.source_mode is SourceMode.SOFT and plan.rounds_used != max_rounds:
            violations.append("soft mode requires rounds_used == max rounds")
    pool = getattr(config, "operator_pool", None)
    if pool:
        allowed = {op.kind for op in pool}
        for i, step in enumerate(plan.steps):
            if step.operator not in allowed:
                violations.append(f"step {i}: operator {step.operator} not in pool")
    return violations
