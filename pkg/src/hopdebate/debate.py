"""Two-level debate that turns a question and its type into an execution plan.

Round ``t`` runs affirmative -> negative -> fast -> slow -> judge. Level-one
debaters see the level-two outputs of round ``t-1`` only; the fast debater
sees the current round's level-one viewpoints and its own history; the
slow debater additionally sees the current fast viewpoint. The judge either
stops with a plan (hard mode, rounds before the last) or, at the round
limit, extracts one from the slow debater's history (soft mode).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Sequence

from .core import (
    ExecutionPlan,
    Operator,
    OperatorKind,
    PlanStep,
    Question,
    QuestionType,
    Role,
    SourceMode,
    Transcript,
    Utterance,
)
from .errors import InvalidConfig
from .llm import Backend, ChatMessage, CompletionRequest, assistant, system, user
from .operators import LeafMode, default_operator_pool, route_for
from .prompts import load_json, load_template, number_word, ordinal, render

NULL = "Null"
CONTINUE_TOKEN = "CONTINUE"
DEBATE_LEVELS: dict[str, str] = load_json("debate_levels")


@dataclass(frozen=True)
class DebateConfig:
    max_rounds: int = 3
    turns_per_side_per_round: int = 2
    first_level_debaters: int = 2
    second_level_debaters: int = 2
    debate_level: str = "L2"
    operator_pool: tuple[Operator, ...] = field(default_factory=default_operator_pool)
    debater_temperature: float = 0.7
    judge_temperature: float = 0.0
    max_output_tokens: int = 512

    def __post_init__(self) -> None:
        object.__setattr__(self, "operator_pool", tuple(self.operator_pool))

    def validate(self) -> None:
        if self.max_rounds < 1:
            raise InvalidConfig("max_rounds must be >= 1")
        if self.turns_per_side_per_round < 1:
            raise InvalidConfig("turns_per_side_per_round must be >= 1")
        if self.first_level_debaters < 2 or self.second_level_debaters < 2:
            raise InvalidConfig("each debate level needs at least two debaters")
        if self.debate_level not in DEBATE_LEVELS:
            raise InvalidConfig(f"debate_level must be one of {sorted(DEBATE_LEVELS)}")
        if not self.operator_pool:
            raise InvalidConfig("operator pool is empty")
        kinds = [op.kind for op in self.operator_pool]
        if len(set(kinds)) != len(kinds):
            raise InvalidConfig("operator pool lists an operator twice")

    # ceil to the affirmative / fast side, floor to the other
    @property
    def affirmative_seats(self) -> int:
        return math.ceil(self.first_level_debaters / 2)

    @property
    def negative_seats(self) -> int:
        return self.first_level_debaters // 2

    @property
    def fast_seats(self) -> int:
        return math.ceil(self.second_level_debaters / 2)

    @property
    def slow_seats(self) -> int:
        return self.second_level_debaters // 2

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_rounds": self.max_rounds,
            "turns_per_side_per_round": self.turns_per_side_per_round,
            "first_level_debaters": self.first_level_debaters,
            "second_level_debaters": self.second_level_debaters,
            "debate_level": self.debate_level,
            "operator_pool": [op.to_dict() for op in self.operator_pool],
            "debater_temperature": self.debater_temperature,
            "judge_temperature": self.judge_temperature,
            "max_output_tokens": self.max_output_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DebateConfig:
        kwargs = {k: v for k, v in d.items() if k != "operator_pool"}
        pool = d.get("operator_pool")
        if pool is not None:
            if isinstance(pool, dict):
                kwargs["operator_pool"] = tuple(Operator(OperatorKind(k), v) for k, v in pool.items())
            else:
                kwargs["operator_pool"] = tuple(Operator.from_dict(op) for op in pool)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise InvalidConfig(f"bad debate config: {exc}") from exc


@dataclass
class DebateState:
    transcript: Transcript
    round: int = 1
    terminated: bool = False
    plan: ExecutionPlan | None = None


@dataclass(frozen=True)
class Continue:
    pass


@dataclass(frozen=True)
class Stop:
    plan: ExecutionPlan


# -- prompt assembly ------------------------------------------------------------

def _plural(n: int, noun: str) -> str:
    return f"{number_word(n)} {noun}{'' if n == 1 else 's'}"


def _debater_counts(cfg: DebateConfig) -> str:
    if cfg.first_level_debaters == 2:
        text = "Both sides have one debater each"
    else:
        text = (f"The affirmative side has {_plural(cfg.affirmative_seats, 'debater')} and the "
                f"negative side has {_plural(cfg.negative_seats, 'debater')}")
    if cfg.second_level_debaters != 2:
        text += (f", the second level has {_plural(cfg.fast_seats, 'fast debater')} and "
                 f"{_plural(cfg.slow_seats, 'slow debater')},")
    return text


def _pool_text(pool: Sequence[Operator]) -> str:
    return "; ".join(f"{op.kind.value}: {op.description.strip().rstrip('.')}" for op in pool)


def _type_text(q_type: QuestionType | str | None) -> str:
    if q_type is None:
        return "Unknown"
    return q_type.label if isinstance(q_type, QuestionType) else str(q_type)


def assemble_meta_prompt(cfg: DebateConfig, q_type: QuestionType | str | None, q: Question | str) -> str:
    cfg.validate()
    return render(load_template("meta"), {
        "debate level": DEBATE_LEVELS[cfg.debate_level],
        "operators pool": _pool_text(cfg.operator_pool),
        "question type": _type_text(q_type),
        "debater counts": _debater_counts(cfg),
        "turns": number_word(cfg.turns_per_side_per_round),
        "max rounds": number_word(cfg.max_rounds),
        "question": q.text if isinstance(q, Question) else q,
    })


def plan_format_text(cfg: DebateConfig) -> str:
    names = ", ".join(op.kind.value for op in cfg.operator_pool)
    return render(load_template("plan_format"), {"operator names": names})


# -- plan parsing ----------------------------------------------------------------

_ALIASES: dict[OperatorKind, tuple[str, ...]] = {
    OperatorKind.COT: ("cot", "chain-of-thought", "chain of thought"),
    OperatorKind.SINGLE_STEP: ("singlestep", "single-step", "single step"),
    OperatorKind.ITERATIVE_STEP: ("iterativestep", "iterative-step", "iterative step", "ircot"),
    OperatorKind.SUB_STEP: ("substep", "sub-step", "sub step", "self-ask", "self ask"),
    OperatorKind.ADAPTIVE_STEP: ("adaptivestep", "adaptive-step", "adaptive step"),
}
_ALIAS_RES = {
    kind: [re.compile(r"(?<![\w-])" + re.escape(a) + r"(?![\w-])", re.IGNORECASE) for a in names]
    for kind, names in _ALIASES.items()
}


def match_operator_name(text: str) -> OperatorKind | None:
    """The operator whose name (or alias) appears earliest in ``text``."""
    best: tuple[int, OperatorKind] | None = None
    for kind, patterns in _ALIAS_RES.items():
        for pat in patterns:
            m = pat.search(text)
            if m and (best is None or m.start() < best[0]):
                best = (m.start(), kind)
    return best[1] if best else None


_FENCE_RE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL | re.IGNORECASE)
_NUMBERED_RE = re.compile(r"^\s*(?:step\s*)?\d+\s*[.):]\s*(.+)$", re.IGNORECASE | re.MULTILINE)
_CONTINUE_RE = re.compile(r"\bCONTINUE\b")


def _json_candidates(text: str) -> list[str]:
    found = [m.group(1) for m in _FENCE_RE.finditer(text)]
    start, end = text.find("{"), text.rfind("}")
    if start >= 0 and end > start:
        found.append(text[start:end + 1])
    return found


def _steps_from_json(obj: Any) -> list[PlanStep] | None:
    if not isinstance(obj, dict) or not isinstance(obj.get("steps"), list):
        return None
    steps = []
    for item in obj["steps"]:
        if not isinstance(item, dict):
            return None
        kind = match_operator_name(str(item.get("operator", "")))
        if kind is None:
            return None
        deps = item.get("depends_on", [])
        if not isinstance(deps, list) or not all(isinstance(d, int) for d in deps):
            return None
        steps.append(PlanStep(kind, str(item.get("directive", "")), tuple(deps)))
    return steps


def parse_plan(text: str, pool: Sequence[Operator] | None = None, *, allow_list: bool = True) -> list[PlanStep] | None:
    """Read plan steps from judge output, or None if there is no usable plan.

    A fenced JSON object is preferred; a numbered list naming operators is
    accepted as a fallback, each item depending on the one before it.
    """
    steps: list[PlanStep] | None = None
    for candidate in _json_candidates(text):
        try:
            obj = json.loads(candidate)
        except ValueError:
            continue
        steps = _steps_from_json(obj)
        if steps is not None:
            break
    if steps is None and allow_list:
        items = []
        for m in _NUMBERED_RE.finditer(text):
            kind = match_operator_name(m.group(1))
            if kind is not None:
                items.append(PlanStep(kind, m.group(1).strip(), (len(items) - 1,) if items else ()))
        steps = items or None
    if not steps:
        return None
    for i, step in enumerate(steps):
        if any(d < 0 or d >= i for d in step.depends_on):
            return None
    if pool is not None:
        allowed = {op.kind for op in pool}
        if any(s.operator not in allowed for s in steps):
            return None
    return steps


def fallback_plan_steps(q_type: QuestionType | str | None, pool: Sequence[Operator]) -> list[PlanStep]:
    """Plan mirroring adaptive routing for ``q_type``; used when the judge never yields one."""
    allowed = {op.kind for op in pool}
    if q_type is None:
        steps = [PlanStep(OperatorKind.ADAPTIVE_STEP, "route by question type")]
    else:
        op, leaf = route_for(q_type)
        if op is OperatorKind.SUB_STEP:
            second = OperatorKind.ITERATIVE_STEP if leaf is LeafMode.ITERATIVE_STEP else OperatorKind.SINGLE_STEP
            steps = [
                PlanStep(OperatorKind.SUB_STEP, "decompose the question into sub-questions"),
                PlanStep(second, "answer the sub-questions with retrieval and compose the answer", (0,)),
            ]
        else:
            steps = [PlanStep(op, "answer directly")]
    if all(s.operator in allowed for s in steps):
        return steps
    return [PlanStep(pool[0].kind, "answer the question")]


# -- the debate -----------------------------------------------------------------

class Debate:
    """One debate over one question. Strictly sequential; not thread-safe."""

    def __init__(
        self,
        question: Question | str,
        q_type: QuestionType | str | None,
        cfg: DebateConfig,
        backend: Backend,
    ):
        cfg.validate()
        self.question = question
        self.q_type = q_type
        self.cfg = cfg
        self.backend = backend
        qid = question.id if isinstance(question, Question) else ""
        self.state = DebateState(Transcript(qid))
        self.meta_prompt = assemble_meta_prompt(cfg, q_type, question)

    # slot helpers

    def _current(self, role: Role, round_: int) -> str:
        utts = self.state.transcript.in_round(round_, role)
        if not utts:
            return NULL
        if len(utts) == 1:
            return utts[0].content
        return "\n\n".join(f"({role.value} debater {i}) {u.content}" for i, u in enumerate(utts, 1))

    def _history(self, role: Role, before_round: int) -> str:
        utts = self.state.transcript.history(role, before_round)
        if not utts:
            return NULL
        return "\n".join(f"[Round {u.round}] {u.content}" for u in utts)

    def _seat_text(self, seat: int, seats: int) -> str:
        return f" You are debater {seat + 1} of {seats} on this side." if seats > 1 else ""

    def _speak(self, role: Role, messages: list[ChatMessage], tag: str, temperature: float) -> Utterance:
        resp = self.backend.complete(CompletionRequest(
            tuple(messages), temperature=temperature, max_output_tokens=self.cfg.max_output_tokens, tag=tag,
        ))
        utt = Utterance(self.state.round, role, resp.content, resp.usage)
        self.state.transcript = self.state.transcript.appended(utt)
        return utt

    def _debater(self, role: Role, template: str, slots: dict[str, str], seat: int, seats: int) -> Utterance:
        slots = {**slots, "seat": self._seat_text(seat, seats), "round": ordinal(self.state.round)}
        prompt = render(load_template(template), slots)
        messages = [system(self.meta_prompt), user(prompt)]
        return self._speak(role, messages, f"debate.{template}", self.cfg.debater_temperature)

    # turns

    def affirmative_turn(self, seat: int = 0) -> Utterance:
        t = self.state.round
        return self._debater(Role.AFFIRMATIVE, "affirmative", {
            "H_ad": self._history(Role.AFFIRMATIVE, t),
            "f_fast": self._current(Role.FAST, t - 1),
            "f_slow": self._current(Role.SLOW, t - 1),
        }, seat, self.cfg.affirmative_seats)

    def negative_turn(self, seat: int = 0) -> Utterance:
        t = self.state.round
        return self._debater(Role.NEGATIVE, "negative", {
            "H_nd": self._history(Role.NEGATIVE, t),
            "f_ad": self._current(Role.AFFIRMATIVE, t),
            "f_fast": self._current(Role.FAST, t - 1),
            "f_slow": self._current(Role.SLOW, t - 1),
        }, seat, self.cfg.negative_seats)

    def fast_turn(self, seat: int = 0) -> Utterance:
        t = self.state.round
        return self._debater(Role.FAST, "fast", {
            "f_ad": self._current(Role.AFFIRMATIVE, t),
            "f_nd": self._current(Role.NEGATIVE, t),
            "H_fast": self._history(Role.FAST, t),
        }, seat, self.cfg.fast_seats)

    def slow_turn(self, seat: int = 0) -> Utterance:
        t = self.state.round
        return self._debater(Role.SLOW, "slow", {
            "f_ad": self._current(Role.AFFIRMATIVE, t),
            "f_nd": self._current(Role.NEGATIVE, t),
            "f_fast": self._current(Role.FAST, t),
            "H_slow": self._history(Role.SLOW, t),
        }, seat, self.cfg.slow_seats)

    def _plan(self, steps: list[PlanStep], mode: SourceMode, rationale: str) -> ExecutionPlan:
        return ExecutionPlan(tuple(steps), mode, rationale, self.state.round)

    def judge_decide(self) -> Continue | Stop:
        t = self.state.round
        pool = self.cfg.operator_pool
        common = {
            "question type": _type_text(self.q_type),
            "plan format": plan_format_text(self.cfg),
            "round": str(t),
        }
        temp = self.cfg.judge_temperature
        if t < self.cfg.max_rounds:
            prompt = render(load_template("judge_hard"), {
                **common,
                "f_ad": self._current(Role.AFFIRMATIVE, t),
                "f_nd": self._current(Role.NEGATIVE, t),
                "f_fast": self._current(Role.FAST, t),
                "f_slow": self._current(Role.SLOW, t),
            })
            utt = self._speak(Role.JUDGE, [system(self.meta_prompt), user(prompt)], "debate.judge.hard", temp)
            allow_list = not _CONTINUE_RE.search(utt.content)
            steps = parse_plan(utt.content, pool, allow_list=allow_list)
            if steps is None:
                return Continue()
            return Stop(self._plan(steps, SourceMode.HARD, utt.content))

        prompt = render(load_template("judge_soft"), {
            **common, "H_slow": self._history(Role.SLOW, t + 1),
        })
        messages = [system(self.meta_prompt), user(prompt)]
        utt = self._speak(Role.JUDGE, messages, "debate.judge.soft", temp)
        steps = parse_plan(utt.content, pool)
        if steps is not None:
            return Stop(self._plan(steps, SourceMode.SOFT, utt.content))
        repair = messages + [assistant(utt.content or "(empty)"), user(load_template("judge_repair"))]
        utt = self._speak(Role.JUDGE, repair, "debate.judge.repair", temp)
        steps = parse_plan(utt.content, pool)
        if steps is not None:
            return Stop(self._plan(steps, SourceMode.SOFT, utt.content))
        rationale = f"fallback: adaptive routing for question type {_type_text(self.q_type)}"
        return Stop(self._plan(fallback_plan_steps(self.q_type, pool), SourceMode.SOFT, rationale))

    def run_round(self) -> Continue | Stop:
        for seat in range(self.cfg.affirmative_seats):
            self.affirmative_turn(seat)
        for seat in range(self.cfg.negative_seats):
            self.negative_turn(seat)
        for seat in range(self.cfg.fast_seats):
            self.fast_turn(seat)
        for seat in range(self.cfg.slow_seats):
            self.slow_turn(seat)
        return self.judge_decide()

    def run(self) -> tuple[ExecutionPlan, Transcript]:
        for t in range(1, self.cfg.max_rounds + 1):
            self.state.round = t
            decision = self.run_round()
            if isinstance(decision, Stop):
                self.state.plan = decision.plan
                self.state.terminated = True
                break
        assert self.state.plan is not None, "the final round always yields a plan"
        return self.state.plan, self.state.transcript


def run_debate(
    q: Question | str,
    q_type: QuestionType | str | None,
    cfg: DebateConfig,
    backend: Backend,
) -> tuple[ExecutionPlan, Transcript]:
    return Debate(q, q_type, cfg, backend).run()
