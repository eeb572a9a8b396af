"""Scoring of finished runs and analysis of debate attitudes."""

from __future__ import annotations

import logging
import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .core import OperatorKind, Question, Role, TokenUsage, Transcript
from .errors import IdMismatchError, InvalidConfig, NoGoldError
from .llm import Backend, CompletionRequest, LedgerEntry, TokenLedger, system, user

log = logging.getLogger(__name__)

ACC_TAG = "eval.acc"
ATTITUDE_TAG = "eval.attitude"
PHASES = ("classifier", "debate", "executor", "eval")
REFERENCE_PROMPT_TOKENS = 20742  # full-scale average per question, shown for comparison only

# -- answer metrics ---------------------------------------------------------------

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def _golds(golds: str | Sequence[str]) -> list[str]:
    out = [golds] if isinstance(golds, str) else list(golds)
    if not out:
        raise NoGoldError("no gold answers to compare against")
    return out


def exact_match(pred: str, golds: str | Sequence[str]) -> int:
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in _golds(golds)))


def _f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    same = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if same == 0:
        return 0.0
    precision = same / len(pred_tokens)
    recall = same / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(pred: str, golds: str | Sequence[str]) -> float:
    p = normalize_answer(pred).split()
    return max(_f1(p, normalize_answer(g).split()) for g in _golds(golds))


_YES_NO = re.compile(r"\b(YES|NO)\b", re.IGNORECASE)


def acc_llm(pred: str, golds: str | Sequence[str], q: Question | str, backend: Backend) -> int:
    """Ask the backend whether ``pred`` agrees with the gold answers; EM if the reply is unclear."""
    golds = _golds(golds)
    text = q.text if isinstance(q, Question) else q
    messages = [
        system("You check whether a predicted answer means the same as a reference answer. "
               "Reply with YES or NO only."),
        user(f"Question: {text}\nReference answers: {' | '.join(golds)}\nPrediction: {pred}\n"
             "Is the prediction semantically consistent with a reference answer?"),
    ]
    resp = backend.complete(CompletionRequest(tuple(messages), temperature=0.0, max_output_tokens=8, tag=ACC_TAG))
    m = _YES_NO.search(resp.content)
    if m is None:
        log.warning("unparseable acc judgement %r; falling back to exact match", resp.content[:40])
        return exact_match(pred, golds)
    return int(m.group(1).upper() == "YES")


# -- run reports ------------------------------------------------------------------

@dataclass(frozen=True)
class Prediction:
    id: str
    answer: str
    usage: TokenUsage = field(default_factory=TokenUsage)
    error: str | None = None
    predicted_type: str | None = None
    acc: int | None = None
    degraded: bool = False

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "answer": self.answer,
            "usage": self.usage.to_dict(),
            "error": self.error,
            "predicted_type": self.predicted_type,
            "acc": self.acc,
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Prediction:
        return cls(
            id=str(d["id"]),
            answer=d.get("answer", ""),
            usage=TokenUsage.from_dict(d.get("usage")),
            error=d.get("error"),
            predicted_type=d.get("predicted_type"),
            acc=d.get("acc"),
            degraded=d.get("degraded", False),
        )


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    em: int
    f1: float
    acc: int | None
    type: str
    hops: int | None
    usage: TokenUsage
    failed: bool = False
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id, "em": self.em, "f1": self.f1, "acc": self.acc, "type": self.type,
            "hops": self.hops, "usage": self.usage.to_dict(), "failed": self.failed, "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> QuestionRecord:
        return cls(d["id"], d["em"], d["f1"], d.get("acc"), d["type"], d.get("hops"),
                   TokenUsage.from_dict(d.get("usage")), d.get("failed", False), d.get("error"))


@dataclass(frozen=True)
class Aggregate:
    count: int
    failed: int
    em: float
    f1: float
    acc: float | None

    def to_dict(self) -> dict[str, Any]:
        return {"count": self.count, "failed": self.failed, "em": self.em, "f1": self.f1, "acc": self.acc}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Aggregate:
        return cls(d["count"], d["failed"], d["em"], d["f1"], d.get("acc"))


def aggregate(records: Iterable[QuestionRecord]) -> Aggregate:
    """Means over scored records; failed records are counted but not averaged.

    ``math.fsum`` keeps the means independent of record order.
    """
    records = list(records)
    scored = [r for r in records if not r.failed]
    n = len(scored)
    accs = [r.acc for r in scored if r.acc is not None]
    return Aggregate(
        count=len(records),
        failed=len(records) - n,
        em=math.fsum(r.em for r in scored) / n if n else 0.0,
        f1=math.fsum(r.f1 for r in scored) / n if n else 0.0,
        acc=math.fsum(accs) / len(accs) if accs else None,
    )


@dataclass(frozen=True)
class MetricReport:
    records: tuple[QuestionRecord, ...]
    overall: Aggregate
    by_type: dict[str, Aggregate]
    by_hops: dict[str, Aggregate]

    def to_dict(self) -> dict[str, Any]:
        return {
            "overall": self.overall.to_dict(),
            "by_type": {k: v.to_dict() for k, v in self.by_type.items()},
            "by_hops": {k: v.to_dict() for k, v in self.by_hops.items()},
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MetricReport:
        return cls(
            tuple(QuestionRecord.from_dict(r) for r in d["records"]),
            Aggregate.from_dict(d["overall"]),
            {k: Aggregate.from_dict(v) for k, v in d["by_type"].items()},
            {k: Aggregate.from_dict(v) for k, v in d["by_hops"].items()},
        )

    def format_table(self) -> str:
        rows = [("overall", self.overall)]
        rows += [(f"type={k}", v) for k, v in self.by_type.items()]
        rows += [(f"hops={k}", v) for k, v in self.by_hops.items()]
        lines = [f"{'slice':<24}{'n':>5}{'fail':>6}{'EM':>8}{'F1':>8}{'Acc':>8}"]
        for name, agg in rows:
            acc = f"{agg.acc:.4f}" if agg.acc is not None else "-"
            lines.append(f"{name:<24}{agg.count:>5}{agg.failed:>6}{agg.em:>8.4f}{agg.f1:>8.4f}{acc:>8}")
        return "\n".join(lines)


def build_report(records: Sequence[QuestionRecord]) -> MetricReport:
    by_type: dict[str, list[QuestionRecord]] = {}
    by_hops: dict[str, list[QuestionRecord]] = {}
    for r in records:
        by_type.setdefault(r.type, []).append(r)
        if r.hops is not None:
            by_hops.setdefault(str(r.hops), []).append(r)
    return MetricReport(
        tuple(records),
        aggregate(records),
        {k: aggregate(v) for k, v in sorted(by_type.items())},
        {k: aggregate(v) for k, v in sorted(by_hops.items())},
    )


def evaluate_run(
    predictions: Sequence[Prediction],
    dataset: Sequence[Question] | Mapping[str, Question],
    backend: Backend | None = None,
) -> MetricReport:
    """Score predictions against gold answers.

    Records follow prediction order. Acc comes from the prediction when it
    was stored there, otherwise from ``backend`` when one is given.
    """
    gold = dict(dataset) if isinstance(dataset, Mapping) else {q.id: q for q in dataset}
    missing = [p.id for p in predictions if p.id not in gold]
    if missing:
        raise IdMismatchError(f"predictions for ids not in the dataset: {missing[:5]}")
    records = []
    for p in predictions:
        q = gold[p.id]
        if q.declared_type is not None:
            q_type = q.declared_type.label
        else:
            q_type = p.predicted_type or "Unknown"
        if p.failed:
            records.append(QuestionRecord(p.id, 0, 0.0, None, q_type, q.hops, p.usage, True, p.error))
            continue
        acc = p.acc
        if acc is None and backend is not None:
            acc = acc_llm(p.answer, q.gold_answers, q, backend)
        records.append(QuestionRecord(
            p.id, exact_match(p.answer, q.gold_answers), token_f1(p.answer, q.gold_answers),
            acc, q_type, q.hops, p.usage,
        ))
    return build_report(records)


# -- token consumption ---------------------------------------------------------

def phase_of(tag: str) -> str:
    return tag.split(".", 1)[0] if tag else "untagged"


@dataclass(frozen=True)
class TokenReport:
    dataset: str
    questions: int
    avg_prompt_tokens: float
    avg_prompt_by_phase: dict[str, float]
    total: TokenUsage
    reference_avg_prompt_tokens: int = REFERENCE_PROMPT_TOKENS

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "questions": self.questions,
            "avg_prompt_tokens": self.avg_prompt_tokens,
            "avg_prompt_by_phase": dict(self.avg_prompt_by_phase),
            "total": self.total.to_dict(),
            "reference_avg_prompt_tokens": self.reference_avg_prompt_tokens,
        }

    def format_table(self) -> str:
        lines = [f"prompt tokens per question ({self.dataset or 'run'}, n={self.questions})"]
        for phase, avg in self.avg_prompt_by_phase.items():
            lines.append(f"  {phase:<12}{avg:>12.1f}")
        lines.append(f"  {'all':<12}{self.avg_prompt_tokens:>12.1f}")
        lines.append(f"  {'reference':<12}{self.reference_avg_prompt_tokens:>12}  (full-scale figure, for comparison)")
        return "\n".join(lines)


def token_report(
    ledger: TokenLedger | Iterable[LedgerEntry],
    report: MetricReport | None = None,
    dataset: str = "",
) -> TokenReport:
    """Average prompt tokens per question, split by phase (the tag's first segment).

    The question count is the report's record count when a report is given,
    otherwise the number of distinct nonempty ledger scopes (at least one
    when anything was recorded).
    """
    entries = ledger.entries if isinstance(ledger, TokenLedger) else list(ledger)
    if report is not None:
        n = len(report.records)
    else:
        n = len({e.scope for e in entries if e.scope}) or (1 if entries else 0)
    by_phase = {p: 0 for p in PHASES}
    for e in entries:
        phase = phase_of(e.tag)
        by_phase[phase] = by_phase.get(phase, 0) + e.usage.prompt_tokens
    total = TokenUsage.sum(e.usage for e in entries)
    avg = {p: (v / n if n else 0.0) for p, v in by_phase.items()}
    return TokenReport(dataset, n, total.prompt_tokens / n if n else 0.0, avg, total)


# -- attitude matrices -----------------------------------------------------------

OPERATOR_AXIS: tuple[OperatorKind, ...] = tuple(OperatorKind)

DEFAULT_PHRASE_MAP: dict[str, float] = {
    "identical": 1.0,
    "very similar": 0.7,
    "similar": 0.5,
    "somewhat related": 0.3,
    "unrelated": 0.0,
}


@dataclass(frozen=True)
class AnalysisConfig:
    alpha: float = 0.8
    beta: float = 0.8
    similarity_phrase_map: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_PHRASE_MAP))

    def validate(self) -> None:
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1], got {v}")
        if not self.similarity_phrase_map:
            raise InvalidConfig("similarity_phrase_map is empty")
        for phrase, v in self.similarity_phrase_map.items():
            if not math.isfinite(v):
                raise InvalidConfig(f"score for {phrase!r} is not finite")


def map_phrase(raw: str, phrase_map: Mapping[str, float]) -> float | None:
    """Score of the longest map phrase found in ``raw`` as whole words; None if none is found."""
    text = " ".join(re.sub(r"[^\w\s]", " ", raw.lower()).split())
    best: tuple[int, float] | None = None
    for phrase, score in phrase_map.items():
        if re.search(r"(?<!\w)" + re.escape(phrase.lower()) + r"(?!\w)", text):
            if best is None or len(phrase) > best[0]:
                best = (len(phrase), score)
    return None if best is None else best[1]


def pair_description(a: OperatorKind, b: OperatorKind) -> str:
    return f"{a.value} alone" if a is b else f"{a.value} followed by {b.value}"


def debater_matrix(
    utterance: str, scorer: Backend, cfg: AnalysisConfig = AnalysisConfig()
) -> np.ndarray:
    """5x5 endorsement scores of one utterance over every operator pair."""
    phrases = ", ".join(f"'{p}'" for p in cfg.similarity_phrase_map)
    m = np.zeros((len(OPERATOR_AXIS), len(OPERATOR_AXIS)))
    for i, a in enumerate(OPERATOR_AXIS):
        for j, b in enumerate(OPERATOR_AXIS):
            messages = [
                system(f"You rate how strongly a debate statement supports an operator combination. "
                       f"Reply with exactly one of {phrases}."),
                user(f"Statement: {utterance}\nOperator combination: {pair_description(a, b)}\nRating:"),
            ]
            resp = scorer.complete(CompletionRequest(tuple(messages), temperature=0.0,
                                                     max_output_tokens=8, tag=ATTITUDE_TAG))
            score = map_phrase(resp.content, cfg.similarity_phrase_map)
            if score is None:
                log.warning("unmapped similarity phrase %r; scoring 0", resp.content[:40])
                score = 0.0
            m[i, j] = score
    return m


def combine_attitudes(
    f_ad: np.ndarray,
    f_nd: np.ndarray,
    f_fast: np.ndarray,
    f_slow: np.ndarray,
    f_fast_prev: np.ndarray,
    f_slow_prev: np.ndarray,
    alpha: float = 0.8,
    beta: float = 0.8,
) -> tuple[np.ndarray, np.ndarray]:
    """Return (first-to-second level, previous-second-to-first level) matrices for one round."""
    level1 = np.asarray(f_ad, dtype=float) + np.asarray(f_nd, dtype=float)
    f_to_s = alpha * level1 + (1.0 - alpha) * (np.asarray(f_fast, dtype=float) + np.asarray(f_slow, dtype=float))
    s_to_f = beta * level1 + (1.0 - beta) * (np.asarray(f_fast_prev, dtype=float) + np.asarray(f_slow_prev, dtype=float))
    return f_to_s, s_to_f


@dataclass(frozen=True)
class RoundAttitude:
    round: int
    f_to_s: np.ndarray
    s_to_f: np.ndarray

    def to_dict(self) -> dict[str, Any]:
        return {"round": self.round, "f_to_s": self.f_to_s.tolist(), "s_to_f": self.s_to_f.tolist()}


def attitude_scores(
    transcripts: Sequence[Transcript],
    cfg: AnalysisConfig,
    scorer: Backend,
) -> list[list[RoundAttitude]]:
    """Per transcript, per round, the two combined attitude matrices.

    A role with several seats in a round is averaged; a missing role (and
    the second level before round one) contributes a zero matrix. Identical
    utterance texts are scored once.
    """
    cfg.validate()
    size = len(OPERATOR_AXIS)
    zero = np.zeros((size, size))
    cache: dict[str, np.ndarray] = {}

    def score(text: str) -> np.ndarray:
        if text not in cache:
            cache[text] = debater_matrix(text, scorer, cfg)
        return cache[text]

    def role_matrix(tr: Transcript, t: int, role: Role) -> np.ndarray:
        utts = tr.in_round(t, role)
        if not utts:
            return zero
        return np.mean([score(u.content) for u in utts], axis=0)

    out = []
    for tr in transcripts:
        rounds = []
        prev_fast, prev_slow = zero, zero
        for t in range(1, tr.rounds + 1):
            fast, slow = role_matrix(tr, t, Role.FAST), role_matrix(tr, t, Role.SLOW)
            f_to_s, s_to_f = combine_attitudes(
                role_matrix(tr, t, Role.AFFIRMATIVE), role_matrix(tr, t, Role.NEGATIVE),
                fast, slow, prev_fast, prev_slow, cfg.alpha, cfg.beta,
            )
            rounds.append(RoundAttitude(t, f_to_s, s_to_f))
            prev_fast, prev_slow = fast, slow
        out.append(rounds)
    return out
