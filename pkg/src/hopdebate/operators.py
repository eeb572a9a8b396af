"""The five reasoning operators, each "question in, answer + evidence out".

Every operator accepts an optional ``context`` string (outcomes of earlier
plan steps plus the judge's directive) and a ``tag`` prefix used for token
accounting. Calls inside one operator are strictly sequential.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Sequence

from .core import Operator, OperatorKind, Question, QuestionType, TokenUsage
from .errors import RetrievalError
from .llm import Backend, ChatMessage, CompletionRequest, system, user
from .prompts import load_json
from .retrieval import K_RANGE, Document, RetrievalIndex

ANSWER_MARKER = "Answer:"
FINAL_MARKER = "So the final answer is:"
FOLLOW_UP_MARKER = "Follow up:"
INTERMEDIATE_MARKER = "Intermediate answer:"

DEFAULT_MAX_ITERATIONS = 4
DEFAULT_K_DOCS = 5


class LeafMode(str, Enum):
    CLOSED_BOOK = "ClosedBook"
    SINGLE_STEP = "SingleStep"
    ITERATIVE_STEP = "IterativeStep"


# question type -> (operator, leaf for sub-step)
DEFAULT_ROUTING: dict[str, tuple[OperatorKind, LeafMode | None]] = {
    "Null": (OperatorKind.COT, None),
    "Comparison": (OperatorKind.SUB_STEP, LeafMode.SINGLE_STEP),
    "Temporal": (OperatorKind.SUB_STEP, LeafMode.SINGLE_STEP),
    "Inference": (OperatorKind.SUB_STEP, LeafMode.ITERATIVE_STEP),
    "Bridge-comparison": (OperatorKind.SUB_STEP, LeafMode.SINGLE_STEP),
    "Compositional": (OperatorKind.SUB_STEP, LeafMode.ITERATIVE_STEP),
}


@dataclass(frozen=True)
class OperatorBudget:
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    k_docs: int = DEFAULT_K_DOCS

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        lo, hi = K_RANGE
        if not lo <= self.k_docs <= hi:
            raise ValueError(f"k_docs must be in [{lo}, {hi}], got {self.k_docs}")


@dataclass(frozen=True)
class OperatorOutcome:
    operator: str
    answer: str
    reasoning: str = ""
    retrieved_doc_ids: tuple[str, ...] = ()
    sub_results: tuple[tuple[str, "OperatorOutcome"], ...] = ()
    usage: TokenUsage = field(default_factory=TokenUsage)
    retrieval_queries: tuple[str, ...] = ()
    final_marker: bool = False
    budget_exhausted: bool = False
    degraded: bool = False
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "operator": self.operator,
            "answer": self.answer,
            "reasoning": self.reasoning,
            "retrieved_doc_ids": list(self.retrieved_doc_ids),
            "sub_results": [{"question": q, "outcome": o.to_dict()} for q, o in self.sub_results],
            "usage": self.usage.to_dict(),
            "retrieval_queries": list(self.retrieval_queries),
            "final_marker": self.final_marker,
            "budget_exhausted": self.budget_exhausted,
            "degraded": self.degraded,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> OperatorOutcome:
        return cls(
            operator=d["operator"],
            answer=d["answer"],
            reasoning=d.get("reasoning", ""),
            retrieved_doc_ids=tuple(d.get("retrieved_doc_ids", ())),
            sub_results=tuple((s["question"], cls.from_dict(s["outcome"])) for s in d.get("sub_results", ())),
            usage=TokenUsage.from_dict(d.get("usage")),
            retrieval_queries=tuple(d.get("retrieval_queries", ())),
            final_marker=d.get("final_marker", False),
            budget_exhausted=d.get("budget_exhausted", False),
            degraded=d.get("degraded", False),
            notes=tuple(d.get("notes", ())),
        )

    @property
    def total_retrievals(self) -> int:
        return len(self.retrieval_queries) + sum(o.total_retrievals for _, o in self.sub_results)


# -- answer extraction --------------------------------------------------------

_ANSWER_LINE = re.compile(r"^\s*Answer:\s*(.*)$")


def _clean(answer: str) -> str:
    return answer.strip().rstrip(".").strip()


def extract_answer(text: str) -> tuple[str, bool]:
    """Return ``(answer, marker_found)``.

    The last line carrying a final-answer marker wins. Without a marker the
    last sentence of ``text`` is used and ``marker_found`` is False.
    """
    for line in reversed(text.splitlines()):
        idx = line.lower().find(FINAL_MARKER.lower())
        if idx >= 0:
            return _clean(line[idx + len(FINAL_MARKER):]), True
        m = _ANSWER_LINE.match(line)
        if m:
            return _clean(m.group(1)), True
    sentences = [s for s in re.split(r"(?<=[.!?])\s+|\n+", text.strip()) if s.strip()]
    return (_clean(sentences[-1]) if sentences else ""), False


def has_final_marker(text: str) -> bool:
    return FINAL_MARKER.lower() in text.lower()


# -- shared plumbing ------------------------------------------------------------

def _text(q: Question | str) -> str:
    return q.text if isinstance(q, Question) else q


def _context_block(context: str) -> str:
    return f"Information from earlier steps:\n{context.strip()}\n\n" if context.strip() else ""


def format_documents(docs: Sequence[Document]) -> str:
    return "\n".join(f"[{i}] {d.title}: {d.text}" for i, d in enumerate(docs, 1))


class _Calls:
    """Accumulates usage, retrieval queries and deduplicated doc ids for one operator run."""

    def __init__(self, backend: Backend, tag: str):
        self.backend = backend
        self.tag = tag
        self.usage = TokenUsage()
        self.queries: list[str] = []
        self.doc_ids: list[str] = []

    def ask(self, messages: Sequence[ChatMessage], suffix: str = "", max_tokens: int = 512) -> str:
        tag = f"{self.tag}.{suffix}" if suffix else self.tag
        resp = self.backend.complete(
            CompletionRequest(tuple(messages), temperature=0.0, max_output_tokens=max_tokens, tag=tag)
        )
        self.usage = self.usage + resp.usage
        return resp.content

    def retrieve(self, index: RetrievalIndex, query: str, k: int) -> list[Document]:
        result = index.retrieve(query, k)
        self.queries.append(query)
        docs = []
        for hit in result.hits:
            docs.append(index.document(hit.doc_id))
            self._add_ids([hit.doc_id])
        return docs

    def _add_ids(self, ids: Sequence[str]) -> None:
        for i in ids:
            if i not in self.doc_ids:
                self.doc_ids.append(i)

    def absorb(self, child: OperatorOutcome) -> None:
        self.usage = self.usage + child.usage
        self._add_ids(child.retrieved_doc_ids)


def _cot_demos() -> list[dict[str, str]]:
    return load_json("cot_demos")


# -- operators ------------------------------------------------------------------

COT_INSTRUCTION = (
    "You answer multi-hop questions from your own knowledge. Think step by step, "
    f"then finish with a final line of the form '{ANSWER_MARKER} <answer>'."
)


def build_cot_messages(q: Question | str, context: str = "", demos: Sequence[dict] | None = None) -> list[ChatMessage]:
    demos = _cot_demos() if demos is None else demos
    shots = "\n\n".join(
        f"Question: {d['question']}\nLet's think step by step. {d['reasoning']}\n{ANSWER_MARKER} {d['answer']}"
        for d in demos
    )
    return [
        system(f"{COT_INSTRUCTION}\n\n{shots}"),
        user(f"{_context_block(context)}Question: {_text(q)}\nLet's think step by step."),
    ]


def run_cot(
    q: Question | str,
    backend: Backend,
    *,
    context: str = "",
    demos: Sequence[dict] | None = None,
    tag: str = "operator.cot",
) -> OperatorOutcome:
    """Closed-book chain of thought with one demonstration per question type."""
    calls = _Calls(backend, tag)
    out = calls.ask(build_cot_messages(q, context, demos))
    answer, found = extract_answer(out)
    notes = () if found else ("answer_extraction_failed",)
    return OperatorOutcome(
        operator=OperatorKind.COT.value,
        answer=answer,
        reasoning=out.strip(),
        usage=calls.usage,
        final_marker=found,
        notes=notes,
    )


def run_single_step(
    q: Question | str,
    backend: Backend,
    index: RetrievalIndex | None,
    budget: OperatorBudget = OperatorBudget(),
    *,
    context: str = "",
    tag: str = "operator.single_step",
) -> OperatorOutcome:
    """Retrieve once with the question as query, then answer over the top documents."""
    calls = _Calls(backend, tag)
    text = _text(q)
    docs = calls.retrieve(index, text, budget.k_docs) if index is not None else []
    if docs:
        sys_msg = ("Answer the question using the documents below. Reason briefly, then finish "
                   f"with a final line of the form '{ANSWER_MARKER} <answer>'.")
        body = f"Documents:\n{format_documents(docs)}\n\n{_context_block(context)}Question: {text}"
    else:
        sys_msg = ("No documents were found for this question; answer from your own knowledge. "
                   f"Reason briefly, then finish with a final line of the form '{ANSWER_MARKER} <answer>'.")
        body = f"{_context_block(context)}Question: {text}"
    out = calls.ask([system(sys_msg), user(body)])
    answer, found = extract_answer(out)
    notes = []
    if not docs:
        notes.append("closed_book_fallback" if index is not None else "no_index_closed_book")
    if not found:
        notes.append("answer_extraction_failed")
    return OperatorOutcome(
        operator=OperatorKind.SINGLE_STEP.value,
        answer=answer,
        reasoning=out.strip(),
        retrieved_doc_ids=tuple(calls.doc_ids),
        usage=calls.usage,
        retrieval_queries=tuple(calls.queries),
        final_marker=found,
        degraded=not docs,
        notes=tuple(notes),
    )


ITERATIVE_INSTRUCTION = (
    "Answer the question by reasoning one sentence at a time over the documents. "
    "Each turn, output exactly one new reasoning sentence. As soon as the answer is known, "
    f"output '{FINAL_MARKER} <answer>' instead."
)


def run_iterative_step(
    q: Question | str,
    backend: Backend,
    index: RetrievalIndex | None,
    budget: OperatorBudget = OperatorBudget(),
    *,
    context: str = "",
    tag: str = "operator.iterative_step",
) -> OperatorOutcome:
    """Interleave retrieval and reasoning; each new sentence becomes the next query."""
    calls = _Calls(backend, tag)
    text = _text(q)
    docs: list[Document] = []
    sentences: list[str] = []
    answer, found, exhausted = "", False, False

    def prompt() -> list[ChatMessage]:
        doc_block = f"Documents:\n{format_documents(docs)}\n\n" if docs else "Documents: none found.\n\n"
        so_far = " ".join(sentences) if sentences else "None"
        return [
            system(ITERATIVE_INSTRUCTION),
            user(f"{doc_block}{_context_block(context)}Question: {text}\nReasoning so far: {so_far}\nNext sentence:"),
        ]

    for round_ in range(1, budget.max_iterations + 1):
        if index is not None:
            query = text if round_ == 1 else sentences[-1]
            try:
                new = calls.retrieve(index, query, budget.k_docs)
            except RetrievalError:
                if round_ == 1:
                    raise
                new = calls.retrieve(index, text, budget.k_docs)
            seen = {d.id for d in docs}
            docs.extend(d for d in new if d.id not in seen)
        out = calls.ask(prompt(), suffix=f"r{round_}")
        if has_final_marker(out):
            answer, found = extract_answer(out)
            break
        line = next((l.strip() for l in out.splitlines() if l.strip()), "")
        sentences.append(line)
    else:
        exhausted = True
        msgs = prompt()
        msgs[-1] = user(msgs[-1].content.rsplit("\nNext sentence:", 1)[0] + f"\n{FINAL_MARKER}")
        out = calls.ask(msgs, suffix="final")
        answer, found = extract_answer(out) if has_final_marker(out) else (_clean(out), True)
    notes = []
    if index is None:
        notes.append("no_index_closed_book")
    if exhausted:
        notes.append("budget_exhausted")
    return OperatorOutcome(
        operator=OperatorKind.ITERATIVE_STEP.value,
        answer=answer,
        reasoning=" ".join(sentences),
        retrieved_doc_ids=tuple(calls.doc_ids),
        usage=calls.usage,
        retrieval_queries=tuple(calls.queries),
        final_marker=found,
        budget_exhausted=exhausted,
        degraded=index is None or not calls.doc_ids,
        notes=tuple(notes),
    )


def _self_ask_demos() -> str:
    blocks = []
    for d in load_json("self_ask_demos"):
        lines = [f"Question: {d['question']}", "Are follow up questions needed here: Yes."]
        for sub_q, sub_a in d["steps"]:
            lines += [f"{FOLLOW_UP_MARKER} {sub_q}", f"{INTERMEDIATE_MARKER} {sub_a}"]
        lines.append(f"{FINAL_MARKER} {d['answer']}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


SUB_STEP_INSTRUCTION = (
    "Break the question into follow-up questions and answer it step by step. "
    f"Each turn, output exactly one line: '{FOLLOW_UP_MARKER} <sub-question>' if another "
    f"follow-up question is needed, or '{FINAL_MARKER} <answer>' if not."
)

_FOLLOW_UP_RE = re.compile(r"Follow[ -]up:\s*(.+)", re.IGNORECASE)


def run_sub_step(
    q: Question | str,
    backend: Backend,
    index: RetrievalIndex | None = None,
    budget: OperatorBudget = OperatorBudget(),
    leaf: LeafMode | str = LeafMode.CLOSED_BOOK,
    *,
    context: str = "",
    tag: str = "operator.sub_step",
) -> OperatorOutcome:
    """Self-ask decomposition; each follow-up question is answered by the ``leaf`` operator."""
    leaf = LeafMode(leaf)
    calls = _Calls(backend, tag)
    text = _text(q)
    sub_results: list[tuple[str, OperatorOutcome]] = []
    transcript: list[str] = []
    answer, found, exhausted = "", False, False
    notes: list[str] = []

    def prompt(final: bool = False) -> list[ChatMessage]:
        lines = [f"{_context_block(context)}Question: {text}"]
        if transcript:
            lines.append("Are follow up questions needed here: Yes.")
            lines += transcript
        lines.append(FINAL_MARKER if final else "Are follow up questions needed here:")
        return [system(f"{SUB_STEP_INSTRUCTION}\n\n{_self_ask_demos()}"), user("\n".join(lines))]

    for turn in range(1, budget.max_iterations + 1):
        out = calls.ask(prompt(), suffix=f"t{turn}")
        if has_final_marker(out):
            answer, found = extract_answer(out)
            break
        m = _FOLLOW_UP_RE.search(out)
        if not m:
            notes.append("unparseable_decomposition")
            break
        sub_q = m.group(1).strip()
        child = _answer_leaf(sub_q, leaf, backend, index, budget, f"{tag}.leaf")
        calls.absorb(child)
        sub_results.append((sub_q, child))
        transcript += [f"{FOLLOW_UP_MARKER} {sub_q}", f"{INTERMEDIATE_MARKER} {child.answer}"]
    else:
        exhausted = True
        notes.append("budget_exhausted")
    if not found:
        out = calls.ask(prompt(final=True), suffix="final")
        answer, found = extract_answer(out) if has_final_marker(out) else (_clean(out), True)
    return OperatorOutcome(
        operator=OperatorKind.SUB_STEP.value,
        answer=answer,
        reasoning="\n".join(transcript),
        retrieved_doc_ids=tuple(calls.doc_ids),
        sub_results=tuple(sub_results),
        usage=calls.usage,
        final_marker=found,
        budget_exhausted=exhausted,
        degraded=any(o.degraded for _, o in sub_results),
        notes=tuple(notes) + (f"leaf={leaf.value}",),
    )


def _answer_leaf(
    sub_q: str, leaf: LeafMode, backend: Backend, index: RetrievalIndex | None, budget: OperatorBudget, tag: str
) -> OperatorOutcome:
    if leaf is LeafMode.CLOSED_BOOK:
        return run_cot(sub_q, backend, tag=f"{tag}.cot")
    try:
        if leaf is LeafMode.SINGLE_STEP:
            return run_single_step(sub_q, backend, index, budget, tag=f"{tag}.single_step")
        return run_iterative_step(sub_q, backend, index, budget, tag=f"{tag}.iterative_step")
    except RetrievalError as exc:
        fallback = run_cot(sub_q, backend, tag=f"{tag}.cot")
        return replace(fallback, degraded=True, notes=fallback.notes + (f"leaf_retrieval_failed: {exc}",))


def route_for(q_type: QuestionType | str, routing: Mapping[str, tuple] | None = None) -> tuple[OperatorKind, LeafMode | None]:
    routing = DEFAULT_ROUTING if routing is None else routing
    label = q_type.label if isinstance(q_type, QuestionType) else str(q_type)
    op, leaf = routing.get(label, (OperatorKind.COT, None))
    return OperatorKind(op), (LeafMode(leaf) if leaf is not None else None)


def run_adaptive_step(
    q: Question | str,
    q_type: QuestionType | str,
    backend: Backend,
    index: RetrievalIndex | None = None,
    budget: OperatorBudget = OperatorBudget(),
    *,
    routing: Mapping[str, tuple] | None = None,
    context: str = "",
    tag: str = "operator.adaptive_step",
) -> OperatorOutcome:
    """Pick a fixed strategy from the question type and run it."""
    op, leaf = route_for(q_type, routing)
    label = q_type.label if isinstance(q_type, QuestionType) else str(q_type)
    if op is OperatorKind.SUB_STEP:
        routed = run_sub_step(q, backend, index, budget, leaf or LeafMode.CLOSED_BOOK,
                              context=context, tag=f"{tag}.sub_step")
        route = f"sub_step+{(leaf or LeafMode.CLOSED_BOOK).value}"
    else:
        routed = run_operator(op, q, backend, index, budget, q_type=q_type, context=context, tag=tag)
        route = op.value
    return replace(
        routed,
        operator=OperatorKind.ADAPTIVE_STEP.value,
        notes=routed.notes + (f"routed {label} -> {route}",),
    )


def run_operator(
    kind: OperatorKind | str,
    q: Question | str,
    backend: Backend,
    index: RetrievalIndex | None = None,
    budget: OperatorBudget = OperatorBudget(),
    *,
    q_type: QuestionType | str | None = None,
    leaf: LeafMode | str = LeafMode.CLOSED_BOOK,
    context: str = "",
    tag: str | None = None,
) -> OperatorOutcome:
    """Dispatch to one operator by kind."""
    kind = OperatorKind(kind)
    slug = _SLUGS[kind]
    tag = f"operator.{slug}" if tag is None else f"{tag}.{slug}"
    if kind is OperatorKind.COT:
        return run_cot(q, backend, context=context, tag=tag)
    if kind is OperatorKind.SINGLE_STEP:
        return run_single_step(q, backend, index, budget, context=context, tag=tag)
    if kind is OperatorKind.ITERATIVE_STEP:
        return run_iterative_step(q, backend, index, budget, context=context, tag=tag)
    if kind is OperatorKind.SUB_STEP:
        return run_sub_step(q, backend, index, budget, leaf, context=context, tag=tag)
    if q_type is None:
        raise ValueError("the adaptive-step operator needs a question type")
    return run_adaptive_step(q, q_type, backend, index, budget, context=context, tag=tag)


_SLUGS = {
    OperatorKind.COT: "cot",
    OperatorKind.SINGLE_STEP: "single_step",
    OperatorKind.ITERATIVE_STEP: "iterative_step",
    OperatorKind.SUB_STEP: "sub_step",
    OperatorKind.ADAPTIVE_STEP: "adaptive_step",
}


def default_operator_pool() -> tuple[Operator, ...]:
    return tuple(Operator(OperatorKind(k), v) for k, v in load_json("operator_pool").items())
