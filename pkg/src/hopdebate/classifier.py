"""Question-type classification by in-context prompting (or zero-shot)."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .core import Question, QuestionType, TokenUsage
from .errors import InvalidConfig, UnrecognizedLabel
from .llm import Backend, ChatMessage, CompletionRequest, assistant, system, user
from .prompts import load_json

TAG = "classifier"
FALLBACK_LABEL = "Null"


@dataclass(frozen=True)
class ClassifierConfig:
    strategy: str = "ICL"
    label_set: tuple[str, ...] = ()
    type_descriptions: dict[str, str] = field(default_factory=dict)
    demonstrations: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "label_set", tuple(self.label_set))
        object.__setattr__(self, "demonstrations", tuple(tuple(d) for d in self.demonstrations))

    def validate(self) -> None:
        if self.strategy not in ("ICL", "ZeroShot"):
            raise InvalidConfig(f"unknown classifier strategy {self.strategy!r}")
        if not self.label_set:
            raise InvalidConfig("classifier label_set is empty")
        if len(set(self.label_set)) != len(self.label_set):
            raise InvalidConfig("classifier label_set has duplicates")
        missing = [l for l in self.label_set if not self.type_descriptions.get(l, "").strip()]
        if missing:
            raise InvalidConfig(f"no type description for {missing}")
        for text, label in self.demonstrations:
            if label not in self.label_set:
                raise InvalidConfig(f"demonstration label {label!r} not in label_set")
        if self.strategy == "ICL":
            covered = {label for _, label in self.demonstrations}
            lacking = [l for l in self.label_set if l not in covered]
            if lacking:
                raise InvalidConfig(f"ICL needs a demonstration for {lacking}")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ClassifierConfig:
        return cls(
            strategy=d.get("strategy", "ICL"),
            label_set=tuple(d["label_set"]),
            type_descriptions=dict(d["type_descriptions"]),
            demonstrations=tuple((q, l) for q, l in d.get("demonstrations", ())),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "label_set": list(self.label_set),
            "type_descriptions": dict(self.type_descriptions),
            "demonstrations": [list(d) for d in self.demonstrations],
        }

    @classmethod
    def default(cls) -> ClassifierConfig:
        return cls.from_dict(load_json("classifier"))

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> ClassifierConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def extended(self, descriptions: dict[str, str], demonstrations: Sequence[tuple[str, str]] = ()) -> ClassifierConfig:
        """Add labels by extending the label set, descriptions and demonstrations.

        New labels are inserted before ``Null`` so the catch-all stays last.
        """
        labels = [l for l in self.label_set if l != FALLBACK_LABEL] + list(descriptions)
        if FALLBACK_LABEL in self.label_set:
            labels.append(FALLBACK_LABEL)
        return ClassifierConfig(
            strategy=self.strategy,
            label_set=tuple(labels),
            type_descriptions={**self.type_descriptions, **descriptions},
            demonstrations=self.demonstrations + tuple(demonstrations),
        )


def _quoted_list(labels: Sequence[str]) -> str:
    quoted = [f"'{l}'" for l in labels]
    if len(quoted) == 1:
        return quoted[0]
    return ", ".join(quoted[:-1]) + " and " + quoted[-1]


def build_classification_prompt(q: Question | str, cfg: ClassifierConfig) -> list[ChatMessage]:
    cfg.validate()
    text = q.text if isinstance(q, Question) else q
    lines = [
        "As an assistant, classify the given multi-hop question into exactly one of the "
        f"question types {_quoted_list(cfg.label_set)}.",
        "",
        "Type descriptions:",
    ]
    lines += [f"- {label}: {cfg.type_descriptions[label]}" for label in cfg.label_set]
    if cfg.strategy == "ICL":
        lines += ["", "Examples:"]
        # demonstrations in label-set order, then any extras in given order
        ordered = sorted(
            enumerate(cfg.demonstrations),
            key=lambda item: (cfg.label_set.index(item[1][1]), item[0]),
        )
        for n, (_, (demo, label)) in enumerate(ordered, 1):
            lines.append(f"Example {n}: {demo} (Output: {label})")
    prompt = "\n".join(lines)
    request = (
        f"Question: {text}\n"
        'Output only a JSON object of the form {"type": "<label>"} naming exactly one type.'
    )
    return [system(prompt), user(request)]


def _label_pattern(label: str) -> re.Pattern:
    return re.compile(r"(?<![\w-])" + re.escape(label) + r"(?![\w-])", re.IGNORECASE)


def parse_type_label(raw: str, label_set: Sequence[str]) -> QuestionType:
    """Pick the earliest label-set member mentioned in ``raw`` (case-insensitive).

    JSON wrappers such as ``{"type": "Inference"}`` are unwrapped first.
    """
    text = raw.strip()
    m = re.search(r"\{.*?\}", text, re.DOTALL)
    if m:
        try:
            obj = json.loads(m.group(0))
        except ValueError:
            obj = None
        if isinstance(obj, dict) and isinstance(obj.get("type"), str):
            text = obj["type"]
    best: tuple[int, int, str] | None = None
    for label in label_set:
        found = _label_pattern(label).search(text)
        if found:
            key = (found.start(), -len(label), label)
            if best is None or key < best:
                best = key
    if best is None:
        raise UnrecognizedLabel(f"no label from {list(label_set)} in {raw[:80]!r}")
    return QuestionType(best[2])


@dataclass(frozen=True)
class Classification:
    label: QuestionType
    raw_outputs: tuple[str, ...]
    usage: TokenUsage
    fallback: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label.label,
            "raw_outputs": list(self.raw_outputs),
            "usage": self.usage.to_dict(),
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Classification:
        return cls(QuestionType(d["label"]), tuple(d["raw_outputs"]), TokenUsage.from_dict(d["usage"]), d["fallback"])


def classify_detailed(q: Question | str, cfg: ClassifierConfig, backend: Backend) -> Classification:
    messages = build_classification_prompt(q, cfg)
    first = backend.complete(CompletionRequest(messages, temperature=0.0, max_output_tokens=32, tag=TAG))
    try:
        return Classification(parse_type_label(first.content, cfg.label_set), (first.content,), first.usage)
    except UnrecognizedLabel:
        pass
    retry = messages + [
        assistant(first.content or "(empty)"),
        user(f"That is not a valid answer. Reply with exactly one of {_quoted_list(cfg.label_set)} "
             'as {"type": "<label>"}.'),
    ]
    second = backend.complete(CompletionRequest(retry, temperature=0.0, max_output_tokens=32, tag=TAG))
    usage = first.usage + second.usage
    outputs = (first.content, second.content)
    try:
        return Classification(parse_type_label(second.content, cfg.label_set), outputs, usage)
    except UnrecognizedLabel:
        fallback = FALLBACK_LABEL if FALLBACK_LABEL in cfg.label_set else cfg.label_set[-1]
        return Classification(QuestionType(fallback), outputs, usage, fallback=True)


def classify(q: Question | str, cfg: ClassifierConfig, backend: Backend) -> QuestionType:
    """Classify ``q``; always returns a member of ``cfg.label_set``."""
    return classify_detailed(q, cfg, backend).label
