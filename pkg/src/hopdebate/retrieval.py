"""Okapi BM25 over an in-memory inverted index."""

from __future__ import annotations

import json
import math
import os
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from .errors import DuplicateIdError, EmptyCorpusError, EmptyQueryError

INDEX_FORMAT = "hopdebate-bm25"
INDEX_VERSION = 1

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_K = 5
K_RANGE = (3, 10)

_TERM_RE = re.compile(r"[^\W_]+")


def tokenize_text(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TERM_RE.findall(text.lower())


def clamp_k(k: int) -> int:
    lo, hi = K_RANGE
    return max(lo, min(hi, k))


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError(f"document {self.id!r} has empty text")

    @property
    def indexed_text(self) -> str:
        return f"{self.title} {self.text}"

    def to_dict(self) -> dict[str, str]:
        return {"id": self.id, "title": self.title, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Document:
        return cls(str(d["id"]), d.get("title", ""), d["text"])


def read_corpus(path: str | os.PathLike) -> Iterator[Document]:
    """Stream documents from a JSONL file; errors name the offending line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield Document.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed corpus line: {exc}") from exc


@dataclass(frozen=True)
class Hit:
    doc_id: str
    score: float


@dataclass(frozen=True)
class RetrievalResult:
    query: str
    hits: tuple[Hit, ...]

    @property
    def doc_ids(self) -> list[str]:
        return [h.doc_id for h in self.hits]


class RetrievalIndex:
    """Immutable once built; safe to query from many threads."""

    def __init__(
        self,
        postings: dict[str, list[tuple[int, int]]],
        docs: Sequence[Document],
        doc_lengths: Sequence[int],
        k1: float = DEFAULT_K1,
        b: float = DEFAULT_B,
    ):
        self.postings = postings
        self.docs = tuple(docs)
        self.doc_lengths = tuple(doc_lengths)
        self.doc_count = len(self.doc_lengths)
        self.avg_doc_length = sum(self.doc_lengths) / self.doc_count if self.doc_count else 0.0
        self.k1 = k1
        self.b = b
        self._ordinal = {d.id: i for i, d in enumerate(self.docs)}
        self._tf = [None] * self.doc_count  # lazily built per-doc term counts

    # -- scoring -----------------------------------------------------------

    def idf(self, term: str) -> float:
        n = len(self.postings.get(term, ()))
        return math.log((self.doc_count - n + 0.5) / (n + 0.5) + 1.0)

    def _term_weight(self, idf: float, tf: int, length: int) -> float:
        norm = self.k1 * (1.0 - self.b + self.b * length / self.avg_doc_length)
        return idf * (tf * (self.k1 + 1.0)) / (tf + norm)

    def term_frequency(self, ordinal: int, term: str) -> int:
        counts = self._tf[ordinal]
        if counts is None:
            counts = Counter(tokenize_text(self.docs[ordinal].indexed_text))
            self._tf[ordinal] = counts
        return counts.get(term, 0)

    def bm25_score(self, query_terms: Sequence[str], ordinal: int) -> float:
        if not 0 <= ordinal < self.doc_count:
            raise IndexError(f"ordinal {ordinal} out of range")
        length = self.doc_lengths[ordinal]
        score = 0.0
        for term in query_terms:
            tf = self.term_frequency(ordinal, term)
            if tf:
                score += self._term_weight(self.idf(term), tf, length)
        return score

    def retrieve(self, query: str, k: int = DEFAULT_K) -> RetrievalResult:
        """Top-``k`` documents with positive score; ties go to the smaller doc id."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        terms = tokenize_text(query)
        if not terms:
            raise EmptyQueryError(f"query {query!r} has no indexable terms")
        scores: dict[int, float] = {}
        for term in terms:
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for ordinal, tf in plist:
                scores[ordinal] = scores.get(ordinal, 0.0) + self._term_weight(
                    idf, tf, self.doc_lengths[ordinal]
                )
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], self.docs[kv[0]].id))
        hits = tuple(Hit(self.docs[o].id, s) for o, s in ranked[:k] if s > 0.0)
        return RetrievalResult(query, hits)

    def document(self, doc_id: str) -> Document:
        return self.docs[self._ordinal[doc_id]]

    # -- persistence -------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "params": {"k1": self.k1, "b": self.b},
            "docs": [d.to_dict() for d in self.docs],
            "doc_lengths": list(self.doc_lengths),
            "postings": {t: [list(p) for p in self.postings[t]] for t in sorted(self.postings)},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RetrievalIndex:
        if d.get("format") != INDEX_FORMAT or d.get("version") != INDEX_VERSION:
            raise ValueError(f"unsupported index format {d.get('format')!r} v{d.get('version')}")
        postings = {t: [(int(o), int(f)) for o, f in plist] for t, plist in d["postings"].items()}
        return cls(
            postings,
            [Document.from_dict(x) for x in d["docs"]],
            d["doc_lengths"],
            k1=d["params"]["k1"],
            b=d["params"]["b"],
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> RetrievalIndex:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def term_count(self) -> int:
        return len(self.postings)


def build_index(
    docs: Iterable[Document], k1: float = DEFAULT_K1, b: float = DEFAULT_B
) -> RetrievalIndex:
    postings: dict[str, list[tuple[int, int]]] = {}
    kept: list[Document] = []
    lengths: list[int] = []
    seen: set[str] = set()
    for doc in docs:
        if doc.id in seen:
            raise DuplicateIdError(f"duplicate document id {doc.id!r}")
        seen.add(doc.id)
        ordinal = len(kept)
        terms = tokenize_text(doc.indexed_text)
        for term, tf in Counter(terms).items():
            postings.setdefault(term, []).append((ordinal, tf))
        kept.append(doc)
        lengths.append(len(terms))
    if not kept:
        raise EmptyCorpusError("cannot index an empty corpus")
    return RetrievalIndex(postings, kept, lengths, k1, b)
