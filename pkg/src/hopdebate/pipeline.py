"""The classify -> debate -> execute pipeline with its run configuration and persisted artifacts."""

from __future__ import annotations

import json
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Sequence

from .classifier import Classification, ClassifierConfig, classify_detailed
from .core import ExecutionPlan, Question, QuestionType, TokenUsage, Transcript, canonical_json
from .debate import DebateConfig, run_debate
from .errors import HopDebateError, InvalidConfig
from .evaluation import MetricReport, Prediction, acc_llm, evaluate_run, token_report
from .executor import ExecutionTrace, execute_plan
from .llm import Backend, HttpBackend, MockBackend, TokenLedger
from .operators import OperatorBudget
from .retrieval import RetrievalIndex, build_index, read_corpus

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def interpolate_env(value: Any, env: dict[str, str] | None = None) -> Any:
    """Replace ``${NAME}`` in every string of a parsed JSON value."""
    env = os.environ if env is None else env
    if isinstance(value, str):
        def sub(m: re.Match) -> str:
            if m.group(1) not in env:
                raise InvalidConfig(f"environment variable {m.group(1)} is not set")
            return env[m.group(1)]
        return _ENV_RE.sub(sub, value)
    if isinstance(value, list):
        return [interpolate_env(v, env) for v in value]
    if isinstance(value, dict):
        return {k: interpolate_env(v, env) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class BackendSpec:
    kind: str = "mock"
    script: Path | None = None
    base_url: str | None = None
    model: str | None = None
    api_key: str | None = None
    max_attempts: int = 3
    timeout: float = 60.0

    def validate(self) -> None:
        if self.kind == "mock":
            if self.script is None:
                raise InvalidConfig("mock backend needs a script path")
            if not Path(self.script).is_file():
                raise InvalidConfig(f"mock script not found: {self.script}")
        elif self.kind == "http":
            if not self.base_url or not self.model:
                raise InvalidConfig("http backend needs base_url and model")
        else:
            raise InvalidConfig(f"unknown backend kind {self.kind!r}")


@dataclass(frozen=True)
class RunConfig:
    backend: BackendSpec = field(default_factory=BackendSpec)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig.default)
    debate: DebateConfig = field(default_factory=DebateConfig)
    budget: OperatorBudget = field(default_factory=OperatorBudget)
    index_path: Path | None = None
    corpus_path: Path | None = None
    output_dir: Path = Path("runs")
    concurrency: int = 4
    eval_acc: bool = False
    dataset_name: str = ""

    def validate(self) -> None:
        self.backend.validate()
        self.classifier.validate()
        self.debate.validate()
        if self.concurrency < 1:
            raise InvalidConfig("concurrency must be >= 1")
        if self.index_path is not None and not Path(self.index_path).is_file() and self.corpus_path is None:
            raise InvalidConfig(f"index file not found: {self.index_path}")
        if self.corpus_path is not None and not Path(self.corpus_path).is_file():
            raise InvalidConfig(f"corpus file not found: {self.corpus_path}")

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: Path | None = None) -> RunConfig:
        base = Path(base_dir) if base_dir is not None else Path.cwd()

        def path(v: Any) -> Path | None:
            if v is None:
                return None
            p = Path(v)
            return p if p.is_absolute() else base / p

        try:
            b = dict(d.get("backend", {}))
            backend = BackendSpec(
                kind=b.get("kind", "mock"),
                script=path(b.get("script")),
                base_url=b.get("base_url"),
                model=b.get("model"),
                api_key=b.get("api_key"),
                max_attempts=int(b.get("max_attempts", 3)),
                timeout=float(b.get("timeout", 60.0)),
            )
            clf = d.get("classifier")
            if clf is None:
                classifier = ClassifierConfig.default()
            elif isinstance(clf, str):
                classifier = ClassifierConfig.from_file(path(clf))
            else:
                classifier = ClassifierConfig.from_dict(clf)
            budget = OperatorBudget(**d.get("budget", {}))
            return cls(
                backend=backend,
                classifier=classifier,
                debate=DebateConfig.from_dict(d.get("debate", {})),
                budget=budget,
                index_path=path(d.get("index")),
                corpus_path=path(d.get("corpus")),
                output_dir=path(d.get("output_dir", "runs")),
                concurrency=int(d.get("concurrency", 4)),
                eval_acc=bool(d.get("eval_acc", False)),
                dataset_name=d.get("dataset_name", ""),
            )
        except InvalidConfig:
            raise
        except (KeyError, TypeError, ValueError, OSError) as exc:
            raise InvalidConfig(f"bad run config: {exc}") from exc


def load_config(path: str | os.PathLike) -> RunConfig:
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InvalidConfig(f"cannot read config {p}: {exc}") from exc
    return RunConfig.from_dict(interpolate_env(raw), p.parent)


def make_backend(spec: BackendSpec, ledger: TokenLedger | None = None, max_in_flight: int = 4) -> Backend:
    spec.validate()
    if spec.kind == "mock":
        return MockBackend.from_file(spec.script, ledger)
    return HttpBackend(spec.base_url, spec.model, spec.api_key, max_attempts=spec.max_attempts,
                       timeout=spec.timeout, max_in_flight=max_in_flight, ledger=ledger)


def load_index(cfg: RunConfig) -> RetrievalIndex | None:
    """The configured index, built from the corpus when no index file exists; None if neither is set."""
    if cfg.index_path is not None and Path(cfg.index_path).is_file():
        return RetrievalIndex.load(cfg.index_path)
    if cfg.corpus_path is not None:
        return build_index(read_corpus(cfg.corpus_path))
    return None


# -- one question ---------------------------------------------------------------

@dataclass(frozen=True)
class AnswerResult:
    question: Question
    classification: Classification
    plan: ExecutionPlan
    transcript: Transcript
    trace: ExecutionTrace
    ledger: TokenLedger

    @property
    def final_answer(self) -> str:
        return self.trace.final_answer


def answer_question(
    q: Question,
    cfg: RunConfig,
    backend: Backend,
    index: RetrievalIndex | None,
) -> AnswerResult:
    """Classify, debate and execute one question; ``backend.ledger`` is assumed per-question."""
    classification = classify_detailed(q, cfg.classifier, backend)
    plan, transcript = run_debate(q, classification.label, cfg.debate, backend)
    trace = execute_plan(plan, q, classification.label, backend, index, cfg.budget)
    return AnswerResult(q, classification, plan, transcript, trace, backend.ledger)


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def persist_answer(result: AnswerResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write(out_dir / "question.json", canonical_json(result.question, indent=2) + "\n")
    _write(out_dir / "classification.json", canonical_json(result.classification, indent=2) + "\n")
    _write(out_dir / "transcript.jsonl", result.transcript.to_jsonl())
    _write(out_dir / "plan.json", canonical_json(result.plan, indent=2) + "\n")
    _write(out_dir / "trace.json", canonical_json(result.trace, indent=2) + "\n")
    write_ledger(result.ledger, out_dir / "ledger.json")


def write_ledger(ledger: TokenLedger, path: Path) -> None:
    _write(path, canonical_json(ledger.to_dict(), indent=2) + "\n")


_run_dir_lock = threading.Lock()


def new_run_dir(root: str | os.PathLike, label: str) -> Path:
    """Create a fresh timestamped directory under ``root``; never reuses an existing one."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    with _run_dir_lock:
        n = 0
        while True:
            name = f"{stamp}-{label}" + (f"-{n}" if n else "")
            try:
                (root / name).mkdir()
                return root / name
            except FileExistsError:
                n += 1


def safe_name(qid: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", qid) or "question"


# -- datasets and evaluation -----------------------------------------------------

def read_dataset(path: str | os.PathLike) -> list[Question]:
    out = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                q = Question.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed dataset line: {exc}") from exc
            if q.id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate question id {q.id!r} (first on line {seen[q.id]})")
            seen[q.id] = lineno
            out.append(q)
    return out


def write_jsonl(path: Path, rows: Sequence[Any]) -> None:
    _write(path, "".join(canonical_json(r) + "\n" for r in rows))


@dataclass(frozen=True)
class EvalRun:
    run_dir: Path
    predictions: tuple[Prediction, ...]
    report: MetricReport
    ledger: TokenLedger


def _eval_one(q: Question, cfg: RunConfig, backend: Backend, run_ledger: TokenLedger,
              index: RetrievalIndex | None, run_dir: Path) -> Prediction:
    qledger = TokenLedger(q.id, parent=run_ledger)
    qbackend = backend.with_ledger(qledger)
    qdir = run_dir / "questions" / safe_name(q.id)
    try:
        result = answer_question(q, cfg, qbackend, index)
        persist_answer(result, qdir)
        acc = None
        if cfg.eval_acc and q.gold_answers:
            before = qledger.total()
            acc = acc_llm(result.final_answer, q.gold_answers, q, qbackend)
            after = qledger.total()
            spent = TokenUsage(after.prompt_tokens - before.prompt_tokens,
                               after.completion_tokens - before.completion_tokens)
            _write(qdir / "acc.json", canonical_json({"acc": acc, "usage": spent.to_dict()}, indent=2) + "\n")
            write_ledger(qledger, qdir / "ledger.json")
        return Prediction(q.id, result.final_answer, qledger.total(), None,
                          result.classification.label.label, acc, result.trace.degraded)
    except (HopDebateError, ValueError, OSError) as exc:
        qdir.mkdir(parents=True, exist_ok=True)
        write_ledger(qledger, qdir / "ledger.json")
        return Prediction(q.id, "", qledger.total(), f"{type(exc).__name__}: {exc}")


def run_eval(
    dataset: Sequence[Question],
    cfg: RunConfig,
    backend: Backend,
    index: RetrievalIndex | None,
    run_dir: Path,
    progress: Callable[[Prediction], None] | None = None,
) -> EvalRun:
    """Answer every question under a concurrency bound, then score and persist the run.

    A failing question is recorded and the run continues.
    """
    run_ledger = backend.ledger
    with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
        futures = [pool.submit(_eval_one, q, cfg, backend, run_ledger, index, run_dir) for q in dataset]
        predictions = []
        for f in futures:
            p = f.result()
            predictions.append(p)
            if progress:
                progress(p)
    write_jsonl(run_dir / "dataset.jsonl", list(dataset))
    write_jsonl(run_dir / "predictions.jsonl", predictions)
    report = evaluate_run(predictions, dataset)
    _write(run_dir / "report.json", canonical_json(report, indent=2) + "\n")
    tokens = token_report(run_ledger, report, cfg.dataset_name)
    _write(run_dir / "tokens.json", canonical_json(tokens, indent=2) + "\n")
    write_ledger(run_ledger, run_dir / "ledger.json")
    return EvalRun(run_dir, tuple(predictions), report, run_ledger)


def rescore(run_dir: str | os.PathLike) -> MetricReport:
    """Recompute the report from persisted predictions; makes no backend call."""
    run_dir = Path(run_dir)
    dataset = read_dataset(run_dir / "dataset.jsonl")
    lines = (run_dir / "predictions.jsonl").read_text(encoding="utf-8").split("\n")
    predictions = [Prediction.from_dict(json.loads(l)) for l in lines if l.strip()]
    return evaluate_run(predictions, dataset)


def with_overrides(cfg: RunConfig, **kw: Any) -> RunConfig:
    """Apply command-line overrides; ``None`` values leave the field alone."""
    debate_kw = {k: kw.pop(k) for k in ("max_rounds", "debate_level") if kw.get(k) is not None}
    backend_kw = {k: kw.pop(k) for k in ("kind", "script", "base_url", "model") if kw.get(k) is not None}
    k_docs = kw.pop("k_docs", None)
    out = replace(cfg, **{k: v for k, v in kw.items() if v is not None})
    if debate_kw:
        out = replace(out, debate=replace(out.debate, **debate_kw))
    if backend_kw:
        if "script" in backend_kw:
            backend_kw["script"] = Path(backend_kw["script"])
        out = replace(out, backend=replace(out.backend, **backend_kw))
    if k_docs is not None:
        try:
            out = replace(out, budget=replace(out.budget, k_docs=k_docs))
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc
    return out


def question_from_text(text: str, qid: str = "q0", q_type: str | None = None) -> Question:
    return Question(qid, text, declared_type=QuestionType(q_type) if q_type else None)
