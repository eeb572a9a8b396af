"""Command-line entry point: ingest, classify, debate, answer, eval."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .classifier import classify_detailed
from .core import QuestionType, canonical_json
from .debate import run_debate
from .errors import HopDebateError, InvalidConfig
from .evaluation import token_report
from .llm import TokenLedger
from .pipeline import (
    RunConfig,
    answer_question,
    load_config,
    load_index,
    make_backend,
    new_run_dir,
    persist_answer,
    question_from_text,
    read_dataset,
    rescore,
    run_eval,
    with_overrides,
    write_ledger,
)
from .retrieval import build_index, read_corpus

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

log = logging.getLogger("hopdebate")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--backend", choices=("mock", "http"), help="override backend kind")
    p.add_argument("--script", help="mock script path")
    p.add_argument("--base-url", help="OpenAI-compatible endpoint base URL")
    p.add_argument("--model", help="model name for the http backend")
    p.add_argument("--max-rounds", type=int, help="debate round limit")
    p.add_argument("--debate-level", choices=("L0", "L1", "L2", "L3"))
    p.add_argument("--k-docs", type=int, help="documents per retrieval (3-10)")
    p.add_argument("--index", help="serialized index path")
    p.add_argument("--corpus", help="corpus JSONL (indexed in memory)")
    p.add_argument("--out", help="root directory for run outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hopdebate", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a BM25 index from a corpus JSONL")
    p.add_argument("corpus")
    p.add_argument("--out", required=True, help="index output path")

    for name, text in (("classify", "print the question type"),
                       ("debate", "print the debated execution plan"),
                       ("answer", "answer one question end to end")):
        p = sub.add_parser(name, help=text)
        p.add_argument("question")
        p.add_argument("--id", default="q0", help="question id used in artifacts")
        if name == "debate":
            p.add_argument("--type", help="skip classification and use this question type")
        _add_run_flags(p)

    p = sub.add_parser("eval", help="answer and score a dataset JSONL")
    p.add_argument("dataset", nargs="?")
    p.add_argument("--concurrency", type=int)
    p.add_argument("--rescore", metavar="RUN_DIR", help="recompute the report of a finished run")
    _add_run_flags(p)
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = with_overrides(
        cfg,
        kind=args.backend, script=args.script, base_url=args.base_url, model=args.model,
        max_rounds=args.max_rounds, debate_level=args.debate_level, k_docs=args.k_docs,
        index_path=Path(args.index) if args.index else None,
        corpus_path=Path(args.corpus) if args.corpus else None,
        output_dir=Path(args.out) if args.out else None,
        concurrency=getattr(args, "concurrency", None),
    )
    cfg.validate()
    return cfg


def cmd_ingest(args: argparse.Namespace) -> int:
    index = build_index(read_corpus(args.corpus))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    index.save(out)
    print(f"indexed {index.doc_count} documents, {index.term_count()} terms -> {out}")
    return EXIT_OK


def cmd_classify(args: argparse.Namespace) -> int:
    cfg = _config(args)
    q = question_from_text(args.question, args.id)
    ledger = TokenLedger(q.id)
    backend = make_backend(cfg.backend, ledger)
    result = classify_detailed(q, cfg.classifier, backend)
    run_dir = new_run_dir(cfg.output_dir, "classify")
    (run_dir / "classification.json").write_text(canonical_json(result, indent=2) + "\n", encoding="utf-8")
    write_ledger(ledger, run_dir / "ledger.json")
    print(result.label.label)
    print(f"run directory: {run_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_debate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    q = question_from_text(args.question, args.id)
    ledger = TokenLedger(q.id)
    backend = make_backend(cfg.backend, ledger)
    run_dir = new_run_dir(cfg.output_dir, "debate")
    if args.type:
        q_type = QuestionType.parse(args.type, cfg.classifier.label_set)
    else:
        classification = classify_detailed(q, cfg.classifier, backend)
        (run_dir / "classification.json").write_text(canonical_json(classification, indent=2) + "\n",
                                                     encoding="utf-8")
        q_type = classification.label
    plan, transcript = run_debate(q, q_type, cfg.debate, backend)
    (run_dir / "transcript.jsonl").write_text(transcript.to_jsonl(), encoding="utf-8")
    (run_dir / "plan.json").write_text(canonical_json(plan, indent=2) + "\n", encoding="utf-8")
    write_ledger(ledger, run_dir / "ledger.json")
    print(canonical_json(plan, indent=2))
    print(f"run directory: {run_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_answer(args: argparse.Namespace) -> int:
    cfg = _config(args)
    q = question_from_text(args.question, args.id)
    index = load_index(cfg)
    ledger = TokenLedger(q.id)
    backend = make_backend(cfg.backend, ledger)
    result = answer_question(q, cfg, backend, index)
    run_dir = new_run_dir(cfg.output_dir, "answer")
    persist_answer(result, run_dir)
    print(result.final_answer)
    if result.trace.degraded:
        print("note: some steps ran closed-book (degraded)", file=sys.stderr)
    print(f"run directory: {run_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    if args.rescore:
        report = rescore(args.rescore)
        print(report.format_table())
        return EXIT_OK
    if not args.dataset:
        raise InvalidConfig("eval needs a dataset path (or --rescore RUN_DIR)")
    cfg = _config(args)
    dataset = read_dataset(args.dataset)
    index = load_index(cfg)
    backend = make_backend(cfg.backend, TokenLedger(), max_in_flight=cfg.concurrency)
    run_dir = new_run_dir(cfg.output_dir, "eval")
    run = run_eval(dataset, cfg, backend, index, run_dir)
    print(run.report.format_table())
    print()
    print(token_report(run.ledger, run.report, cfg.dataset_name).format_table())
    failed = run.report.overall.failed
    if failed:
        print(f"{failed} of {len(dataset)} questions failed; see predictions.jsonl", file=sys.stderr)
    print(f"run directory: {run_dir}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "classify": cmd_classify,
    "debate": cmd_debate,
    "answer": cmd_answer,
    "eval": cmd_eval,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HopDebateError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
