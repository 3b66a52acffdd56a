"""Command-line entry point: ``inquire <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from . import __version__
from .errors import InquireError, StageError
from .ranked_lists import DEFAULT_DEPTH, DEFAULT_PERSISTENCE
from .selection import DEFAULT_LAMBDA

log = logging.getLogger("inquire")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _write_jsonl(path: str | Path, records) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            n += 1
    return n


# -- subcommands -----------------------------------------------------------


def cmd_build_corpus(args: argparse.Namespace) -> None:
    from .corpus import build_corpus, load_title_index

    paths = sorted(Path(args.xml_dir).glob("*.xml"))
    masked, selection = build_corpus(paths, load_title_index(args.titles), args.section_pattern, args.mask_token)
    n = _write_jsonl(args.out, (dp.to_record() for dp in selection.datapoints))
    if args.masked_out:
        _write_jsonl(args.masked_out, ({"paragraph_id": m.paragraph_id, "masked_text": m.text} for m in masked))
    drops = ", ".join(f"{k}={v}" for k, v in sorted(selection.dropped.items())) or "none"
    print(f"{len(paths)} articles, {len(masked)} paragraphs, {n} datapoints kept; dropped: {drops}")


def cmd_generate(args: argparse.Namespace) -> None:
    from .llm_gateway import generate_and_store
    from .pipeline import load_datapoints

    settings = {
        "endpoint": args.endpoint,
        "out": str(Path(args.out).resolve()),
        "model": args.model,
        "temperature": args.temperature,
        "cache_dir": str(Path(args.cache_dir).resolve()) if args.cache_dir else None,
        "max_in_flight": args.max_in_flight,
    }
    out = generate_and_store(load_datapoints(args.datapoints), settings, args.questions)
    print(f"wrote {out}")


def cmd_search(args: argparse.Namespace) -> None:
    from .retrieval import batch_search, ingest_embeddings, ranked_list_to_record, read_queries

    store = ingest_embeddings(args.embeddings, args.manifest)
    queries = read_queries(args.queries)
    results = batch_search(store, queries, args.k, threads=args.threads)
    n = _write_jsonl(args.out, ({**q.meta, **ranked_list_to_record(r)} for q, r in zip(queries, results)))
    print(f"searched {store.count} documents for {n} queries (k={args.k})")


def _load_results(path: str | Path):
    from .pipeline import ParagraphLists, query_info
    from .retrieval import ranked_list_from_record, read_jsonl

    grouped: dict[str, ParagraphLists] = {}
    for rec in read_jsonl(path):
        info = query_info(rec["query_id"], rec)
        grouped.setdefault(info.paragraph_id, ParagraphLists(info.paragraph_id)).add(info, ranked_list_from_record(rec))
    return grouped


def cmd_rerank(args: argparse.Namespace) -> None:
    from .rerank import load_rerank_scores, rerank
    from .retrieval import ranked_list_to_record

    grouped = _load_results(args.results)
    scores = load_rerank_scores(args.scores)
    out = []
    for pid in sorted(scores):
        lists = grouped.get(pid)
        if lists is None or lists.context is None:
            raise InquireError(f"paragraph {pid!r} has no context result list to rerank")
        for (kind, qi), score_set in sorted(scores[pid].items(), key=lambda kv: (kv[0][0], kv[0][1] or 0)):
            qid = f"{pid}::{kind}" + (f"::{qi}" if qi is not None else "")
            rec = ranked_list_to_record(rerank(lists.context, score_set, qid))
            rec.update(paragraph_id=pid, query_kind=kind)
            if qi is not None:
                rec["question_index"] = qi
            out.append(rec)
    print(f"reranked {_write_jsonl(args.out, out)} lists")


def _eval_config(args: argparse.Namespace, **extra):
    from .pipeline import PipelineConfig

    return PipelineConfig(
        embeddings="", manifest="", queries="",
        k=args.k, p=args.p, lambda_=args.lambda_, questions=args.questions,
        question_counts=tuple(args.question_counts), reference=args.reference, signal=args.signal,
        batch_mode=args.batch_mode, **extra,
    )


def cmd_select(args: argparse.Namespace) -> None:
    from .errors import DataError
    from .pipeline import evaluate_paragraph, load_datapoints
    from .selection import combine

    grouped = _load_results(args.results)
    reranked_by = None
    if args.reranked:
        reranked_by = {}
        for pid, lists in _load_results(args.reranked).items():
            entry = {("context", None): lists.context, ("keywords", None): lists.keywords}
            entry.update({("question", i): r for (_, i), r in lists.questions.items()})
            reranked_by[pid] = entry
    config = _eval_config(args, rerank_scores="reranked" if reranked_by is not None else None)
    out = []
    for dp in load_datapoints(args.datapoints):
        if dp.paragraph_id not in grouped:
            raise DataError(f"no result lists for paragraph {dp.paragraph_id!r}")
        reranked = reranked_by.get(dp.paragraph_id) if reranked_by is not None else None
        record = evaluate_paragraph(grouped[dp.paragraph_id], dp.target_id, config, reranked)
        for n, sel in sorted(record["selection"].items(), key=lambda kv: int(kv[0])):
            scores = [combine(q, d, args.lambda_) for q, d in zip(sel["sim_q"], sel["sim_d"])]
            ranking = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
            out.append({
                "paragraph_id": dp.paragraph_id,
                "n_questions": int(n),
                "lambda": args.lambda_,
                **sel,
                "mmr_rbo": scores,
                "ranking": [i + 1 for i in ranking],
            })
    print(f"wrote {_write_jsonl(args.out, out)} selection records")


def stats_rows(selection_records: Sequence[dict], lambdas: Sequence[float]) -> list:
    """CorrelationSummary rows from ``select`` output, one per (batch size, lambda)."""
    from .selection import combine
    from .stats import batch_correlation_summary

    by_n: dict[int, list[dict]] = {}
    for rec in selection_records:
        by_n.setdefault(int(rec["n_questions"]), []).append(rec)
    rows = []
    for n in sorted(by_n):
        for lam in lambdas:
            batches = [
                ([combine(q, d, lam) for q, d in zip(r["sim_q"], r["sim_d"])], r["signal"]) for r in by_n[n]
            ]
            rows.append(batch_correlation_summary(batches, lam, n_questions=n, with_global=True))
    return rows


def format_table(rows) -> str:
    from .stats import TABLE_COLUMNS

    per_batch = [s.table_rows()[0] for s in rows]
    pooled = [r for s in rows for r in s.table_rows()[1:]]
    lines = ["\t".join(TABLE_COLUMNS)]
    lines += ["\t".join(r[c] for c in TABLE_COLUMNS) for r in per_batch + pooled]
    return "\n".join(lines) + "\n"


def cmd_stats(args: argparse.Namespace) -> None:
    from .retrieval import read_jsonl

    rows = stats_rows(list(read_jsonl(args.selection)), args.lambdas)
    payload = {
        "rows": [s.to_dict() for s in rows],
        "table": [r for s in rows for r in s.table_rows()],
    }
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    table = format_table(rows)
    if args.table:
        Path(args.table).write_text(table, encoding="utf-8")
    sys.stdout.write(table)


def cmd_report(args: argparse.Namespace) -> None:
    from .pipeline import PipelineConfig, run_pipeline, write_plot_data

    try:
        config = PipelineConfig.from_file(args.config)
    except InquireError as exc:
        raise StageError("config", exc) from exc
    for name in ("k", "p", "lambda_", "questions", "threads"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    report = run_pipeline(config)
    report.write(args.out)
    written = write_plot_data(report, args.out_dir) if args.out_dir else []
    agg = report.aggregates
    print(f"{agg['n_paragraphs']} paragraphs; MRR context={agg['mrr']['context']:.4f} "
          f"keywords={agg['mrr']['keywords']:.4f} question={agg['mrr']['question']:.4f}")
    print(f"report: {args.out}" + (f"; plot tables: {', '.join(str(p) for p in written)}" if written else ""))


def cmd_plot(args: argparse.Namespace) -> None:
    from .pipeline import EvalReport, emit_plot_data

    text = emit_plot_data(EvalReport.load(args.report), args.figure)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_synth(args: argparse.Namespace) -> None:
    from .synthetic import make_dataset

    path = make_dataset(
        args.out_dir, n_docs=args.docs, dim=args.dim, n_paragraphs=args.paragraphs,
        n_questions=args.questions, noise=args.noise, k=args.k, seed=args.seed,
    )
    print(f"wrote synthetic dataset; config at {path}")


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inquire", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--k", type=int, default=DEFAULT_DEPTH, help="retrieval / RBO depth (default %(default)s)")
    shared.add_argument("--p", type=float, default=DEFAULT_PERSISTENCE, help="RBO persistence (default %(default)s)")
    shared.add_argument("--lambda", dest="lambda_", type=float, default=DEFAULT_LAMBDA,
                        help="MMR-RBO trade-off (default %(default)s)")
    shared.add_argument("--questions", type=int, default=20, help="questions per batch (default %(default)s)")

    p = sub.add_parser("build-corpus", help="parse TEI XML, mask citations, keep single-citation paragraphs")
    p.add_argument("--xml-dir", required=True)
    p.add_argument("--titles", required=True, help='corpus titles, JSON Lines {"id", "title"}')
    p.add_argument("--out", required=True, help="datapoints JSON Lines")
    p.add_argument("--masked-out", help="also write every masked related-work paragraph here")
    p.add_argument("--mask-token", default="[CITATION]")
    p.add_argument("--section-pattern", default=None, help="regex for related-work headers")
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("generate", parents=[shared], help="generate question and keyword queries via an LLM endpoint")
    p.add_argument("--datapoints", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--endpoint", required=True, help="chat-completion URL")
    p.add_argument("--model", default="gpt-4o-mini")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--cache-dir")
    p.add_argument("--max-in-flight", type=int, default=4)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("search", parents=[shared], help="exact top-k search for query vectors")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("rerank", parents=[shared], help="rerank context results with external scores")
    p.add_argument("--results", required=True, help="output of search")
    p.add_argument("--scores", required=True, help="rerank score JSON Lines")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("select", parents=[shared], help="score questions with MMR-RBO")
    p.add_argument("--results", required=True)
    p.add_argument("--datapoints", required=True)
    p.add_argument("--reranked", help="output of rerank; its lists then supply the utility signal")
    p.add_argument("--question-counts", type=_ints, default=[5, 10, 20])
    p.add_argument("--reference", choices=("keywords", "context"), default="keywords")
    p.add_argument("--signal", choices=("reciprocal_rank", "rank_delta"), default="reciprocal_rank")
    p.add_argument("--batch-mode", choices=("truncate", "independent"), default="truncate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("stats", parents=[shared], help="correlation table from select output")
    p.add_argument("--selection", required=True)
    p.add_argument("--lambdas", type=_floats, default=[0.0, 0.5, 1.0])
    p.add_argument("--out", required=True, help="JSON summary rows")
    p.add_argument("--table", help="also write the table as TSV")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("report", help="run the whole pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="report.json")
    p.add_argument("--out-dir", help="directory for plot tables")
    p.add_argument("--k", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--questions", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plot", help="emit one figure's data table from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--figure", required=True, choices=("hit_ratio", "rbo_ranked", "mrr_rerank", "correlation"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("synth", parents=[shared], help="write a synthetic dataset with planted targets")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--docs", type=int, default=1000)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--paragraphs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InquireError, OSError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
