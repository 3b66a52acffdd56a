"""End-to-end evaluation: corpus -> (generation) -> search -> (rerank) -> select -> stats -> report."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import statistics
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .corpus import Datapoint, build_corpus, load_title_index
from .errors import ConfigError, DataError, InquireError, StageError, UnavailableDataError
from .ranked_lists import RankedList, RboParams, reciprocal_rank
from .rerank import QueryKey, batch_rerank_summary, load_rerank_scores, rerank
from .retrieval import QueryVector, batch_search, ingest_embeddings, read_jsonl, read_queries
from .selection import QuestionBatch, batch_similarities, sim_q
from .stats import CorrelationSummary, batch_correlation_summary

log = logging.getLogger(__name__)

REPORT_SCHEMA = "inquire.eval_report/1"
SIGNALS = ("reciprocal_rank", "rank_delta")
REFERENCES = ("keywords", "context")
BATCH_MODES = ("truncate", "independent")


@dataclass
class PipelineConfig:
    """Inputs and parameters for one evaluation run.

    Paths are resolved relative to ``base_dir`` (the config file's folder
    when loaded from disk). ``xml_dir`` + ``titles`` enable the corpus
    stage, which then supplies the datapoints; ``rerank_scores`` enables
    the rerank stage; ``generation`` (endpoint settings) enables question
    generation into ``generation["out"]``.
    """

    embeddings: str
    manifest: str
    queries: str
    datapoints: str | None = None
    xml_dir: str | None = None
    titles: str | None = None
    rerank_scores: str | None = None
    generation: dict | None = None
    k: int = 50
    p: float = 0.9
    lambda_: float = 0.5
    questions: int = 20
    lambdas: tuple[float, ...] = (0.0, 0.5, 1.0)
    question_counts: tuple[int, ...] = (5, 10, 20)
    reference: str = "keywords"
    signal: str = "reciprocal_rank"
    batch_mode: str = "truncate"
    threads: int = 1
    base_dir: str = "."

    _PATHS = ("embeddings", "manifest", "queries", "datapoints", "xml_dir", "titles", "rerank_scores")

    @classmethod
    def from_dict(cls, raw: Mapping, base_dir: str | Path = ".") -> PipelineConfig:
        data = dict(raw)
        if "lambda" in data:
            data["lambda_"] = data.pop("lambda")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key in ("lambdas", "question_counts"):
            if key in data:
                data[key] = tuple(data[key])
        data.setdefault("base_dir", str(base_dir))
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path: str | Path) -> PipelineConfig:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw, base_dir=path.parent)

    def path(self, name: str) -> Path | None:
        value = getattr(self, name)
        return None if value is None else Path(self.base_dir) / value

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "base_dir"}
        d["lambda"] = d.pop("lambda_")
        d["lambdas"] = list(self.lambdas)
        d["question_counts"] = list(self.question_counts)
        return d

    def validate(self) -> None:
        """Check parameters and that every referenced input exists, before any compute."""
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0 < self.p < 1:
            raise ConfigError("p must lie in (0, 1)")
        if not all(0 <= lam <= 1 for lam in (self.lambda_, *self.lambdas)):
            raise ConfigError("lambda values must lie in [0, 1]")
        if self.questions < 1 or any(n < 1 for n in self.question_counts):
            raise ConfigError("question counts must be >= 1")
        if self.reference not in REFERENCES:
            raise ConfigError(f"reference must be one of {REFERENCES}")
        if self.signal not in SIGNALS:
            raise ConfigError(f"signal must be one of {SIGNALS}")
        if self.signal == "rank_delta" and self.rerank_scores is None:
            raise ConfigError("signal 'rank_delta' needs rerank_scores")
        if self.batch_mode not in BATCH_MODES:
            raise ConfigError(f"batch_mode must be one of {BATCH_MODES}")
        if self.datapoints is None and self.xml_dir is None:
            raise ConfigError("either datapoints or xml_dir + titles is required")
        if self.xml_dir is not None and self.titles is None:
            raise ConfigError("xml_dir needs a titles file")
        for name in self._PATHS:
            if name == "datapoints" and self.xml_dir is not None:
                continue
            p = self.path(name)
            if p is not None and not p.exists():
                raise ConfigError(f"{name} file not found: {p}")

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


# -- query bookkeeping -----------------------------------------------------


@dataclass(frozen=True)
class QueryInfo:
    paragraph_id: str
    kind: str
    index: int | None = None
    batch_size: int | None = None


def query_info(query_id: str, meta: Mapping | None = None) -> QueryInfo:
    """Where a query belongs: explicit record fields win, else ``query_id`` is parsed.

    Parsed forms: ``<paragraph>::context``, ``<paragraph>::keywords`` and
    ``<paragraph>::question::<i>`` with 1-based ``i``.
    """
    meta = meta or {}
    if "paragraph_id" in meta and "query_kind" in meta:
        qi = meta.get("question_index")
        bs = meta.get("batch_size")
        info = QueryInfo(str(meta["paragraph_id"]), meta["query_kind"], None if qi is None else int(qi),
                         None if bs is None else int(bs))
    else:
        parts = query_id.split("::")
        if len(parts) == 2 and parts[1] in ("context", "keywords"):
            info = QueryInfo(parts[0], parts[1])
        elif len(parts) == 3 and parts[1] == "question" and parts[2].isdigit():
            info = QueryInfo(parts[0], "question", int(parts[2]))
        else:
            raise DataError(f"cannot tell which paragraph query {query_id!r} belongs to")
    if info.kind not in ("context", "keywords", "question"):
        raise DataError(f"query {query_id!r}: unknown kind {info.kind!r}")
    if (info.kind == "question") != (info.index is not None):
        raise DataError(f"query {query_id!r}: question queries, and only they, need a question index")
    return info


@dataclass
class ParagraphLists:
    """Retrieval results of every query issued for one paragraph."""

    paragraph_id: str
    context: RankedList | None = None
    keywords: RankedList | None = None
    questions: dict[tuple[int | None, int], RankedList] = field(default_factory=dict)

    def add(self, info: QueryInfo, ranked: RankedList) -> None:
        if info.kind == "question":
            key = (info.batch_size, info.index)
            if key in self.questions:
                raise DataError(f"paragraph {self.paragraph_id!r}: question {info.index} listed twice")
            self.questions[key] = ranked
        elif getattr(self, info.kind) is not None:
            raise DataError(f"paragraph {self.paragraph_id!r}: two {info.kind} queries")
        else:
            setattr(self, info.kind, ranked)

    def question_lists(self, n: int | None = None, mode: str = "truncate") -> list[RankedList] | None:
        """Question results in generation order.

        ``truncate`` takes the first ``n`` of the largest batch; ``independent``
        takes the batch generated with exactly ``n`` questions. None when the
        paragraph has too few questions.
        """
        if mode == "independent" and n is not None:
            chosen = sorted((i, r) for (bs, i), r in self.questions.items() if bs == n)
            return [r for _, r in chosen] if len(chosen) == n else None
        sizes = {bs for bs, _ in self.questions}
        largest = None if None in sizes else max(sizes, default=None)
        chosen = sorted((i, r) for (bs, i), r in self.questions.items() if bs == largest)
        if [i for i, _ in chosen] != list(range(1, len(chosen) + 1)):
            raise DataError(f"paragraph {self.paragraph_id!r}: question indices are not 1..{len(chosen)}")
        lists = [r for _, r in chosen]
        if n is None:
            return lists
        return lists[:n] if len(lists) >= n else None


def group_results(queries: Sequence[QueryVector], results: Sequence[RankedList]) -> dict[str, ParagraphLists]:
    grouped: dict[str, ParagraphLists] = {}
    for q, ranked in zip(queries, results):
        info = query_info(q.query_id, q.meta)
        grouped.setdefault(info.paragraph_id, ParagraphLists(info.paragraph_id)).add(info, ranked)
    return grouped


# -- per-paragraph evaluation -----------------------------------------------


def _hit_record(ranked: RankedList, target: str, k: int) -> dict:
    rank = ranked.position(target)
    return {
        "rank": rank,
        "reciprocal_rank": reciprocal_rank(ranked, target),
        "hit": rank is not None and rank <= k,
    }


def _rank_or_miss(ranked: RankedList, target: str) -> int:
    pos = ranked.position(target)
    return len(ranked) + 1 if pos is None else pos


def evaluate_paragraph(
    lists: ParagraphLists,
    target: str,
    config: PipelineConfig,
    reranked: Mapping[QueryKey, RankedList] | None,
) -> dict:
    """Per-paragraph record: hits, reciprocal ranks, MMR-RBO ingredients and rerank deltas."""
    params = RboParams(config.p, config.k)
    if lists.context is None or lists.keywords is None:
        raise DataError(f"paragraph {lists.paragraph_id!r} lacks a context or keyword query")
    full = lists.question_lists()
    if not full:
        raise DataError(f"paragraph {lists.paragraph_id!r} has no question queries")
    full = full[: config.questions]
    reference = lists.keywords if config.reference == "keywords" else lists.context

    context_rbo = [sim_q(q, lists.context, params) for q in full]
    by_context = sorted(range(len(full)), key=lambda i: (-context_rbo[i], i))
    rbo_position = {qi: pos for pos, qi in enumerate(by_context, start=1)}
    question_records = []
    for i, ranked in enumerate(full):
        rec = {"index": i + 1, **_hit_record(ranked, target, config.k)}
        rec["rbo_context"] = context_rbo[i]
        rec["rbo_context_rank"] = rbo_position[i]
        question_records.append(rec)

    record: dict = {
        "paragraph_id": lists.paragraph_id,
        "target_id": target,
        "retrieval": {
            "context": _hit_record(lists.context, target, config.k),
            "keywords": _hit_record(lists.keywords, target, config.k),
            "questions": question_records,
        },
        "rerank": None,
    }

    rerank_summary = None
    if reranked is not None:
        batch = QuestionBatch(lists.paragraph_id, reference, tuple(full), target)
        rerank_summary = batch_rerank_summary(batch, lists.context, reranked)
        record["rerank"] = rerank_summary.to_dict()

    def signal(question_number: int, ranked: RankedList) -> float:
        if reranked is None:
            return reciprocal_rank(ranked, target)
        moved = reranked[("question", question_number)]
        if config.signal == "rank_delta":
            return float(_rank_or_miss(lists.context, target) - _rank_or_miss(moved, target))
        return reciprocal_rank(moved, target)

    selection = {}
    for n in sorted(set(config.question_counts)):
        qlists = lists.question_lists(n, config.batch_mode)
        if qlists is None:
            continue
        sims = batch_similarities(QuestionBatch(lists.paragraph_id, reference, tuple(qlists)), params)
        if config.batch_mode == "independent" and reranked is not None and len(qlists) != len(full):
            raise DataError("independent batches cannot be combined with rerank scores keyed to the full batch")
        selection[str(n)] = {
            "sim_q": list(sims.sim_q),
            "sim_d": list(sims.sim_d),
            "signal": [signal(i + 1, r) for i, r in enumerate(qlists)],
        }
    record["selection"] = selection
    full_sims = batch_similarities(QuestionBatch(lists.paragraph_id, reference, tuple(full)), params)
    record["mmr_rbo"] = full_sims.mmr(config.lambda_)
    return record


# -- aggregation -----------------------------------------------------------


def _mean(values: Iterable[float]) -> float | None:
    values = list(values)
    return statistics.fmean(values) if values else None


def aggregate(records: Sequence[Mapping], config: PipelineConfig) -> dict:
    """Report aggregates, derived only from per-paragraph records."""
    if not records:
        raise DataError("no paragraphs to aggregate")
    ret = [r["retrieval"] for r in records]
    questions = [q for r in ret for q in r["questions"]]
    out: dict = {
        "n_paragraphs": len(records),
        "mrr": {
            "context": _mean(r["context"]["reciprocal_rank"] for r in ret),
            "keywords": _mean(r["keywords"]["reciprocal_rank"] for r in ret),
            "question": _mean(q["reciprocal_rank"] for q in questions),
            "best_question": _mean(max(q["reciprocal_rank"] for q in r["questions"]) for r in ret),
        },
        "hit_ratio": {
            "context": _mean(float(r["context"]["hit"]) for r in ret),
            "keywords": _mean(float(r["keywords"]["hit"]) for r in ret),
            "question": _mean(float(q["hit"]) for q in questions),
            "best_question": _mean(float(any(q["hit"] for q in r["questions"])) for r in ret),
        },
    }

    by_position: dict[int, list[dict]] = {}
    for r in ret:
        for q in r["questions"]:
            by_position.setdefault(q["rbo_context_rank"], []).append(q)
    out["rbo_ranked"] = [
        {
            "rbo_rank": pos,
            "hit_ratio": _mean(float(q["hit"]) for q in qs),
            "mrr": _mean(q["reciprocal_rank"] for q in qs),
            "mean_rbo_context": _mean(q["rbo_context"] for q in qs),
        }
        for pos, qs in sorted(by_position.items())
    ]

    reranks = [r["rerank"] for r in records if r["rerank"] is not None]
    if reranks:
        out["rerank"] = {
            "context": _delta_row([x["context_delta"] for x in reranks]),
            "keywords": _delta_row([x["keyword_delta"] for x in reranks]),
            "question": {
                "mean_delta": _mean(x["mean_question_delta"] for x in reranks),
                "min_delta": _mean(x["min_question_delta"] for x in reranks),
                "max_delta": _mean(x["max_question_delta"] for x in reranks),
            },
        }
    else:
        out["rerank"] = None

    out["correlation"] = [s.to_dict() for s in correlation_table(records, config.question_counts, config.lambdas)]
    return out


def _delta_row(values: Sequence[float]) -> dict:
    mean = _mean(values)
    # a single query per paragraph has no within-paragraph spread
    return {"mean_delta": mean, "min_delta": mean, "max_delta": mean}


def correlation_table(
    records: Sequence[Mapping], question_counts: Iterable[int], lambdas: Iterable[float]
) -> list[CorrelationSummary]:
    rows = []
    for n in sorted(set(question_counts)):
        sel = [r["selection"][str(n)] for r in records if str(n) in r["selection"]]
        if not sel:
            continue
        for lam in lambdas:
            batches = [
                ([lam * q - (1.0 - lam) * d for q, d in zip(s["sim_q"], s["sim_d"])], s["signal"]) for s in sel
            ]
            rows.append(batch_correlation_summary(batches, lam, n_questions=n, with_global=True))
    return rows


# -- report ----------------------------------------------------------------


@dataclass
class EvalReport:
    paragraphs: list[dict]
    aggregates: dict
    provenance: dict
    config: dict
    dropped: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "config": self.config,
            "provenance": self.provenance,
            "dropped": self.dropped,
            "aggregates": self.aggregates,
            "paragraphs": self.paragraphs,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: Mapping) -> EvalReport:
        if d.get("schema") != REPORT_SCHEMA:
            raise DataError(f"not an evaluation report (schema {d.get('schema')!r})")
        return cls(d["paragraphs"], d["aggregates"], d["provenance"], d["config"], d.get("dropped", {}))

    @classmethod
    def load(cls, path: str | Path) -> EvalReport:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for child in sorted(path.rglob("*")):
            if child.is_file():
                h.update(str(child.relative_to(path)).encode())
                h.update(file_digest(child).encode())
        return h.hexdigest()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


PLOT_FIGURES = ("hit_ratio", "rbo_ranked", "mrr_rerank", "correlation")


def _cell(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_plot_data(report: EvalReport, figure: str) -> str:
    """Tab-separated table (one header line, one row per point) for a figure.

    Raises:
        UnavailableDataError: the report lacks the stage the figure needs.
    """
    agg = report.aggregates
    if figure == "hit_ratio":
        header = ("query_kind", "hit_ratio")
        rows = [(kind, agg["hit_ratio"][kind]) for kind in ("context", "keywords", "question", "best_question")]
    elif figure == "rbo_ranked":
        header = ("rbo_rank", "hit_ratio", "mrr", "mean_rbo_context")
        rows = [(r["rbo_rank"], r["hit_ratio"], r["mrr"], r["mean_rbo_context"]) for r in agg["rbo_ranked"]]
    elif figure == "mrr_rerank":
        if not agg.get("rerank"):
            raise UnavailableDataError("report has no rerank stage; mrr_rerank is unavailable")
        header = ("query_kind", "mean_delta", "min_delta", "max_delta")
        rows = [
            (kind, agg["rerank"][kind]["mean_delta"], agg["rerank"][kind]["min_delta"], agg["rerank"][kind]["max_delta"])
            for kind in ("context", "keywords", "question")
        ]
    elif figure == "correlation":
        header = ("n_questions", "lambda", "batch_ratio", "rho")
        rows = []
        summaries = [CorrelationSummary.from_dict(d) for d in agg["correlation"]]
        for s in summaries:
            rows.append((s.n_questions, s.lambda_, s.batch_ratio, s.mean_fisher_rho))
        for s in summaries:
            if s.global_rho is not None:
                rows.append((s.n_questions, s.lambda_, "*", s.global_rho))
    else:
        raise UnavailableDataError(f"unknown figure {figure!r}; choose from {', '.join(PLOT_FIGURES)}")
    lines = ["\t".join(header)] + ["\t".join(_cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_plot_data(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write every figure the report supports into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for figure in PLOT_FIGURES:
        try:
            text = emit_plot_data(report, figure)
        except UnavailableDataError:
            continue
        path = out_dir / f"{figure}.tsv"
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written


# -- stages ----------------------------------------------------------------


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, (InquireError, OSError, KeyError)):
            raise StageError(self.name, exc) from exc
        return False


def load_datapoints(path: str | Path) -> list[Datapoint]:
    return [Datapoint.from_record(rec) for rec in read_jsonl(path)]


def run_pipeline(config: PipelineConfig, timestamp: str | None = None) -> EvalReport:
    """Run every configured stage and assemble the report.

    Each stage's failure surfaces as ``StageError`` naming the stage.
    """
    with _Stage("config"):
        config.validate()

    dropped: dict = {}
    with _Stage("build-corpus"):
        if config.xml_dir is not None:
            xml_paths = sorted(config.path("xml_dir").glob("*.xml"))
            _, selection = build_corpus(xml_paths, load_title_index(config.path("titles")))
            datapoints = selection.datapoints
            dropped = dict(sorted(selection.dropped.items()))
        else:
            datapoints = load_datapoints(config.path("datapoints"))
        if not datapoints:
            raise DataError("no datapoints")

    if config.generation:
        with _Stage("generate"):
            from .llm_gateway import generate_and_store

            generate_and_store(datapoints, config.generation, config.questions, Path(config.base_dir))

    with _Stage("search"):
        store = ingest_embeddings(config.path("embeddings"), config.path("manifest"))
        queries = read_queries(config.path("queries"))
        results = batch_search(store, queries, config.k, threads=config.threads)
        grouped = group_results(queries, results)

    reranked_by_paragraph: dict[str, dict] = {}
    if config.rerank_scores is not None:
        with _Stage("rerank"):
            scores = load_rerank_scores(config.path("rerank_scores"))
            for dp in datapoints:
                lists = grouped.get(dp.paragraph_id)
                if lists is None or lists.context is None:
                    raise DataError(f"paragraph {dp.paragraph_id!r} has no context query to rerank")
                sets = scores.get(dp.paragraph_id)
                if sets is None:
                    raise DataError(f"no rerank scores for paragraph {dp.paragraph_id!r}")
                reranked_by_paragraph[dp.paragraph_id] = {key: rerank(lists.context, s) for key, s in sets.items()}

    with _Stage("select"):
        records = []
        for dp in datapoints:
            lists = grouped.get(dp.paragraph_id)
            if lists is None:
                raise DataError(f"no queries for paragraph {dp.paragraph_id!r}")
            records.append(
                evaluate_paragraph(lists, dp.target_id, config, reranked_by_paragraph.get(dp.paragraph_id)
                                   if config.rerank_scores is not None else None)
            )
        extra = sorted(set(grouped) - {dp.paragraph_id for dp in datapoints})
        if extra:
            log.warning("ignoring queries for %d paragraph(s) without a datapoint", len(extra))

    with _Stage("stats"):
        aggregates = aggregate(records, config)

    with _Stage("report"):
        inputs = {}
        for name in PipelineConfig._PATHS:
            p = config.path(name)
            if p is not None and p.exists():
                inputs[name] = file_digest(p)
        provenance = {
            "config_hash": config.config_hash(),
            "inputs": inputs,
            "tool_version": __version__,
            "generated_at": timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        return EvalReport(records, aggregates, provenance, config.to_dict(), dropped)
