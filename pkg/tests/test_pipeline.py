from __future__ import annotations

import json
import statistics

import pytest

from inquire.errors import ConfigError, DataError, StageError, UnavailableDataError
from inquire.pipeline import (
    EvalReport,
    PipelineConfig,
    aggregate,
    emit_plot_data,
    query_info,
    run_pipeline,
    write_plot_data,
)
from inquire.synthetic import make_dataset


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    return make_dataset(tmp_path_factory.mktemp("synth"), n_docs=300, n_paragraphs=12, n_questions=10, noise=0.4, seed=3)


@pytest.fixture(scope="module")
def report(dataset):
    return run_pipeline(PipelineConfig.from_file(dataset), timestamp="2000-01-01T00:00:00+00:00")


class TestConfig:
    def test_lambda_key_and_unknown_keys(self):
        cfg = PipelineConfig.from_dict({"embeddings": "e", "manifest": "m", "queries": "q", "lambda": 0.2})
        assert cfg.lambda_ == 0.2
        assert cfg.to_dict()["lambda"] == 0.2
        with pytest.raises(ConfigError, match="bogus"):
            PipelineConfig.from_dict({"embeddings": "e", "manifest": "m", "queries": "q", "bogus": 1})

    def test_missing_embeddings_fails_before_compute(self, dataset):
        raw = json.loads(dataset.read_text())
        raw["embeddings"] = "missing.emb"
        cfg = PipelineConfig.from_dict(raw, base_dir=dataset.parent)
        with pytest.raises(StageError) as info:
            run_pipeline(cfg)
        assert info.value.stage == "config"
        assert "embeddings" in str(info.value)

    @pytest.mark.parametrize("change", [{"k": 0}, {"p": 1.0}, {"lambdas": [2.0]}, {"reference": "title"},
                                        {"signal": "other"}, {"batch_mode": "mixed"}, {"question_counts": [0]}])
    def test_parameter_validation(self, dataset, change):
        raw = {**json.loads(dataset.read_text()), **change}
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(raw, base_dir=dataset.parent).validate()

    def test_rank_delta_needs_rerank(self, dataset):
        raw = {**json.loads(dataset.read_text()), "signal": "rank_delta"}
        raw.pop("rerank_scores")
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(raw, base_dir=dataset.parent).validate()


class TestQueryInfo:
    def test_parsed_forms(self):
        assert query_info("p1::context").kind == "context"
        q = query_info("a/b::question::7")
        assert (q.paragraph_id, q.kind, q.index) == ("a/b", "question", 7)

    def test_meta_wins(self):
        q = query_info("opaque", {"paragraph_id": "p", "query_kind": "question", "question_index": 2, "batch_size": 5})
        assert (q.paragraph_id, q.index, q.batch_size) == ("p", 2, 5)

    @pytest.mark.parametrize("qid", ["p", "p::question", "p::title", "p::question::x"])
    def test_rejects(self, qid):
        with pytest.raises(DataError):
            query_info(qid)


class TestReport:
    def test_aggregates_recompute_from_paragraphs(self, report):
        cfg = PipelineConfig.from_dict({**report.config, "embeddings": "", "manifest": "", "queries": ""})
        assert aggregate(report.paragraphs, cfg) == report.aggregates

        ret = [p["retrieval"] for p in report.paragraphs]
        qs = [q for r in ret for q in r["questions"]]
        agg = report.aggregates
        assert agg["mrr"]["question"] == pytest.approx(statistics.fmean(q["reciprocal_rank"] for q in qs))
        assert agg["hit_ratio"]["question"] == pytest.approx(statistics.fmean(q["hit"] for q in qs))
        assert agg["mrr"]["context"] == 1.0

    def test_shape(self, report):
        p = report.paragraphs[0]
        assert len(p["retrieval"]["questions"]) == 10
        assert set(p["selection"]) == {"5", "10"}
        assert len(p["mmr_rbo"]) == 10
        assert p["rerank"] is not None
        rows = report.aggregates["correlation"]
        assert [(r["n_questions"], r["lambda"]) for r in rows] == [(n, lam) for n in (5, 10) for lam in (0.0, 0.5, 1.0)]
        assert set(report.provenance) == {"config_hash", "inputs", "tool_version", "generated_at"}
        assert set(report.provenance["inputs"]) == {"embeddings", "manifest", "queries", "datapoints", "rerank_scores"}

    def test_round_trip_and_determinism(self, report, dataset, tmp_path):
        path = tmp_path / "r.json"
        report.write(path)
        assert EvalReport.load(path).dumps() == report.dumps()
        again = run_pipeline(PipelineConfig.from_file(dataset), timestamp="2000-01-01T00:00:00+00:00")
        assert again.dumps() == report.dumps()

    def test_plot_tables(self, report, tmp_path):
        hit = emit_plot_data(report, "hit_ratio").splitlines()
        assert hit[0] == "query_kind\thit_ratio"
        assert [line.split("\t")[0] for line in hit[1:]] == ["context", "keywords", "question", "best_question"]
        assert emit_plot_data(report, "correlation").splitlines()[0] == "n_questions\tlambda\tbatch_ratio\trho"
        assert emit_plot_data(report, "mrr_rerank").splitlines()[0] == "query_kind\tmean_delta\tmin_delta\tmax_delta"
        assert len(emit_plot_data(report, "rbo_ranked").splitlines()) == 11
        assert len(write_plot_data(report, tmp_path)) == 4

    def test_rerank_figure_unavailable_without_rerank(self, dataset):
        raw = json.loads(dataset.read_text())
        raw.pop("rerank_scores")
        bare = run_pipeline(PipelineConfig.from_dict(raw, base_dir=dataset.parent))
        assert bare.aggregates["rerank"] is None
        with pytest.raises(UnavailableDataError):
            emit_plot_data(bare, "mrr_rerank")
        with pytest.raises(UnavailableDataError):
            emit_plot_data(bare, "scatter")

    def test_rank_delta_signal_and_context_reference(self, dataset):
        raw = {**json.loads(dataset.read_text()), "signal": "rank_delta", "reference": "context"}
        rep = run_pipeline(PipelineConfig.from_dict(raw, base_dir=dataset.parent))
        signal = rep.paragraphs[0]["selection"]["10"]["signal"]
        assert all(float(s).is_integer() for s in signal)


def test_corpus_stage(fixtures, tmp_path):
    """xml_dir + titles supply the datapoints; queries for other paragraphs are ignored."""
    import numpy as np

    from inquire.retrieval import write_manifest, write_matrix

    ids = [f"W0{i}" for i in range(1, 8)] + [f"X{i}" for i in range(20)]
    rng = np.random.default_rng(0)
    vectors = rng.standard_normal((len(ids), 8))
    write_matrix(tmp_path / "e.emb", vectors)
    write_manifest(tmp_path / "m.jsonl", ids)
    targets = {"acl-a/s1p0": "W01", "acl-b/s0p1": "W02", "acl-c/s0p1": "W03", "acl-d/s1p1": "W04"}
    queries = []
    for pid, target in targets.items():
        v = vectors[ids.index(target)]
        queries.append({"query_id": f"{pid}::context", "vector": v.tolist()})
        queries.append({"query_id": f"{pid}::keywords", "vector": (v + 0.1).tolist()})
        for i in range(1, 4):
            queries.append({"query_id": f"{pid}::question::{i}", "vector": (v + rng.normal(0, 0.5, 8)).tolist()})
    (tmp_path / "q.jsonl").write_text("".join(json.dumps(q) + "\n" for q in queries))
    cfg = PipelineConfig(
        embeddings="e.emb", manifest="m.jsonl", queries="q.jsonl",
        xml_dir=str(fixtures / "tei"), titles=str(fixtures / "titles.jsonl"),
        k=5, questions=3, question_counts=(3,), base_dir=str(tmp_path),
    )
    rep = run_pipeline(cfg)
    assert [p["target_id"] for p in rep.paragraphs] == list(targets.values())
    assert rep.dropped == {"multiple_targets": 2, "no_citation": 2, "not_in_corpus": 3, "unresolved": 1}
    assert rep.aggregates["hit_ratio"]["context"] == 1.0
