from __future__ import annotations

import json

import pytest

from inquire.cli import build_parser, main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out-dir", d / "data", "--docs", 300, "--paragraphs", 8, "--questions", 10, "--noise", 0.4) == 0
    return d


def test_shared_flag_defaults():
    args = build_parser().parse_args(["select", "--results", "r", "--datapoints", "d", "--out", "o"])
    assert (args.k, args.p, args.lambda_, args.questions) == (50, 0.9, 0.5, 20)


def test_stagewise_commands(workdir, capsys):
    data = workdir / "data"
    res, rr, sel = workdir / "res.jsonl", workdir / "rr.jsonl", workdir / "sel.jsonl"
    assert run("search", "--embeddings", data / "embeddings.emb", "--manifest", data / "manifest.jsonl",
               "--queries", data / "queries.jsonl", "--out", res, "--threads", 2) == 0
    first = json.loads(res.read_text().splitlines()[0])
    assert len(first["items"]) == 50 and first["depth_k"] == 50

    assert run("rerank", "--results", res, "--scores", data / "rerank.jsonl", "--out", rr) == 0
    reranked = [json.loads(line) for line in rr.read_text().splitlines()]
    assert {r["query_kind"] for r in reranked} == {"context", "keywords", "question"}

    assert run("select", "--results", res, "--datapoints", data / "datapoints.jsonl", "--reranked", rr,
               "--question-counts", "5,10", "--lambda", 1.0, "--out", sel) == 0
    records = [json.loads(line) for line in sel.read_text().splitlines()]
    assert len(records) == 16
    rec = records[0]
    assert rec["mmr_rbo"] == rec["sim_q"]
    assert sorted(rec["ranking"]) == list(range(1, rec["n_questions"] + 1))

    capsys.readouterr()
    assert run("stats", "--selection", sel, "--lambdas", "0,1", "--out", workdir / "stats.json") == 0
    table = capsys.readouterr().out.splitlines()
    assert table[0] == "questions\tlambda\tbatch_ratio\trho"
    assert len(json.loads((workdir / "stats.json").read_text())["rows"]) == 4


def test_report_and_plot(workdir, capsys):
    out = workdir / "report.json"
    assert run("report", "--config", workdir / "data" / "config.json", "--out", out, "--out-dir", workdir / "plots") == 0
    report = json.loads(out.read_text())
    assert report["schema"] == "inquire.eval_report/1"
    assert sorted(p.name for p in (workdir / "plots").iterdir()) == [
        "correlation.tsv", "hit_ratio.tsv", "mrr_rerank.tsv", "rbo_ranked.tsv",
    ]
    capsys.readouterr()
    assert run("plot", "--report", out, "--figure", "hit_ratio") == 0
    assert capsys.readouterr().out.startswith("query_kind\thit_ratio\n")


def test_report_overrides(workdir, capsys):
    out = workdir / "r5.json"
    # stored rerank scores cover the top 50, so a shallower k leaves scored ids outside the candidates
    assert run("report", "--config", workdir / "data" / "config.json", "--out", out, "--k", 5) == 1
    assert capsys.readouterr().err.startswith("error: [rerank]")

    raw = json.loads((workdir / "data" / "config.json").read_text())
    raw.pop("rerank_scores")
    cfg = workdir / "data" / "plain.json"
    cfg.write_text(json.dumps(raw))
    assert run("report", "--config", cfg, "--out", out, "--k", 5, "--lambda", 0.0) == 0
    config = json.loads(out.read_text())["config"]
    assert (config["k"], config["lambda"]) == (5, 0.0)


def test_build_corpus(fixtures, tmp_path, capsys):
    out = tmp_path / "dp.jsonl"
    masked = tmp_path / "masked.jsonl"
    assert run("build-corpus", "--xml-dir", fixtures / "tei", "--titles", fixtures / "titles.jsonl",
               "--out", out, "--masked-out", masked) == 0
    assert out.read_text() == (fixtures / "golden_datapoints.jsonl").read_text()
    assert masked.read_text() == (fixtures / "golden_masked.jsonl").read_text()
    assert "4 datapoints kept" in capsys.readouterr().out


def test_errors_are_stage_tagged(tmp_path, capsys):
    assert run("report", "--config", tmp_path / "none.json") == 1
    assert capsys.readouterr().err.startswith("error: [config]")

    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"embeddings": "x.emb", "manifest": "m", "queries": "q", "datapoints": "d"}))
    assert run("report", "--config", cfg) == 1
    assert "[config]" in capsys.readouterr().err

    assert run("search", "--embeddings", tmp_path / "x", "--manifest", "m", "--queries", "q", "--out", "o") == 1
    assert capsys.readouterr().err.startswith("error: [search]")


def test_plot_unavailable(workdir, tmp_path, capsys):
    raw = json.loads((workdir / "data" / "config.json").read_text())
    raw.pop("rerank_scores")
    cfg = workdir / "data" / "no_rerank.json"
    cfg.write_text(json.dumps(raw))
    out = tmp_path / "r.json"
    assert run("report", "--config", cfg, "--out", out) == 0
    assert run("plot", "--report", out, "--figure", "mrr_rerank") == 1
    assert "rerank" in capsys.readouterr().err
