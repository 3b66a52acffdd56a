"""Synthetic evaluation fixtures with planted targets.

Each paragraph gets a random target document. Its context query is the
target's own vector, its keyword query a lightly perturbed copy and its
questions noisier copies, so retrieval quality falls as ``noise`` grows.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .retrieval import QueryVector, ingest_embeddings, top_k, write_manifest, write_matrix

FILES = {
    "embeddings": "embeddings.emb",
    "manifest": "manifest.jsonl",
    "queries": "queries.jsonl",
    "datapoints": "datapoints.jsonl",
    "rerank_scores": "rerank.jsonl",
}


def _jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def make_dataset(
    out_dir: str | Path,
    *,
    n_docs: int = 1000,
    dim: int = 32,
    n_paragraphs: int = 50,
    n_questions: int = 20,
    noise: float = 0.1,
    keyword_noise: float = 0.05,
    rerank_noise: float = 0.02,
    k: int = 50,
    seed: int = 0,
) -> Path:
    """Write a complete pipeline input set into ``out_dir`` and return its config path.

    Question ``i`` of a paragraph is the target plus Gaussian noise with
    per-component scale ``noise * u_i``, ``u_i ~ U(0.5, 1.5)``. Rerank scores
    are cosine similarities plus ``N(0, rerank_noise)`` over each
    paragraph's context top-``k``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    docs = rng.standard_normal((n_docs, dim))
    docs /= np.linalg.norm(docs, axis=1, keepdims=True)
    ids = [f"doc-{i:05d}" for i in range(n_docs)]
    write_matrix(out / FILES["embeddings"], docs)
    write_manifest(out / FILES["manifest"], ids)
    store = ingest_embeddings(out / FILES["embeddings"], out / FILES["manifest"])

    targets = rng.choice(n_docs, size=n_paragraphs, replace=False)
    queries = []
    datapoints = []
    for p, t in enumerate(targets):
        pid = f"synth-{p:03d}"
        target = store.vectors[t]
        datapoints.append({
            "paragraph_id": pid,
            "masked_text": f"Synthetic paragraph {p} builds on [CITATION].",
            "target_id": ids[t],
            "source_article_id": "synthetic",
        })
        queries.append({"query_id": f"{pid}::context", "vector": target.tolist()})
        kw = target + keyword_noise * rng.standard_normal(dim)
        queries.append({"query_id": f"{pid}::keywords", "vector": kw.tolist()})
        scales = noise * rng.uniform(0.5, 1.5, size=n_questions)
        for i, s in enumerate(scales, start=1):
            q = target + s * rng.standard_normal(dim)
            queries.append({"query_id": f"{pid}::question::{i}", "vector": q.tolist()})
    _jsonl(out / FILES["queries"], queries)
    _jsonl(out / FILES["datapoints"], datapoints)

    rerank_records = []
    by_paragraph: dict[str, list[dict]] = {}
    for q in queries:
        by_paragraph.setdefault(q["query_id"].split("::")[0], []).append(q)
    for dp in datapoints:
        pid = dp["paragraph_id"]
        family = by_paragraph[pid]
        context = QueryVector(family[0]["query_id"], np.asarray(family[0]["vector"]))
        candidates = top_k(store, context, k)
        rows = np.array([store.row(d) for d in candidates.items])
        for q in family:
            qv = QueryVector(q["query_id"], np.asarray(q["vector"])).vector
            scores = store.vectors[rows] @ qv + rerank_noise * rng.standard_normal(len(rows))
            kind = q["query_id"].split("::")[1]
            for doc, score in zip(candidates.items, scores):
                rec = {"paragraph_id": pid, "query_kind": kind, "doc_id": doc, "score": float(score)}
                if kind == "question":
                    rec["question_index"] = int(q["query_id"].rsplit("::", 1)[1])
                rerank_records.append(rec)
    _jsonl(out / FILES["rerank_scores"], rerank_records)

    config = {**FILES, "k": k, "questions": n_questions,
              "question_counts": sorted({n for n in (5, 10, 20) if n <= n_questions} | {n_questions})}
    config_path = out / "config.json"
    config_path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return config_path
