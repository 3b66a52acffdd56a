"""Embedding ingestion and exact top-k cosine search.

Matrix file layout: the 4 magic bytes ``EMB1``, little-endian uint32 ``dim``,
little-endian uint32 ``count``, then ``count * dim`` little-endian float32
values in row-major order. The manifest is JSON Lines with ``{"row", "id"}``
records; query files are JSON Lines with ``{"query_id", "vector"}``.
"""

from __future__ import annotations

import io
import json
import struct
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import IngestionError, ParameterError
from .ranked_lists import RankedList

MAGIC = b"EMB1"
HEADER = struct.Struct("<4sII")
MIN_NORM = 1e-12
DEFAULT_BLOCK_ROWS = 65536

PathOrStream = Union[str, Path, BinaryIO]


@dataclass(frozen=True, eq=False)
class EmbeddingStore:
    """Immutable matrix of unit-normalised document vectors.

    Row ``i`` of ``vectors`` belongs to document ``ids[i]``.
    """

    vectors: np.ndarray
    ids: tuple[str, ...]
    _row_of: dict[str, int] = field(repr=False, default_factory=dict)
    _id_order: np.ndarray = field(repr=False, default=None)

    def __post_init__(self) -> None:
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise IngestionError("embedding matrix must be two-dimensional")
        if len(self.ids) != vectors.shape[0]:
            raise IngestionError(f"{len(self.ids)} ids for {vectors.shape[0]} rows")
        row_of = {doc_id: i for i, doc_id in enumerate(self.ids)}
        if len(row_of) != len(self.ids):
            raise IngestionError("manifest maps two rows to the same document id")
        vectors = _normalize_rows(vectors)
        vectors.setflags(write=False)
        # rank of each row's id in lexicographic order, the tie-break key
        order = np.empty(len(self.ids), dtype=np.int64)
        order[np.argsort(np.array(self.ids, dtype=object), kind="stable")] = np.arange(len(self.ids))
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "_row_of", row_of)
        object.__setattr__(self, "_id_order", order)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    def row(self, doc_id: str) -> int:
        return self._row_of[doc_id]

    def vector(self, doc_id: str) -> np.ndarray:
        return self.vectors[self._row_of[doc_id]]


@dataclass(frozen=True, eq=False)
class QueryVector:
    query_id: str
    vector: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1:
            raise IngestionError(f"query {self.query_id!r}: vector must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise IngestionError(f"query {self.query_id!r}: non-finite value")
        norm = float(np.linalg.norm(v))
        if norm < MIN_NORM:
            raise IngestionError(f"query {self.query_id!r}: zero vector")
        object.__setattr__(self, "vector", v / norm)


def _normalize_rows(vectors: np.ndarray) -> np.ndarray:
    finite = np.isfinite(vectors).all(axis=1)
    if not finite.all():
        raise IngestionError(f"row {int(np.argmin(finite))}: non-finite value")
    norms = np.linalg.norm(vectors, axis=1)
    small = norms < MIN_NORM
    if small.any():
        raise IngestionError(f"row {int(np.argmax(small))}: zero vector (norm < {MIN_NORM:g})")
    return vectors / norms[:, None]


def _open_binary(source: PathOrStream, mode: str = "rb"):
    if isinstance(source, (str, Path)):
        return open(source, mode)
    return _Borrowed(source)


class _Borrowed:
    """Context manager that leaves a caller-owned stream open."""

    def __init__(self, stream):
        self.stream = stream

    def __enter__(self):
        return self.stream

    def __exit__(self, *exc):
        return False


def read_matrix(source: PathOrStream) -> np.ndarray:
    with _open_binary(source) as fh:
        header = fh.read(HEADER.size)
        if len(header) < HEADER.size:
            raise IngestionError("embedding file truncated inside header")
        magic, dim, count = HEADER.unpack(header)
        if magic != MAGIC:
            raise IngestionError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if dim == 0:
            raise IngestionError("embedding dimension must be positive")
        expected = dim * count * 4
        payload = fh.read(expected)
        if len(payload) != expected:
            raise IngestionError(f"header declares {count}x{dim} floats but file holds {len(payload) // 4}")
        if fh.read(1):
            raise IngestionError("trailing bytes after declared matrix")
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim)


def write_matrix(target: PathOrStream, vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise ParameterError("embedding matrix must be two-dimensional")
    count, dim = vectors.shape
    with _open_binary(target, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, dim, count))
        fh.write(np.ascontiguousarray(vectors).tobytes())


def _text_lines(source) -> Iterable[str]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    elif isinstance(source, io.TextIOBase):
        yield from source
    else:
        for line in source:
            yield line.decode("utf-8") if isinstance(line, bytes) else line


def read_jsonl(source) -> Iterable[dict]:
    for lineno, line in enumerate(_text_lines(source), start=1):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"line {lineno}: invalid JSON ({exc.msg})") from None


def read_manifest(source, count: int) -> list[str]:
    ids: list[str | None] = [None] * count
    n = 0
    for rec in read_jsonl(source):
        try:
            row, doc_id = int(rec["row"]), str(rec["id"])
        except (KeyError, TypeError, ValueError):
            raise IngestionError(f"manifest record {n + 1}: needs integer 'row' and string 'id'") from None
        if not 0 <= row < count:
            raise IngestionError(f"manifest row {row} outside matrix of {count} rows")
        if ids[row] is not None:
            raise IngestionError(f"manifest row {row} listed twice")
        ids[row] = doc_id
        n += 1
    if n != count:
        raise IngestionError(f"manifest has {n} rows but matrix has {count}")
    return ids  # type: ignore[return-value]


def ingest_embeddings(matrix_source: PathOrStream, manifest_source) -> EmbeddingStore:
    """Load an embedding matrix and its row manifest into a normalised store.

    Raises:
        IngestionError: on header/manifest disagreement, non-finite values or
            zero rows; the message names the offending row.
    """
    matrix = read_matrix(matrix_source)
    ids = read_manifest(manifest_source, matrix.shape[0])
    return EmbeddingStore(matrix, tuple(ids))


def write_manifest(target, ids: Sequence[str]) -> None:
    lines = "".join(json.dumps({"row": i, "id": doc_id}) + "\n" for i, doc_id in enumerate(ids))
    if isinstance(target, (str, Path)):
        Path(target).write_text(lines, encoding="utf-8")
    else:
        target.write(lines)


def read_queries(source) -> list[QueryVector]:
    queries = []
    for n, rec in enumerate(read_jsonl(source), start=1):
        try:
            qid, vec = str(rec["query_id"]), rec["vector"]
        except KeyError:
            raise IngestionError(f"query record {n}: needs 'query_id' and 'vector'") from None
        meta = {k: v for k, v in rec.items() if k not in ("query_id", "vector")}
        queries.append(QueryVector(qid, np.asarray(vec, dtype=np.float64), meta))
    return queries


def _scores(store: EmbeddingStore, query: np.ndarray, block_rows: int) -> np.ndarray:
    if store.count <= block_rows:
        return store.vectors @ query
    out = np.empty(store.count)
    for start in range(0, store.count, block_rows):
        stop = start + block_rows
        out[start:stop] = store.vectors[start:stop] @ query
    return out


def top_k(
    store: EmbeddingStore, query: QueryVector, k: int, depth_k: int | None = None, block_rows: int = DEFAULT_BLOCK_ROWS
) -> RankedList:
    """The ``k`` stored documents with highest cosine similarity to ``query``.

    Equal scores are ordered by lexicographically smaller document id. When
    the store holds fewer than ``k`` documents all of them are returned.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if query.vector.shape[0] != store.dim:
        raise ParameterError(f"query {query.query_id!r} has dim {query.vector.shape[0]}, store has {store.dim}")
    depth = depth_k or k
    if store.count == 0:
        return RankedList(query.query_id, (), (), depth)
    scores = _scores(store, query.vector, block_rows)
    k_eff = min(k, store.count)
    if k_eff < store.count:
        # keep everything tied with the k-th score so the id tie-break sees all candidates
        kth = np.partition(scores, store.count - k_eff)[store.count - k_eff]
        candidates = np.flatnonzero(scores >= kth)
    else:
        candidates = np.arange(store.count)
    order = np.lexsort((store._id_order[candidates], -scores[candidates]))[:k_eff]
    rows = candidates[order]
    return RankedList(
        query.query_id,
        tuple(store.ids[r] for r in rows),
        tuple(float(s) for s in scores[rows]),
        depth,
    )


def batch_search(
    store: EmbeddingStore,
    queries: Sequence[QueryVector],
    k: int,
    threads: int = 1,
    depth_k: int | None = None,
) -> list[RankedList]:
    """``top_k`` for each query, in input order.

    With ``threads > 1`` queries are spread across a thread pool; every
    query is still scored by the same kernel, so results do not depend on
    the thread count.
    """
    if threads <= 1 or len(queries) <= 1:
        return [top_k(store, q, k, depth_k) for q in queries]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda q: top_k(store, q, k, depth_k), queries))


def ranked_list_to_record(ranked: RankedList) -> dict:
    rec = {"query_id": ranked.query_id, "items": list(ranked.items)}
    if ranked.scores is not None:
        rec["scores"] = list(ranked.scores)
    rec["depth_k"] = ranked.depth_k
    return rec


def ranked_list_from_record(rec: dict) -> RankedList:
    scores = rec.get("scores")
    return RankedList(str(rec["query_id"]), tuple(rec["items"]), tuple(scores) if scores is not None else None,
                      int(rec.get("depth_k", max(1, len(rec["items"])))))


def cosine_norm_ok(store: EmbeddingStore, tol: float = 1e-6) -> bool:
    """True when every stored row has unit L2 norm within ``tol``."""
    return bool(np.all(np.abs(np.linalg.norm(store.vectors, axis=1) - 1.0) <= tol)) if store.count else True

