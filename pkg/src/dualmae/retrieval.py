"""Embedding store, exact top-k search, and ranking metrics.

Search is exhaustive and exact; scores are computed in double precision
and ties are broken by ascending document id, so a ranking is a pure
function of the store. Metrics follow their textbook definitions; the
test suite holds an independently coded oracle for each one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .encoder import encode
from .model import EncoderConfig, ModelParams
from .text import Vocabulary, encode_text, make_batch

logger = logging.getLogger(__name__)


class RunFormatError(ValueError):
    """A run or label file line that cannot be used."""


@dataclass
class EmbeddingStore:
    """Document ids alongside their (n, d) vectors."""

    ids: list[str]
    matrix: np.ndarray

    def __post_init__(self):
        if self.matrix.ndim != 2 or len(self.ids) != self.matrix.shape[0]:
            raise ValueError("store needs one id per matrix row")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate document id in store")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def embed_corpus(
    sentences: Sequence[str],
    params: ModelParams,
    enc_config: EncoderConfig,
    vocab: Vocabulary,
    ids: Sequence[str] | None = None,
    batch_size: int = 32,
) -> EmbeddingStore:
    """Encode clean sentences (no masking at inference).

    Every batch is padded to the model's max_len, so a sentence's vector
    does not depend on what else shared its batch.
    """
    if ids is None:
        ids = [str(i) for i in range(len(sentences))]
    if len(ids) != len(sentences):
        raise ValueError("need exactly one id per sentence")
    seqs = [encode_text(s, vocab, enc_config.max_len) for s in sentences]
    rows = []
    with ad.no_grad():
        for start in range(0, len(seqs), batch_size):
            batch = make_batch(seqs[start : start + batch_size], pad_to=enc_config.max_len)
            sentence_vecs, _ = encode(params, enc_config, batch.ids, batch.real)
            rows.append(sentence_vecs.data.astype(np.float32))
    return EmbeddingStore(ids=list(ids), matrix=np.concatenate(rows, axis=0))


def save_embeddings(path: str | Path, store: EmbeddingStore) -> None:
    """One line per vector: id, tab, space-separated components.

    Components are written with enough digits that reading them back
    reproduces the float32 values bit for bit.
    """
    with open(path, "w", encoding="utf-8") as f:
        for doc_id, row in zip(store.ids, store.matrix):
            f.write(doc_id + "\t" + " ".join(f"{x:.8e}" for x in row) + "\n")


def load_embeddings(path: str | Path) -> EmbeddingStore:
    ids: list[str] = []
    rows: list[np.ndarray] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            doc_id, tab, rest = line.partition("\t")
            if not tab:
                raise RunFormatError(f"{path}:{lineno}: expected 'id<TAB>components'")
            try:
                rows.append(np.array([np.float32(x) for x in rest.split()], dtype=np.float32))
            except ValueError:
                raise RunFormatError(f"{path}:{lineno}: bad vector component") from None
            ids.append(doc_id)
    if not rows:
        raise RunFormatError(f"{path}: no vectors found")
    return EmbeddingStore(ids=ids, matrix=np.stack(rows))


def score_all(query: np.ndarray, store: EmbeddingStore, metric: str = "dot") -> np.ndarray:
    """Similarity of one query against every stored vector, in float64."""
    q = np.asarray(query, dtype=np.float64)
    docs = store.matrix.astype(np.float64)
    if metric == "dot":
        return docs @ q
    if metric == "cosine":
        qn = float(np.linalg.norm(q))
        dn = np.linalg.norm(docs, axis=1)
        if qn == 0.0:
            return np.zeros(len(store.ids))
        scores = docs @ q / qn
        safe = dn > 0.0
        scores[safe] /= dn[safe]
        scores[~safe] = 0.0
        return scores
    raise ValueError(f"unknown similarity metric {metric!r}")


def topk_search(
    query: np.ndarray, store: EmbeddingStore, k: int, metric: str = "dot"
) -> list[tuple[str, float]]:
    """The k best documents, highest score first, ties by ascending id."""
    if k < 1:
        raise ValueError("k must be positive")
    scores = score_all(query, store, metric)
    ids = np.array(store.ids)
    order = np.lexsort((ids, -scores))
    return [(str(ids[i]), float(scores[i])) for i in order[:k]]


@dataclass
class RankingRun:
    """Ranked candidates per query plus relevance labels."""

    candidates: dict[str, list[tuple[str, float]]]
    labels: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        for q, ranked in self.candidates.items():
            seen = set()
            prev = None
            for doc, score in ranked:
                if doc in seen:
                    raise RunFormatError(f"query {q!r}: duplicate candidate {doc!r}")
                seen.add(doc)
                if prev is not None and score > prev:
                    raise RunFormatError(f"query {q!r}: scores increase along the ranking")
                prev = score


def search_run(
    queries: EmbeddingStore, docs: EmbeddingStore, k: int, metric: str = "dot",
    labels: dict[str, dict[str, int]] | None = None,
) -> RankingRun:
    candidates = {
        qid: topk_search(queries.matrix[i], docs, k, metric)
        for i, qid in enumerate(queries.ids)
    }
    return RankingRun(candidates=candidates, labels=labels or {})


def save_run(path: str | Path, run: RankingRun) -> None:
    """query_id, doc_id, rank, score; one candidate per line."""
    with open(path, "w", encoding="utf-8") as f:
        for qid in run.candidates:
            for rank, (doc, score) in enumerate(run.candidates[qid], start=1):
                f.write(f"{qid}\t{doc}\t{rank}\t{score:.17g}\n")


def load_run(path: str | Path, labels: dict[str, dict[str, int]] | None = None) -> RankingRun:
    candidates: dict[str, list[tuple[str, float]]] = {}
    expected_rank: dict[str, int] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise RunFormatError(
                    f"{path}:{lineno}: expected 'query_id<TAB>doc_id<TAB>rank<TAB>score'"
                )
            qid, doc, rank_s, score_s = parts
            try:
                rank = int(rank_s)
                score = float(score_s)
            except ValueError:
                raise RunFormatError(f"{path}:{lineno}: bad rank or score") from None
            expected = expected_rank.get(qid, 0) + 1
            if rank != expected:
                raise RunFormatError(
                    f"{path}:{lineno}: rank {rank} out of order for query {qid!r} (expected {expected})"
                )
            expected_rank[qid] = rank
            candidates.setdefault(qid, []).append((doc, score))
    if not candidates:
        raise RunFormatError(f"{path}: no ranking lines found")
    try:
        return RankingRun(candidates=candidates, labels=labels or {})
    except RunFormatError as e:
        raise RunFormatError(f"{path}: {e}") from None


def load_labels(path: str | Path) -> dict[str, dict[str, int]]:
    """query_id, doc_id, graded relevance; one judgment per line."""
    labels: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise RunFormatError(
                    f"{path}:{lineno}: expected 'query_id<TAB>doc_id<TAB>relevance'"
                )
            qid, doc, rel_s = parts
            try:
                rel = int(rel_s)
            except ValueError:
                raise RunFormatError(f"{path}:{lineno}: relevance must be an integer") from None
            if rel < 0:
                raise RunFormatError(f"{path}:{lineno}: relevance cannot be negative")
            labels.setdefault(qid, {})[doc] = rel
    if not labels:
        raise RunFormatError(f"{path}: no label lines found")
    return labels


def _require_queries(run: RankingRun) -> list[str]:
    if not run.candidates:
        raise ValueError("metrics over an empty query set are undefined")
    return sorted(run.candidates)


def mrr_at_k(run: RankingRun, k: int) -> float:
    """Mean reciprocal rank of the first relevant hit within the top k.

    A query with no relevant document in its top k contributes zero; no
    query is excluded.
    """
    queries = _require_queries(run)
    total = 0.0
    for qid in queries:
        rel = run.labels.get(qid, {})
        for rank, (doc, _) in enumerate(run.candidates[qid][:k], start=1):
            if rel.get(doc, 0) > 0:
                total += 1.0 / rank
                break
    return total / len(queries)


def recall_at_k(run: RankingRun, k: int) -> float:
    """Mean fraction of each query's relevant documents found in the top k.

    Queries with no relevant documents are excluded (with a warning),
    since their recall is undefined.
    """
    queries = _require_queries(run)
    kept = 0
    total = 0.0
    skipped = 0
    for qid in queries:
        relevant = {d for d, r in run.labels.get(qid, {}).items() if r > 0}
        if not relevant:
            skipped += 1
            continue
        top = {doc for doc, _ in run.candidates[qid][:k]}
        total += len(top & relevant) / len(relevant)
        kept += 1
    if skipped:
        logger.warning("recall@%d: excluded %d of %d queries with no relevant documents", k, skipped, len(queries))
    if kept == 0:
        raise ValueError("recall is undefined: no query has a relevant document")
    return total / kept


def ndcg_at_k(run: RankingRun, k: int) -> float:
    """Mean normalized discounted cumulative gain with graded labels.

    Gain is 2^rel - 1 discounted by log2(rank + 1); the ideal ranking uses
    every judged document for the query, not only the retrieved ones.
    Queries whose labels are all zero are excluded with a warning.
    """
    queries = _require_queries(run)
    kept = 0
    total = 0.0
    skipped = 0
    for qid in queries:
        rel = run.labels.get(qid, {})
        ideal = sorted(rel.values(), reverse=True)[:k]
        idcg = sum((2.0**r - 1.0) / np.log2(rank + 1.0) for rank, r in enumerate(ideal, start=1))
        if idcg == 0.0:
            skipped += 1
            continue
        dcg = sum(
            (2.0 ** rel.get(doc, 0) - 1.0) / np.log2(rank + 1.0)
            for rank, (doc, _) in enumerate(run.candidates[qid][:k], start=1)
        )
        total += dcg / idcg
        kept += 1
    if skipped:
        logger.warning("ndcg@%d: excluded %d of %d queries with no positive labels", k, skipped, len(queries))
    if kept == 0:
        raise ValueError("ndcg is undefined: no query has a positive label")
    return total / kept
