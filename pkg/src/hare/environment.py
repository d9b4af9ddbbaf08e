"""BM25, dense and hybrid retrieval environments with reranking."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_corpus, check_in, check_positive_int, check_query
from .bm25 import BM25Index
from .corpus import Corpus, ScoredDoc
from .dense import DenseIndex
from .evaluation import ndcg_at_k
from .scoring import Scorer

logger = logging.getLogger(__name__)

ENV_KINDS = ("bm25", "dense", "hybrid")


def hybrid_join(a: Sequence[ScoredDoc], b: Sequence[ScoredDoc]) -> list[ScoredDoc]:
    """Union of two result lists without duplicates; first occurrence wins."""
    seen = set()
    out = []
    for doc in (*a, *b):
        if doc.doc_id not in seen:
            seen.add(doc.doc_id)
            out.append(doc)
    return out


def rerank(scorer: Scorer, query: str, candidates: Sequence[ScoredDoc], corpus: Corpus) -> list[ScoredDoc]:
    """Rescore every candidate with ``scorer`` and sort descending (ties by doc_id)."""
    if not candidates:
        return []
    docs = [corpus[c.doc_id] for c in candidates]
    scores = scorer.score_batch(query, docs)
    rescored = [c.with_score(s) for c, s in zip(candidates, scores)]
    return sorted(rescored, key=lambda d: (-d.score, d.doc_id))


class RetrievalEnvironment(BaseEstimator):
    """Retriever(s) plus reranker.

    Parameters
    ----------
    kind : {"bm25", "dense", "hybrid"}
    k : int
        Depth retrieved from each retriever before reranking.
    scorer : Scorer
        Reranker ``f(q, d)``.
    k1, b : float
        BM25 parameters used by :meth:`fit`.
    embedder : embedder, optional
        Dense embedder used by :meth:`fit` (feature hashing by default).
    """

    def __init__(self, kind: str = "hybrid", k: int = 10, scorer: Optional[Scorer] = None,
                 k1: float = 0.9, b: float = 0.4, embedder=None):
        self.kind = kind
        self.k = k
        self.scorer = scorer
        self.k1 = k1
        self.b = b
        self.embedder = embedder

    def fit(self, documents, y=None):
        corpus = check_corpus(documents)
        self.bm25_ = BM25Index(k1=self.k1, b=self.b).fit(corpus)
        self.dense_ = DenseIndex(embedder=self.embedder).fit(corpus)
        self.corpus_ = corpus
        return self

    @classmethod
    def from_indexes(cls, bm25: BM25Index, dense: DenseIndex, **params) -> "RetrievalEnvironment":
        env = cls(k1=bm25.k1, b=bm25.b, embedder=dense.embedder, **params)
        env.bm25_, env.dense_, env.corpus_ = bm25, dense, bm25.corpus_
        return env

    def _scorer(self) -> Scorer:
        if self.scorer is None:
            from .scoring import LexicalScorer

            return LexicalScorer(self.bm25_)
        return self.scorer

    def retrieve(self, query, k: Optional[int] = None) -> list[ScoredDoc]:
        check_is_fitted(self, "bm25_")
        kind = check_in(self.kind, ENV_KINDS, "kind")
        k = check_positive_int(self.k if k is None else k, "k")
        query = check_query(query)
        if kind == "bm25":
            return self.bm25_.search(query, k)
        dense = self.dense_.search_text(str(query), k)  # operators are ignored by the dense side
        if kind == "dense":
            return dense
        return hybrid_join(self.bm25_.search(query, k), dense)

    def search(self, query, k: Optional[int] = None) -> list[ScoredDoc]:
        """Retrieve at depth ``k`` and rerank against the original query text."""
        query = check_query(query)
        return rerank(self._scorer(), str(query), self.retrieve(query, k), self.corpus_)

    def predict(self, queries: Mapping[str, str], k: Optional[int] = None) -> dict[str, list[ScoredDoc]]:
        return {qid: self.search(queries[qid], k) for qid in sorted(queries)}

    def score(self, queries: Mapping[str, str], qrels: Mapping, k: Optional[int] = None) -> float:
        """Mean nDCG@10 over the judged queries."""
        per_query = evaluate_environment(self, queries, qrels, k)[0]
        return sum(per_query.values()) / len(per_query) if per_query else 0.0


def retrieve(env: RetrievalEnvironment, query, k: int) -> list[ScoredDoc]:
    return env.retrieve(query, k)


def evaluate_environment(env, queries: Mapping[str, str], qrels: Mapping, k: Optional[int] = None):
    """Per-query nDCG@10 of the reranked top 10; queries without judgments are excluded."""
    per_query, excluded = {}, []
    for qid in sorted(queries):
        gains = qrels.get(qid)
        if not gains or not any(g > 0 for g in gains.values()):
            excluded.append(qid)
            continue
        ranking = [d.doc_id for d in env.search(queries[qid], k)[:10]]
        per_query[qid] = ndcg_at_k(ranking, gains, 10)
    return per_query, excluded


@dataclass
class SweepRow:
    k: int
    mean_ndcg10: float
    num_queries: int


def depth_sweep(env: RetrievalEnvironment, queries: Mapping[str, str], qrels: Mapping,
                depths: Iterable[int]) -> tuple[list[SweepRow], list[str]]:
    """Mean nDCG@10 after reranking the top-k, for each k; returns rows and excluded qids."""
    rows, excluded = [], []
    for k in depths:
        per_query, excluded = evaluate_environment(env, queries, qrels, check_positive_int(k, "depth"))
        mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
        rows.append(SweepRow(k, mean, len(per_query)))
    if excluded:
        logger.warning("%d queries without qrels excluded from the sweep", len(excluded))
    return rows, excluded


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["k", "mean_ndcg10", "num_queries"])
    for row in rows:
        writer.writerow([row.k, repr(row.mean_ndcg10), row.num_queries])
    return buf.getvalue()


def write_sweep(rows: Sequence[SweepRow], path) -> None:
    Path(path).write_text(sweep_csv(rows), encoding="utf-8")
