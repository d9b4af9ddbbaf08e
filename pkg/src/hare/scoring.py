"""Query-document scorers, the listwise softmax loss and reranker training lists."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_positive_int
from .corpus import Document
from .protocol import ModelClient, format_score_input
from .query import tokenize

logger = logging.getLogger(__name__)

SCORER_TRUNCATION = 256


class ScorerError(RuntimeError):
    def __init__(self, doc_id: str, cause: BaseException):
        super().__init__(f"scoring document {doc_id!r} failed: {cause}")
        self.doc_id = doc_id


def truncate_words(text: str, n: int) -> str:
    return " ".join(text.split()[:n])


class Scorer(BaseEstimator):
    """Base class: ``f(query, document) -> float``."""

    kind = "abstract"

    def score(self, query: str, document: Document) -> float:
        return self.score_batch(query, [document])[0]

    def score_batch(self, query: str, documents: Sequence[Document]) -> list[float]:
        out = []
        for doc in documents:
            try:
                value = float(self.score(query, doc))
            except Exception as exc:
                raise ScorerError(doc.doc_id, exc) from exc
            if not np.isfinite(value):
                raise ScorerError(doc.doc_id, ValueError(f"non-finite score {value}"))
            out.append(value)
        return out


class LexicalScorer(Scorer):
    """BM25 of the query tokens against one (truncated) document, with corpus statistics."""

    kind = "lexical"

    def __init__(self, index=None, truncate: int = SCORER_TRUNCATION):
        self.index = index
        self.truncate = truncate

    def score(self, query: str, document: Document) -> float:
        tokens = tokenize(truncate_words(document.content, self.truncate))
        return self.index.score_document(tokenize(query), tokens)


class OracleScorer(Scorer):
    """Scores a document by its judged gain for the query (0 when unjudged)."""

    kind = "oracle"

    def __init__(self, qrels: Optional[Mapping] = None, queries: Optional[Mapping[str, str]] = None):
        self.qrels = qrels
        self.queries = queries

    def _table(self) -> dict:
        table = getattr(self, "_gains_by_text", None)
        if table is None:
            table = {}
            for qid, text in (self.queries or {}).items():
                gains = dict((self.qrels or {}).get(qid, {}))
                if text in table and table[text] != gains:
                    raise ValueError(f"query text {text!r} has conflicting judgments")
                table[text] = gains
            self._gains_by_text = table
        return table

    def score(self, query: str, document: Document) -> float:
        return float(self._table().get(query, {}).get(document.doc_id, 0))


class ExternalScorer(Scorer):
    """Scores with a remote model over the line-delimited JSON protocol."""

    kind = "external"

    def __init__(self, client: Optional[ModelClient] = None, truncate: int = SCORER_TRUNCATION):
        self.client = client
        self.truncate = truncate

    def score_batch(self, query: str, documents: Sequence[Document]) -> list[float]:
        return external_score_batch(self.client, query, [d.content for d in documents], self.truncate)


def external_score_batch(client: ModelClient, query: str, documents: Sequence[str],
                         truncate: int = SCORER_TRUNCATION) -> list[float]:
    """One ``query: ... document: ...`` request per document; scores in input order."""
    inputs = [format_score_input(query, truncate_words(d, truncate)) for d in documents]
    return client.score(inputs)


def listwise_softmax_ce(labels, scores) -> float:
    """Softmax cross-entropy of a list with exactly one positive label."""
    y = np.asarray(labels, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("labels and scores must be 1-d and of equal length")
    if len(y) < 2:
        raise ValueError("a list needs at least 2 entries")
    if not np.all((y == 0) | (y == 1)) or y.sum() != 1:
        raise ValueError("labels must contain exactly one 1 and zeros elsewhere")
    shifted = s - s.max()
    log_softmax = shifted - np.log(np.exp(shifted).sum())
    return max(0.0, float(-(y * log_softmax).sum()))


@dataclass
class RerankList:
    query_id: str
    query: str
    doc_ids: list
    labels: list
    documents: list = field(default_factory=list, repr=False)
    short: bool = False  # fewer than m-1 negatives were available

    def to_dict(self) -> dict:
        return {"query_id": self.query_id, "query": self.query, "doc_ids": self.doc_ids,
                "labels": self.labels, "documents": self.documents, "short": self.short}


@dataclass
class RerankListStats:
    queries: int = 0
    emitted: int = 0
    skipped_no_gold: int = 0
    short_lists: int = 0

    @property
    def skipped_fraction(self) -> float:
        return self.skipped_no_gold / self.queries if self.queries else 0.0


def build_rerank_lists(index, queries: Mapping[str, str], qrels: Mapping, k: int = 100, m: int = 32,
                       seed: int = 0) -> tuple[list[RerankList], RerankListStats]:
    """One training list per query: its best-ranked gold doc plus ``m - 1`` negatives.

    Negatives are sampled uniformly without replacement from the non-gold BM25
    top-``k``; queries with no gold document in the top-``k`` are skipped.
    """
    k = check_positive_int(k, "k")
    m = check_positive_int(m, "m")
    if m < 2:
        raise ValueError("m must be >= 2")
    if m > k:
        raise ValueError(f"m ({m}) must not exceed k ({k})")
    rng = np.random.default_rng(seed)
    stats = RerankListStats()
    lists = []
    for qid in sorted(queries):
        stats.queries += 1
        gains = qrels.get(qid, {})
        hits = [h.doc_id for h in index.search(queries[qid], k)]
        gold = [d for d in hits if gains.get(d, 0) > 0]
        if not gold:
            stats.skipped_no_gold += 1
            continue
        negatives = [d for d in hits if gains.get(d, 0) <= 0]
        n_neg = min(m - 1, len(negatives))
        picked = [negatives[i] for i in sorted(rng.choice(len(negatives), n_neg, replace=False))]
        doc_ids = [gold[0]] + picked
        labels = [1] + [0] * n_neg
        order = rng.permutation(len(doc_ids))
        doc_ids = [doc_ids[i] for i in order]
        labels = [labels[i] for i in order]
        short = n_neg < m - 1
        if short:
            stats.short_lists += 1
            logger.info("query %s: only %d negatives available", qid, n_neg)
        lists.append(RerankList(qid, queries[qid], doc_ids, labels,
                                [index.corpus_[d].content for d in doc_ids], short))
        stats.emitted += 1
    return lists, stats
