"""Inverted index with Lucene-style BM25 scoring and operator-structured search."""

from __future__ import annotations

import heapq
import json
import math
from collections import Counter
from pathlib import Path

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_corpus, check_positive_int, check_query
from .corpus import Corpus, Document, ScoredDoc, Source
from .query import Op, StructuredQuery, tokenize

INDEX_FORMAT = "hare-bm25-index"
INDEX_VERSION = 1


def bm25_idf(n_docs: int, df: int) -> float:
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


class BM25Index(BaseEstimator):
    """Immutable inverted index over a corpus, scored with BM25.

    Parameters
    ----------
    k1, b : float
        BM25 saturation and length-normalisation parameters.

    Attributes
    ----------
    corpus_ : Corpus
    postings_ : dict[str, list[tuple[str, int]]]
        term -> (doc_id, term frequency), sorted by doc_id.
    doc_lengths_ : dict[str, int]
    n_docs_ : int
    avg_doc_length_ : float
    """

    def __init__(self, k1: float = 0.9, b: float = 0.4):
        self.k1 = k1
        self.b = b

    def fit(self, documents, y=None):
        corpus = check_corpus(documents)
        postings: dict[str, list[tuple[str, int]]] = {}
        lengths: dict[str, int] = {}
        for doc in corpus.documents():  # ascending doc_id keeps postings sorted
            lengths[doc.doc_id] = doc.length
            for term, tf in Counter(doc.tokens).items():
                postings.setdefault(term, []).append((doc.doc_id, tf))
        self.corpus_ = corpus
        self.postings_ = dict(sorted(postings.items()))
        self.doc_lengths_ = lengths
        self._finalize()
        return self

    def _finalize(self):
        self.n_docs_ = len(self.doc_lengths_)
        total = sum(self.doc_lengths_.values())
        self.avg_doc_length_ = total / self.n_docs_ if self.n_docs_ else 0.0
        self._ordinal = {doc_id: i for i, doc_id in enumerate(sorted(self.doc_lengths_))}
        self._ids = sorted(self.doc_lengths_)
        self._norm = [self._length_norm(self.doc_lengths_[d]) for d in self._ids]
        self._impacts: dict[str, list[tuple[int, float]]] = {}
        self._doc_sets: dict[str, frozenset] = {}
        self._last_restriction = None

    def _length_norm(self, length: int) -> float:
        if self.avg_doc_length_ == 0:
            return self.k1
        return self.k1 * (1.0 - self.b + self.b * length / self.avg_doc_length_)

    # -- statistics -------------------------------------------------------

    def df(self, term: str) -> int:
        check_is_fitted(self, "postings_")
        return len(self.postings_.get(term, ()))

    def idf(self, term: str) -> float:
        check_is_fitted(self, "postings_")
        return bm25_idf(self.n_docs_, self.df(term))

    def term_score(self, term: str, tf: int, length: int) -> float:
        """Contribution of one query term occurring ``tf`` times in a doc of ``length`` tokens."""
        if tf <= 0:
            return 0.0
        return self.idf(term) * tf / (tf + self._length_norm(length))

    def vocabulary(self) -> list[str]:
        return list(self.postings_)

    # -- search -----------------------------------------------------------

    def _term_impacts(self, term: str) -> list[tuple[int, float]]:
        impacts = self._impacts.get(term)
        if impacts is None:
            idf = self.idf(term)
            impacts = [
                (self._ordinal[doc_id], idf * tf / (tf + self._norm[self._ordinal[doc_id]]))
                for doc_id, tf in self.postings_.get(term, ())
            ]
            self._impacts[term] = impacts
        return impacts

    def _docs_with(self, term: str) -> frozenset:
        docs = self._doc_sets.get(term)
        if docs is None:
            docs = frozenset(self._ordinal[d] for d, _ in self.postings_.get(term, ()))
            self._doc_sets[term] = docs
        return docs

    def _restriction(self, ids: frozenset) -> frozenset:
        # sessions reuse one frozen id set for every step
        if self._last_restriction is None or self._last_restriction[0] is not ids:
            allowed = frozenset(self._ordinal[d] for d in ids if d in self._ordinal)
            self._last_restriction = (ids, allowed)
        return self._last_restriction[1]

    def search(self, query, k: int = 10) -> list[ScoredDoc]:
        """Top-``k`` documents for a structured query, best first, ties by doc_id.

        Scoring terms are the base terms plus ``+`` and ``^`` clause terms;
        ``+`` and ``-`` clauses additionally filter, ``restrict_ids`` limits the
        candidate set.
        """
        check_is_fitted(self, "postings_")
        k = check_positive_int(k, "k")
        query = check_query(query)

        scores: dict[int, float] = {}
        for term, weight in query.scoring_terms():
            for ordinal, impact in self._term_impacts(term):
                scores[ordinal] = scores.get(ordinal, 0.0) + weight * impact
        if not scores:
            return []

        candidates = set(scores)
        for clause in query.clauses:
            if clause.op is Op.PLUS:
                candidates &= self._docs_with(clause.term)
            elif clause.op is Op.MINUS:
                candidates -= self._docs_with(clause.term)
        if query.restrict_ids is not None:
            candidates &= self._restriction(query.restrict_ids)

        top = heapq.nsmallest(k, ((-scores[o], o) for o in candidates))
        return [
            ScoredDoc(self._ids[o], -neg, Source.SPARSE, rank)
            for rank, (neg, o) in enumerate(top, 1)
        ]

    def score_document(self, query_terms: list[str], doc_tokens) -> float:
        """BM25 of plain ``query_terms`` against a token sequence, using corpus statistics."""
        check_is_fitted(self, "postings_")
        tf = Counter(doc_tokens)
        length = len(doc_tokens)
        return sum(self.term_score(t, tf[t], length) for t in query_terms)

    # -- persistence ------------------------------------------------------

    def to_json(self) -> str:
        check_is_fitted(self, "postings_")
        payload = {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "params": {"k1": self.k1, "b": self.b},
            "documents": [doc.to_dict() for doc in self.corpus_.documents()],
            "doc_lengths": self.doc_lengths_,
            "postings": {t: [[d, tf] for d, tf in plist] for t, plist in self.postings_.items()},
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "BM25Index":
        payload = json.loads(text)
        if payload.get("format") != INDEX_FORMAT:
            raise ValueError("not a BM25 index file")
        if payload.get("version") != INDEX_VERSION:
            raise ValueError(f"unsupported index version {payload.get('version')}")
        index = cls(**payload["params"])
        index.corpus_ = Corpus(Document.from_dict(d) for d in payload["documents"])
        index.doc_lengths_ = {d: int(n) for d, n in payload["doc_lengths"].items()}
        index.postings_ = {t: [(d, int(tf)) for d, tf in plist] for t, plist in payload["postings"].items()}
        index._finalize()
        return index

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BM25Index":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def build_index(documents, k1: float = 0.9, b: float = 0.4) -> BM25Index:
    return BM25Index(k1=k1, b=b).fit(documents)


def bm25_search(index: BM25Index, query, k: int) -> list[ScoredDoc]:
    return index.search(query, k)


__all__ = ["BM25Index", "bm25_idf", "bm25_search", "build_index", "tokenize", "StructuredQuery"]
