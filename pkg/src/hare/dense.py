"""Embedders and exact maximum-inner-product search."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_corpus, check_positive_int
from .corpus import Document, ScoredDoc, Source
from .query import tokenize

HASH_KEY = b"hare-feature-hash"


def feature_hash(token: str) -> int:
    """Unsigned 64-bit keyed BLAKE2b hash of a token (platform independent)."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=HASH_KEY).digest()
    return int.from_bytes(digest, "little")


class FeatureHashEmbedder(BaseEstimator):
    """Bag-of-tokens hashed into ``dim`` buckets, then L2-normalised."""

    kind = "feature_hash"

    def __init__(self, dim: int = 256):
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        dim = check_positive_int(self.dim, "dim")
        vec = np.zeros(dim, dtype=np.float64)
        for tok in tokenize(text):
            vec[feature_hash(tok) % dim] += 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def embed_document(self, doc: Document) -> np.ndarray:
        return self.embed(doc.content)


class PrecomputedEmbedder(BaseEstimator):
    """Vectors looked up by exact key: doc_id for documents, raw text for queries."""

    kind = "precomputed"

    def __init__(self, vectors: Optional[Mapping[str, np.ndarray]] = None):
        self.vectors = vectors

    @property
    def dim(self) -> int:
        if not self.vectors:
            raise ValueError("no precomputed vectors loaded")
        return len(next(iter(self.vectors.values())))

    def embed(self, text: str) -> np.ndarray:
        try:
            return np.asarray(self.vectors[text], dtype=np.float64)
        except (KeyError, TypeError):
            raise KeyError(f"no precomputed embedding for key {text!r}") from None

    def embed_document(self, doc: Document) -> np.ndarray:
        return self.embed(doc.doc_id)

    @classmethod
    def from_jsonl(cls, path) -> "PrecomputedEmbedder":
        vectors, dim = {}, None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    key, vec = obj["key"], np.asarray(obj["vector"], dtype=np.float64)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    raise ValueError(f"{path}:{lineno}: expected {{'key': str, 'vector': [float]}}") from None
                if dim is None:
                    dim = len(vec)
                if vec.ndim != 1 or len(vec) != dim or not np.all(np.isfinite(vec)):
                    raise ValueError(f"{path}:{lineno}: vector must be finite with dimension {dim}")
                vectors[key] = vec
        return cls(vectors)

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key in sorted(self.vectors):
                fh.write(json.dumps({"key": key, "vector": [float(x) for x in self.vectors[key]]}) + "\n")


def embed(embedder, text: str) -> np.ndarray:
    return embedder.embed(text)


class DenseIndex(BaseEstimator):
    """Exhaustive inner-product index over document vectors.

    Attributes
    ----------
    doc_ids_ : list[str]
        Ascending doc ids; row ``i`` of ``vectors_`` belongs to ``doc_ids_[i]``.
    vectors_ : ndarray of shape (n_docs, dim)
    """

    def __init__(self, embedder=None):
        self.embedder = embedder

    def _embedder(self):
        return self.embedder if self.embedder is not None else FeatureHashEmbedder()

    def fit(self, documents, y=None):
        corpus = check_corpus(documents)
        emb = self._embedder()
        rows = [emb.embed_document(doc) for doc in corpus.documents()]
        dim = emb.dim
        self.doc_ids_ = corpus.ids
        self.vectors_ = np.vstack(rows) if rows else np.zeros((0, dim))
        self._check_vectors()
        return self

    def _check_vectors(self):
        if self.vectors_.ndim != 2 or len(self.doc_ids_) != self.vectors_.shape[0]:
            raise ValueError("vectors must form an (n_docs, dim) matrix")
        if not np.all(np.isfinite(self.vectors_)):
            raise ValueError("dense vectors must be finite")

    @property
    def dim(self) -> int:
        check_is_fitted(self, "vectors_")
        return self.vectors_.shape[1]

    def embed_query(self, text: str) -> np.ndarray:
        return self._embedder().embed(text)

    def search(self, query_vector, k: int = 10) -> list[ScoredDoc]:
        """Exact top-``k`` by inner product, descending, ties by ascending doc_id."""
        check_is_fitted(self, "vectors_")
        k = check_positive_int(k, "k")
        q = np.asarray(query_vector, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query vector has shape {q.shape}, index dimension is {self.dim}")
        scores = self.vectors_ @ q
        # lexsort: last key is primary; rows are already in doc_id order
        order = np.lexsort((np.arange(len(scores)), -scores))[:k]
        return [
            ScoredDoc(self.doc_ids_[i], float(scores[i]), Source.DENSE, rank)
            for rank, i in enumerate(order, 1)
        ]

    def search_text(self, text: str, k: int = 10) -> list[ScoredDoc]:
        return self.search(self.embed_query(text), k)

    # -- persistence ------------------------------------------------------

    def save(self, directory) -> None:
        check_is_fitted(self, "vectors_")
        directory = Path(directory)
        emb = self._embedder()
        meta = {"format": "hare-dense-index", "version": 1, "embedder": emb.kind, "doc_ids": self.doc_ids_}
        if emb.kind == "feature_hash":
            meta["dim"] = emb.dim
        else:
            keys = sorted(set(emb.vectors) - set(self.doc_ids_))
            meta["query_keys"] = keys
            np.save(directory / "dense_queries.npy", np.vstack([emb.vectors[k] for k in keys]) if keys else np.zeros((0, self.dim)))
        (directory / "dense.json").write_text(json.dumps(meta, sort_keys=True, ensure_ascii=False), encoding="utf-8")
        np.save(directory / "dense_vectors.npy", self.vectors_)

    @classmethod
    def load(cls, directory) -> "DenseIndex":
        directory = Path(directory)
        meta = json.loads((directory / "dense.json").read_text(encoding="utf-8"))
        if meta.get("format") != "hare-dense-index":
            raise ValueError("not a dense index directory")
        vectors = np.load(directory / "dense_vectors.npy")
        if meta["embedder"] == "feature_hash":
            embedder = FeatureHashEmbedder(dim=meta["dim"])
        else:
            table = dict(zip(meta["doc_ids"], vectors))
            qvecs = np.load(directory / "dense_queries.npy")
            table.update(zip(meta["query_keys"], qvecs))
            embedder = PrecomputedEmbedder(table)
        index = cls(embedder=embedder)
        index.doc_ids_ = list(meta["doc_ids"])
        index.vectors_ = vectors
        index._check_vectors()
        return index


def dense_search(index: DenseIndex, query_vector, k: int) -> list[ScoredDoc]:
    return index.search(query_vector, k)
