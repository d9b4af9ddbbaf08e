"""Synthetic planted-relevance collections for desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, Document, write_queries
from .dense import PrecomputedEmbedder
from .evaluation import write_qrels

_ONSETS = "b c d f g h j k l m n p r s t v w z br dr fl gr kl pl st tr".split()
_VOWELS = "a e i o u ai ea io ou".split()


def _words(rng, n, syllables=3, taken=None):
    taken = set() if taken is None else taken
    out = []
    while len(out) < n:
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syllables))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def _unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


@dataclass
class PlantedDataset:
    corpus: Corpus
    queries: dict
    qrels: dict
    embedder: PrecomputedEmbedder
    buried: set = field(default_factory=set)

    def write(self, directory) -> dict:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": directory / "corpus.jsonl",
            "queries": directory / "queries.jsonl",
            "qrels": directory / "qrels.txt",
            "embeddings": directory / "embeddings.jsonl",
        }
        self.corpus.to_jsonl(paths["corpus"])
        write_queries(self.queries, paths["queries"])
        write_qrels(self.qrels, paths["qrels"])
        self.embedder.to_jsonl(paths["embeddings"])
        return paths


def make_planted_corpus(n_queries: int = 50, n_background: int = 500, dim: int = 32,
                        n_buried_distractors: int = 15, seed: int = 0) -> PlantedDataset:
    """Build a collection where each query has two relevant documents.

    One relevant document matches the query terms but has an unrelated dense
    vector (reachable only lexically); the other shares no query term but
    sits next to the query in embedding space (reachable only densely).  Both
    carry a query-specific topic term.  For every other query the lexical one is
    buried below ``n_buried_distractors`` short documents that repeat the query
    terms, so BM25 only finds it when retrieving deeper.  In every fourth
    query the dense document lacks the topic term, leaving no obvious bridge to
    the buried one.
    """
    rng = np.random.default_rng(seed)
    taken: set = set()
    background = _words(rng, 2000, syllables=2, taken=taken)
    docs, vectors, queries, qrels, buried = [], {}, {}, {}, set()

    def filler(n):
        return list(rng.choice(background, size=n))

    def add(doc_id, words, vec):
        order = rng.permutation(len(words))
        docs.append(Document(doc_id, " ".join(words[i] for i in order)))
        vectors[doc_id] = vec

    for i in range(n_queries):
        qid = f"q{i:03d}"
        qterms = _words(rng, 3, taken=taken)
        topic = _words(rng, 1, syllables=4, taken=taken)[0]
        queries[qid] = " ".join(qterms)
        qvec = _unit(rng, dim)
        vectors[queries[qid]] = qvec

        lex, den = f"{qid}-lex", f"{qid}-dense"
        add(lex, qterms + [topic] * 2 + filler(12), _unit(rng, dim))
        noisy = qvec + 0.15 * _unit(rng, dim)
        bridge = [topic] * 3 if i % 4 != 3 else []
        add(den, bridge + filler(10), noisy / np.linalg.norm(noisy))
        qrels[qid] = {lex: 1, den: 1}

        if i % 2:
            buried.add(qid)
            for j in range(n_buried_distractors):
                add(f"{qid}-x{j:02d}", qterms * 2 + filler(6), _unit(rng, dim))
        else:
            for j in range(4):
                add(f"{qid}-x{j:02d}", [qterms[j % 3]] + filler(12), _unit(rng, dim))

    for j in range(n_background):
        add(f"bg{j:05d}", filler(15), _unit(rng, dim))

    return PlantedDataset(Corpus(docs), queries, qrels, PrecomputedEmbedder(vectors), buried)
