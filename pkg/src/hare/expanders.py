"""Refinement policies: the Rocchio session oracle, RM3, and an external model."""

from __future__ import annotations

import json
import logging
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, replace
from typing import Mapping, Optional, Sequence

from sklearn.base import BaseEstimator

from ._validation import check_positive_int
from .protocol import ModelClient
from .query import OP_ORDER, Op, Refinement, parse_refinement, tokenize
from .scoring import truncate_words
from .session import SessionResult, Termination

logger = logging.getLogger(__name__)

_DOC_SEP = " document: "


def serialize_observation(query: str, documents: Sequence[str], max_tokens: Optional[int] = 96) -> str:
    """``query: {q} document: {d1} document: {d2} ...`` with single spaces."""
    if len(documents) > 10:
        raise ValueError("an observation holds at most 10 documents")
    parts = [f"query: {' '.join(query.split())}"]
    for doc in documents:
        text = truncate_words(doc, max_tokens) if max_tokens is not None else " ".join(doc.split())
        parts.append(f"document: {text}")
    return " ".join(parts)


def parse_observation(text: str) -> tuple[str, list[str]]:
    if not text.startswith("query: "):
        raise ValueError("observation must start with 'query: '")
    query, *docs = text[len("query: "):].split(_DOC_SEP)
    return query, docs


@dataclass
class BCExample:
    observation: str
    target: str
    query_id: Optional[str]
    step: int
    ndcg_before: float
    ndcg_after: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)


class NullExpander(BaseEstimator):
    """Never refines: the session reduces to its environment."""

    def propose(self, agent, state):
        return None


# -- Rocchio session oracle ------------------------------------------------------

class RocchioExpander(BaseEstimator):
    """Greedy oracle that tries candidate refinements against the gold documents.

    Terms shared by the current results and a gold document are tried as plain
    terms, ``+`` and ``^i``; terms of the results absent from every gold
    document are tried with ``-``.  Each operator gets the ``M`` candidates with
    the highest IDF.  The refinement with the largest strict nDCG@10 gain wins.

    Parameters
    ----------
    M : int
        Candidate budget per operator (20 for HT data, 100 for HQ data).
    boost_factors : tuple of float
        Factors tried for ``^i``.
    operators : tuple of str
        Enabled operators among ``plus``, ``term``, ``boost``, ``minus``.
    """

    def __init__(self, M: int = 100, boost_factors=(2, 4, 6, 8),
                 operators=("plus", "term", "boost", "minus")):
        self.M = M
        self.boost_factors = boost_factors
        self.operators = operators

    def candidates(self, agent, state) -> list[tuple[Refinement, float]]:
        """(refinement, idf) pairs to try, in tie-break order."""
        if state.gains is None:
            raise ValueError(f"no relevance judgments for query {state.query_id or state.q0!r}")
        M = check_positive_int(self.M, "M")
        env = agent._env()
        corpus, index = env.corpus_, env.bm25_
        result_terms = set()
        for doc_id in state.aggregate_ids:
            result_terms.update(corpus[doc_id].tokens)
        gold_terms = set()
        for doc_id, gain in state.gains.items():
            if gain > 0 and doc_id in corpus:
                gold_terms.update(corpus[doc_id].tokens)

        def top(terms):
            ranked = sorted(terms, key=lambda w: (-index.idf(w), w))[:M]
            return [(w, index.idf(w)) for w in ranked]

        shared = top(result_terms & gold_terms)
        enabled = {Op(o) for o in self.operators}
        out = []
        if Op.PLUS in enabled:
            out += [(Refinement(Op.PLUS, w), idf) for w, idf in shared]
        if Op.TERM in enabled:
            out += [(Refinement(Op.TERM, w), idf) for w, idf in shared]
        if Op.BOOST in enabled:
            out += [(Refinement(Op.BOOST, w, float(f)), idf)
                    for w, idf in shared for f in sorted(self.boost_factors)]
        if Op.MINUS in enabled:
            out += [(Refinement(Op.MINUS, w), idf) for w, idf in top(result_terms - gold_terms)]
        return out

    def propose(self, agent, state) -> Optional[Refinement]:
        best = self.best_trial(agent, state)
        return None if best is None else best[0]

    def best_trial(self, agent, state):
        """Return (refinement, ndcg_after) of the best strictly improving trial, or None."""
        if state.gains is None:
            raise ValueError(f"no relevance judgments for query {state.query_id or state.q0!r}")
        before = state.ndcg()
        if before >= 1.0:
            return None
        best, best_key = None, None
        for refinement, idf in self.candidates(agent, state):
            after = agent.step(state, refinement).ndcg()
            if after <= before:
                continue
            key = (-after, OP_ORDER[refinement.op], -idf, refinement.term, refinement.boost)
            if best_key is None or key < best_key:
                best, best_key = (refinement, after), key
        return best


@dataclass
class RocchioResult:
    session: object
    examples: list
    initial_ndcg: float
    final_ndcg: float

    @property
    def improved(self) -> bool:
        return self.final_ndcg > self.initial_ndcg


def rocchio_session(agent, q0: str, gains: Mapping, M: int = 100, max_steps: int = 5,
                    query_id: Optional[str] = None, **expander_params) -> RocchioResult:
    """Greedy oracle session; one behavioural-cloning example per accepted step.

    Stops when no candidate strictly improves nDCG@10 or after ``max_steps``.
    """
    expander = RocchioExpander(M=M, **expander_params)
    state = agent.start(q0, gains, query_id)
    examples = []
    while state.terminated is None:
        if state.t >= max_steps:
            state = replace(state, terminated=Termination.MAX_STEPS)
            break
        tick = time.perf_counter()
        best = expander.best_trial(agent, state)
        if best is None:
            state = replace(state, terminated=Termination.EXPANDER_STOP)
            break
        observation = agent.observation(state)
        after = agent.step(state, best[0], (time.perf_counter() - tick) * 1000.0)
        examples.append(BCExample(observation, str(best[0]), query_id, state.t, state.ndcg(), after.ndcg()))
        state = after
    trace = state.trace
    return RocchioResult(SessionResult(state), examples, trace[0].ndcg10, trace[-1].ndcg10)


# -- RM3 -----------------------------------------------------------------------

class RM3Expander(BaseEstimator):
    """Adds ``+w`` for the best RM3 term of the current results.

    The relevance model weights each result document by a softmax over its
    reranker score; the final term score interpolates it with the query's own
    term distribution using ``lam``.
    """

    def __init__(self, lam: float = 0.5, max_candidates: Optional[int] = None):
        self.lam = lam
        self.max_candidates = max_candidates

    def term_scores(self, agent, state) -> dict[str, tuple[float, float]]:
        corpus = agent._env().corpus_
        docs = list(state.aggregate)
        top = max(d.score for d in docs)
        weights = [math.exp(d.score - top) for d in docs]
        z = sum(weights)
        rm: Counter = Counter()
        for doc, w in zip(docs, weights):
            tokens = corpus[doc.doc_id].tokens
            if not tokens:
                continue
            for term, tf in Counter(tokens).items():
                rm[term] += (tf / len(tokens)) * (w / z)
        q_tokens = Counter(tokenize(state.q0))
        q_len = sum(q_tokens.values())
        out = {}
        for term, weight in rm.items():
            p_q = q_tokens[term] / q_len if q_len else 0.0
            out[term] = (self.lam * p_q + (1.0 - self.lam) * weight, weight)
        return out

    def propose(self, agent, state) -> Optional[Refinement]:
        if not state.aggregate:
            return None
        used = state.query.terms()
        scores = self.term_scores(agent, state)
        ranked = sorted(scores, key=lambda w: (-scores[w][0], -scores[w][1], w))
        if self.max_candidates is not None:
            ranked = ranked[: self.max_candidates]
        for term in ranked:
            if term not in used:
                return Refinement(Op.PLUS, term)
        return None


def rm3_expand(agent, state, lam: float = 0.5, max_candidates: Optional[int] = None) -> Optional[Refinement]:
    return RM3Expander(lam, max_candidates).propose(agent, state)


# -- external model ---------------------------------------------------------------

class ExternalExpander(BaseEstimator):
    """Asks a remote model for the next refinement given the serialized observation."""

    def __init__(self, client: Optional[ModelClient] = None):
        self.client = client

    def propose(self, agent, state) -> Optional[Refinement]:
        return external_expand(self.client, agent.observation(state))


def external_expand(client: ModelClient, observation: str) -> Optional[Refinement]:
    """Refinement proposed by the model; None (stop) when its output does not parse."""
    output = client.expand(observation)
    refinement = parse_refinement(output)
    if refinement is None:
        logger.info("expander output %r is not a refinement; stopping", output)
    return refinement
