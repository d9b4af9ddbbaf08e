"""Search sessions: refinement, per-step retrieval, best-k aggregation, termination."""

from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

from sklearn.base import BaseEstimator, clone
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from ._validation import check_corpus, check_in, check_positive_int
from .corpus import Corpus, ScoredDoc
from .environment import RetrievalEnvironment, hybrid_join
from .evaluation import ndcg_at_k
from .query import Refinement, StructuredQuery, apply_refinement
from .scoring import Scorer

logger = logging.getLogger(__name__)

WIRINGS = ("hare", "bm25", "dense")


class Termination(str, enum.Enum):
    MAX_STEPS = "max_steps"
    EMPTY_RESULTS = "empty_results"
    EXPANDER_STOP = "expander_stop"


@dataclass(frozen=True)
class TraceStep:
    t: int
    query: str
    refinement: Optional[str]
    retrieved_ids: tuple
    aggregate_ids: tuple
    ndcg10: Optional[float]
    wall_ms: float
    timings: dict = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict:
        out = {
            "t": self.t, "query": self.query, "refinement": self.refinement,
            "retrieved_ids": list(self.retrieved_ids), "aggregate_ids": list(self.aggregate_ids),
        }
        if self.ndcg10 is not None:
            out["ndcg10"] = self.ndcg10
        out["wall_ms"] = self.wall_ms
        return out


class ScoreCache:
    """f(q0, d) values for one session, shared by its hypothetical branches."""

    def __init__(self, scorer: Scorer, q0: str, corpus: Corpus):
        self.scorer = scorer
        self.q0 = q0
        self.corpus = corpus
        self.values: dict[str, float] = {}
        self.calls = 0

    def scores(self, doc_ids: Sequence[str]) -> dict[str, float]:
        missing = [d for d in dict.fromkeys(doc_ids) if d not in self.values]
        if missing:
            self.calls += 1
            new = self.scorer.score_batch(self.q0, [self.corpus[d] for d in missing])
            self.values.update(zip(missing, new))
        return {d: self.values[d] for d in doc_ids}


@dataclass(frozen=True)
class SessionState:
    q0: str
    query: StructuredQuery
    cache: ScoreCache = field(repr=False, compare=False)
    t: int = 0
    topk_ids: Optional[frozenset] = field(default=None, repr=False)
    aggregate: tuple = ()
    scored_docs: frozenset = frozenset()
    trace: tuple = ()
    terminated: Optional[Termination] = None
    gains: Optional[Mapping] = field(default=None, repr=False)
    query_id: Optional[str] = None
    dense_calls: int = 0

    @property
    def aggregate_ids(self) -> list[str]:
        return [d.doc_id for d in self.aggregate]

    def ndcg(self) -> Optional[float]:
        if self.gains is None:
            return None
        return ndcg_at_k(self.aggregate_ids, self.gains, 10)


def aggregate(prev: Sequence[ScoredDoc], new: Sequence[ScoredDoc], cache: ScoreCache,
              k_agg: int) -> tuple[list[ScoredDoc], list[str]]:
    """Best ``k_agg`` of ``prev`` and ``new`` by f(q0, .); returns (A, ids scored for the first time)."""
    pool = hybrid_join(prev, new)
    fresh = [d.doc_id for d in pool if d.doc_id not in cache.values]
    scores = cache.scores([d.doc_id for d in pool])
    ranked = sorted((d.with_score(scores[d.doc_id]) for d in pool), key=lambda d: (-d.score, d.doc_id))
    return ranked[:k_agg], fresh


@dataclass
class SessionResult:
    state: SessionState

    @property
    def aggregate(self) -> list[ScoredDoc]:
        return list(self.state.aggregate)

    @property
    def ranking(self) -> list[str]:
        return self.state.aggregate_ids

    @property
    def trace(self) -> list[TraceStep]:
        return list(self.state.trace)

    @property
    def steps(self) -> int:
        return self.state.t

    @property
    def termination(self) -> Optional[Termination]:
        return self.state.terminated

    @property
    def docs_reranked(self) -> int:
        return len(self.state.scored_docs)

    @property
    def ndcgs(self) -> list[Optional[float]]:
        return [s.ndcg10 for s in self.state.trace]

    @property
    def step_wall_ms(self) -> list[float]:
        return [s.wall_ms for s in self.state.trace]

    def trace_records(self) -> list[dict]:
        records = []
        for step in self.state.trace:
            rec = step.to_dict()
            if self.state.query_id is not None:
                rec = {"query_id": self.state.query_id, **rec}
            records.append(rec)
        return records

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in self.trace_records())


class SearchAgent(BaseEstimator):
    """A search agent that refines queries over a retrieval environment.

    Parameters
    ----------
    environment : RetrievalEnvironment, optional
        Supplies the BM25 index, the dense index and the scorer f.  Fitted on
        :meth:`fit` if not already fitted.
    expander : object with ``propose(agent, state)``, optional
        Refinement policy; ``None`` stops after the initial retrieval.
    wiring : {"hare", "bm25", "dense"}
        ``hare`` joins full-corpus BM25 results with BM25 results restricted to
        the dense Top-K; ``bm25`` and ``dense`` keep only one of the two.
    k : int
        Per-retriever depth at every step.
    k_agg : int
        Size of the running best-documents list.
    max_steps : int
        Maximum number of refinements.
    top_k : int
        Size of the frozen dense sub-collection.
    observation_tokens : int
        Whitespace tokens kept per document in the expander observation.
    """

    def __init__(self, environment: Optional[RetrievalEnvironment] = None, expander=None,
                 wiring: str = "hare", k: int = 10, k_agg: int = 10, max_steps: int = 5,
                 top_k: int = 1000, observation_tokens: int = 96):
        self.environment = environment
        self.expander = expander
        self.wiring = wiring
        self.k = k
        self.k_agg = k_agg
        self.max_steps = max_steps
        self.top_k = top_k
        self.observation_tokens = observation_tokens

    def fit(self, documents=None, y=None):
        env = self.environment
        if env is None:
            env = RetrievalEnvironment()
        try:
            check_is_fitted(env, "bm25_")
        except NotFittedError:
            if documents is None:
                raise ValueError("the environment is not fitted and no documents were given")
            env = clone(env).fit(check_corpus(documents))
        self.environment_ = env
        return self

    def _env(self) -> RetrievalEnvironment:
        if not hasattr(self, "environment_"):
            self.fit()
        return self.environment_

    # -- session mechanics --------------------------------------------------

    def start(self, q0: str, gains: Optional[Mapping] = None, query_id: Optional[str] = None) -> SessionState:
        """Run step 0: initial retrieval, Top-K definition and A_0."""
        env = self._env()
        check_in(self.wiring, WIRINGS, "wiring")
        k = check_positive_int(self.k, "k")
        k_agg = check_positive_int(self.k_agg, "k_agg")
        began = time.perf_counter()
        timings = {}
        query = StructuredQuery(q0)
        topk_ids, dense_calls = None, 0
        d1, d2 = [], []
        if self.wiring in ("hare", "dense"):
            tick = time.perf_counter()
            topk = env.dense_.search_text(q0, check_positive_int(self.top_k, "top_k"))
            timings["dense_retrieval"] = _ms(tick)
            dense_calls = 1
            topk_ids = frozenset(d.doc_id for d in topk) or None
            d2 = topk[:k]
        if self.wiring in ("hare", "bm25"):
            tick = time.perf_counter()
            d1 = env.bm25_.search(query, k)
            timings["bm25_retrieval"] = _ms(tick)
        retrieved = hybrid_join(d1, d2)
        cache = ScoreCache(env._scorer(), q0, env.corpus_)
        state = SessionState(q0=q0, query=query, cache=cache, topk_ids=topk_ids, gains=gains,
                             query_id=query_id, dense_calls=dense_calls)
        return self._advance(state, None, retrieved, k_agg, began, timings, step=False)

    def step(self, state: SessionState, refinement: Refinement, extra_ms: float = 0.0) -> SessionState:
        """Apply one refinement and retrieve with the new query; returns a new state."""
        if state.terminated is not None:
            raise RuntimeError(f"session already terminated ({state.terminated.value})")
        env = self._env()
        k = check_positive_int(self.k, "k")
        began = time.perf_counter()
        timings = {}
        query = apply_refinement(state.query, refinement)
        d1, d2 = [], []
        if self.wiring in ("hare", "bm25"):
            tick = time.perf_counter()
            d1 = env.bm25_.search(query, k)
            timings["bm25_retrieval"] = _ms(tick)
        if self.wiring in ("hare", "dense") and state.topk_ids:
            tick = time.perf_counter()
            d2 = env.bm25_.search(query.restrict(state.topk_ids), k)
            timings["topk_retrieval"] = _ms(tick)
        retrieved = [replace(d, original_depth=None) for d in hybrid_join(d1, d2)]
        state = replace(state, query=query, t=state.t + 1)
        return self._advance(state, refinement, retrieved, self.k_agg, began, timings,
                             step=True, extra_ms=extra_ms)

    def _advance(self, state, refinement, retrieved, k_agg, began, timings, step, extra_ms=0.0):
        terminated = state.terminated
        if retrieved:
            tick = time.perf_counter()
            agg, fresh = aggregate(state.aggregate, retrieved, state.cache, k_agg)
            timings["rerank"] = _ms(tick)
            state = replace(state, aggregate=tuple(agg),
                            scored_docs=state.scored_docs | {d.doc_id for d in retrieved})
        else:
            terminated = Termination.EMPTY_RESULTS
        if extra_ms:
            timings["expander"] = extra_ms
        record = TraceStep(
            t=state.t,
            query=str(state.query),
            refinement=None if refinement is None else str(refinement),
            retrieved_ids=tuple(d.doc_id for d in retrieved),
            aggregate_ids=tuple(state.aggregate_ids),
            ndcg10=state.ndcg(),
            wall_ms=_ms(began) + extra_ms,
            timings=timings,
        )
        return replace(state, trace=state.trace + (record,), terminated=terminated)

    def observation(self, state: SessionState) -> str:
        from .expanders import serialize_observation

        corpus = self._env().corpus_
        docs = [corpus[d].content for d in state.aggregate_ids[:10]]
        return serialize_observation(str(state.query), docs, self.observation_tokens)

    def run(self, q0: str, gains: Optional[Mapping] = None, query_id: Optional[str] = None,
            expander=None) -> SessionResult:
        """Run a full session for ``q0`` and return A_T with its trace."""
        expander = self.expander if expander is None else expander
        state = self.start(q0, gains, query_id)
        while state.terminated is None:
            if state.t >= self.max_steps:
                state = replace(state, terminated=Termination.MAX_STEPS)
                break
            tick = time.perf_counter()
            refinement = None if expander is None else expander.propose(self, state)
            expander_ms = _ms(tick)
            if refinement is None:
                state = replace(state, terminated=Termination.EXPANDER_STOP)
                break
            state = self.step(state, refinement, expander_ms)
        return SessionResult(state)

    def run_many(self, queries: Mapping[str, str], qrels: Optional[Mapping] = None,
                 expander=None) -> dict[str, SessionResult]:
        qrels = qrels or {}
        return {qid: self.run(queries[qid], qrels.get(qid), qid, expander) for qid in sorted(queries)}

    def predict(self, queries: Mapping[str, str]) -> dict[str, list[ScoredDoc]]:
        return {qid: res.aggregate for qid, res in self.run_many(queries).items()}


def session_step(agent: SearchAgent, state: SessionState, refinement: Refinement) -> SessionState:
    return agent.step(state, refinement)


def run_session(agent: SearchAgent, q0: str, expander=None, gains=None, query_id=None) -> SessionResult:
    return agent.run(q0, gains, query_id, expander)


def original_depths(env: RetrievalEnvironment, q0: str, doc_ids: Sequence[str]) -> dict[str, dict]:
    """Rank of each doc in the full BM25 and dense rankings of ``q0`` (None if absent)."""
    n = max(len(env.corpus_), 1)
    bm25 = {d.doc_id: d.original_depth for d in env.bm25_.search(StructuredQuery(q0), n)}
    dense = {d.doc_id: d.original_depth for d in env.dense_.search_text(q0, n)}
    return {d: {"bm25": bm25.get(d), "dense": dense.get(d)} for d in doc_ids}


def _ms(since: float) -> float:
    return (time.perf_counter() - since) * 1000.0
