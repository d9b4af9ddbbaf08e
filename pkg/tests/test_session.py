import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hare.bm25 import BM25Index
from hare.corpus import Corpus, Document, ScoredDoc, Source
from hare.dense import DenseIndex, PrecomputedEmbedder
from hare.environment import RetrievalEnvironment
from hare.expanders import NullExpander, RM3Expander
from hare.query import Op, Refinement
from hare.scoring import Scorer
from hare.session import ScoreCache, SearchAgent, Termination, aggregate, original_depths, run_session

from conftest import planted_env


class RecordingScorer(Scorer):
    """Lexical-free scorer: table lookup that remembers every query it was asked about."""

    def __init__(self, table=None):
        self.table = table

    def score_batch(self, query, documents):
        self.queries_ = getattr(self, "queries_", []) + [query]
        self.scored_ = getattr(self, "scored_", []) + [d.doc_id for d in documents]
        return [float(self.table.get(d.doc_id, 0.0)) for d in documents]


def _split_env(k=10):
    """Short ``alpha`` docs win BM25; long ``alpha`` docs sit next to the query in vector space."""
    docs = [Document(f"s{i}", "alpha") for i in range(10)]
    docs += [Document(f"v{i}", "alpha beta gamma delta") for i in range(10)]
    docs += [Document(f"z{i}", "zeta") for i in range(5)]
    vectors = {d.doc_id: np.array([1.0, 0.0]) if d.doc_id[0] == "v" else np.array([0.0, 1.0]) for d in docs}
    vectors["alpha"] = np.array([1.0, 0.0])
    corpus = Corpus(docs)
    scorer = RecordingScorer({f"v{i}": 10 - i for i in range(10)} | {f"s{i}": 0.5 for i in range(10)})
    return RetrievalEnvironment.from_indexes(
        BM25Index().fit(corpus), DenseIndex(PrecomputedEmbedder(vectors)).fit(corpus), k=k, scorer=scorer)


def test_hare_step_joins_disjoint_lists():
    env = _split_env()
    agent = SearchAgent(env, top_k=10).fit()
    state = agent.start("alpha")
    assert state.topk_ids == frozenset(f"v{i}" for i in range(10))
    state = agent.step(state, Refinement(Op.TERM, "alpha"))
    assert len(state.trace[-1].retrieved_ids) == 20
    assert set(state.trace[-1].retrieved_ids) == {f"s{i}" for i in range(10)} | state.topk_ids


def test_dense_retriever_called_once(monkeypatch):
    env = _split_env()
    calls = []
    original = env.dense_.search_text
    monkeypatch.setattr(env.dense_, "search_text", lambda *a, **kw: calls.append(a) or original(*a, **kw))
    agent = SearchAgent(env, top_k=10).fit()
    state = agent.start("alpha")
    for term in ["beta", "gamma", "delta", "alpha"]:
        state = agent.step(state, Refinement(Op.TERM, term))
    assert len(calls) == 1 and state.dense_calls == 1


def test_top_k_is_frozen_and_restricted_results_stay_inside(monkeypatch):
    env = _split_env()
    seen = []
    original = env.bm25_.search
    monkeypatch.setattr(env.bm25_, "search", lambda q, k=10: seen.append(q) or original(q, k))
    agent = SearchAgent(env, top_k=5).fit()
    state = agent.start("alpha")
    frozen = state.topk_ids
    for term in ["beta", "alpha", "gamma"]:
        state = agent.step(state, Refinement(Op.PLUS, term))
        assert state.topk_ids == frozen
    restricted = [q for q in seen if q.restrict_ids is not None]
    assert restricted and all(q.restrict_ids == frozen for q in restricted)
    for q in restricted:
        assert {h.doc_id for h in original(q, 10)} <= frozen


def test_scorer_always_sees_q0():
    env = _split_env()
    agent = SearchAgent(env, expander=RM3Expander(), top_k=10).fit()
    result = agent.run("alpha")
    assert result.steps >= 1
    assert set(env.scorer.queries_) == {"alpha"}
    # no document is scored twice within a session
    assert len(env.scorer.scored_) == len(set(env.scorer.scored_))


def test_aggregate_is_ranked_by_f_of_q0():
    env = _split_env()
    agent = SearchAgent(env, expander=RM3Expander(), top_k=10).fit()
    result = agent.run("alpha")
    for step in result.trace:
        values = [env.scorer.table.get(d, 0.0) for d in step.aggregate_ids]
        assert values == sorted(values, reverse=True)
    assert result.ranking == [f"v{i}" for i in range(10)]
    assert result.docs_reranked >= len(result.aggregate)


def test_empty_results_terminate_and_keep_aggregate():
    env = _split_env()
    agent = SearchAgent(env, top_k=10).fit()
    state = agent.start("alpha")
    after = agent.step(state, Refinement(Op.PLUS, "nonexistent"))
    assert after.terminated is Termination.EMPTY_RESULTS
    assert after.aggregate == state.aggregate
    assert after.t == 1 and after.trace[-1].retrieved_ids == ()
    with pytest.raises(RuntimeError, match="terminated"):
        agent.step(after, Refinement(Op.TERM, "alpha"))


def test_null_expander_reduces_to_environment():
    env = _split_env()
    agent = SearchAgent(env, expander=NullExpander(), top_k=10).fit()
    result = agent.run("alpha")
    assert result.steps == 0
    assert result.termination is Termination.EXPANDER_STOP
    assert len(result.trace) == 1


def test_max_steps_enforced():
    class Always:
        def propose(self, agent, state):
            return Refinement(Op.TERM, "alpha")

    env = _split_env()
    result = SearchAgent(env, expander=Always(), top_k=10).fit().run("alpha")
    assert result.steps == 5 and result.termination is Termination.MAX_STEPS
    assert [s.t for s in result.trace] == [0, 1, 2, 3, 4, 5]


def test_wirings_use_their_own_retrievers():
    env = _split_env()
    bm25 = SearchAgent(env, wiring="bm25").fit().start("alpha")
    dense = SearchAgent(env, wiring="dense", top_k=10).fit().start("alpha")
    assert bm25.topk_ids is None and bm25.dense_calls == 0
    assert set(bm25.trace[0].retrieved_ids) == {f"s{i}" for i in range(10)}
    assert set(dense.trace[0].retrieved_ids) == {f"v{i}" for i in range(10)}
    step = SearchAgent(env, wiring="dense", top_k=10).fit().step(dense, Refinement(Op.TERM, "alpha"))
    assert set(step.trace[-1].retrieved_ids) <= dense.topk_ids


def test_trace_records_and_depth_metadata():
    env = _split_env()
    agent = SearchAgent(env, top_k=10).fit()
    state = agent.start("alpha", gains={"v0": 1}, query_id="q1")
    assert {d.original_depth for d in state.aggregate} <= set(range(1, 11))
    state = agent.step(state, Refinement(Op.PLUS, "beta"))
    records = run_session(agent, "alpha", gains={"v0": 1}, query_id="q1").trace_records()
    assert list(records[0]) == ["query_id", "t", "query", "refinement", "retrieved_ids", "aggregate_ids",
                                "ndcg10", "wall_ms"]
    assert records[0]["ndcg10"] == 1.0
    json.dumps(records)
    assert "ndcg10" not in SearchAgent(env, top_k=10).fit().start("alpha").trace[0].to_dict()


def test_original_depths_come_from_full_rankings():
    env = _split_env()
    depths = original_depths(env, "alpha", ["s3", "v0", "z0"])
    assert depths["s3"]["bm25"] == 4
    assert depths["v0"]["dense"] == 1
    assert depths["z0"]["bm25"] is None


def test_observation_holds_top_ten_truncated():
    env = _split_env()
    agent = SearchAgent(env, top_k=10, observation_tokens=2).fit()
    obs = agent.observation(agent.start("alpha"))
    assert obs.startswith("query: alpha document: alpha beta document:")
    assert obs.count("document:") == 10


def test_agent_fits_environment_from_documents(tiny_corpus):
    agent = SearchAgent(RetrievalEnvironment(kind="bm25"), wiring="bm25", k=3).fit(tiny_corpus)
    assert agent.run("a").ranking == ["d2", "d1"]
    with pytest.raises(ValueError):
        SearchAgent(RetrievalEnvironment()).fit()


def test_session_determinism(planted, planted_indexes):
    env = planted_env(planted, planted_indexes)
    agent = SearchAgent(env, expander=RM3Expander()).fit()
    qid = "q001"

    def strip(records):
        return [{k: v for k, v in r.items() if k != "wall_ms"} for r in records]

    one = agent.run(planted.queries[qid], planted.qrels[qid], qid).trace_records()
    two = agent.run(planted.queries[qid], planted.qrels[qid], qid).trace_records()
    assert strip(one) == strip(two)


# -- aggregate against a brute-force sort ------------------------------------------

ids = [f"d{i:02d}" for i in range(15)]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(ids), unique=True, max_size=10),
       st.lists(st.sampled_from(ids), unique=True, max_size=10),
       st.dictionaries(st.sampled_from(ids), st.sampled_from([0.0, 1.0, 2.0, 2.5]), min_size=15),
       st.integers(1, 12))
def test_aggregate_matches_brute_force(prev_ids, new_ids, table, k_agg):
    corpus = Corpus([Document(d, "x") for d in ids])
    cache = ScoreCache(RecordingScorer(table), "q0", corpus)
    prev = [ScoredDoc(d, table[d], Source.SPARSE) for d in prev_ids]
    cache.values.update({d: table[d] for d in prev_ids})
    new = [ScoredDoc(d, -1.0, Source.DENSE) for d in new_ids]
    agg, fresh = aggregate(prev, new, cache, k_agg)
    union = set(prev_ids) | set(new_ids)
    assert [d.doc_id for d in agg] == sorted(union, key=lambda d: (-table[d], d))[:k_agg]
    assert [d.score for d in agg] == [table[d.doc_id] for d in agg]
    assert set(fresh) == set(new_ids) - set(prev_ids)
    assert set(getattr(cache.scorer, "scored_", [])) == set(fresh)


def test_aggregate_examples():
    corpus = Corpus([Document(d, "x") for d in "abc"])
    scorer = RecordingScorer({"a": 1.0, "b": 3.0, "c": 2.0})
    cache = ScoreCache(scorer, "q", corpus)
    new = [ScoredDoc(d, 0.0, Source.SPARSE) for d in "abc"]
    agg, _ = aggregate([], new, cache, 10)
    assert [d.doc_id for d in agg] == ["b", "c", "a"]
    again, fresh = aggregate(agg, new[:2], cache, 10)
    assert again == agg and fresh == [] and len(scorer.scored_) == 3

