import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hare.bm25 import BM25Index
from hare.corpus import Corpus, Document, ScoredDoc, Source
from hare.dense import DenseIndex, PrecomputedEmbedder
from hare.environment import (
    RetrievalEnvironment,
    SweepRow,
    depth_sweep,
    evaluate_environment,
    hybrid_join,
    rerank,
    retrieve,
    sweep_csv,
)
from hare.query import Op, Refinement, StructuredQuery
from hare.scoring import LexicalScorer, OracleScorer, Scorer, ScorerError

from conftest import planted_env


def _docs(ids, source=Source.SPARSE):
    return [ScoredDoc(d, 0.0, source, i) for i, d in enumerate(ids, 1)]


def test_hybrid_join_examples():
    a = _docs([f"a{i}" for i in range(10)])
    b = _docs([f"b{i}" for i in range(10)], Source.DENSE)
    assert len(hybrid_join(a, b)) == 20
    assert hybrid_join(a, a) == a
    assert hybrid_join([], b) == b


def test_hybrid_join_keeps_first_occurrence():
    a = _docs(["x", "y"])
    b = _docs(["y", "z"], Source.DENSE)
    joined = hybrid_join(a, b)
    assert [d.doc_id for d in joined] == ["x", "y", "z"]
    assert joined[1].source is Source.SPARSE and joined[1].original_depth == 2


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abcdefgh"), unique=True), st.lists(st.sampled_from("abcdefgh"), unique=True))
def test_hybrid_join_is_a_union(a, b):
    joined = [d.doc_id for d in hybrid_join(_docs(a), _docs(b, Source.DENSE))]
    assert sorted(joined) == sorted(set(a) | set(b))
    assert len(joined) <= len(a) + len(b)


class _TableScorer(Scorer):
    def __init__(self, table=None):
        self.table = table

    def score(self, query, document):
        return self.table[document.doc_id]


def test_rerank_orders_by_score_then_id():
    corpus = Corpus([Document(d, "x") for d in "abcde"])
    scorer = _TableScorer({"a": 1.0, "b": 3.0, "c": 3.0, "d": -1.0, "e": 2.0})
    out = rerank(scorer, "q", _docs(list("edcba")), corpus)
    assert [d.doc_id for d in out] == ["b", "c", "e", "a", "d"]
    assert rerank(scorer, "q", _docs(["a"]), corpus)[0].doc_id == "a"


def test_rerank_with_lexical_scorer_matches_brute_force():
    corpus = Corpus([Document(f"d{i}", t) for i, t in enumerate(
        ["red fox", "red red dog", "blue fox fox", "green", "red blue fox dog"])])
    index = BM25Index().fit(corpus)
    scorer = LexicalScorer(index)
    out = rerank(scorer, "red fox", _docs(corpus.ids), corpus)
    scores = {d: index.score_document(["red", "fox"], corpus[d].tokens) for d in corpus}
    assert [d.doc_id for d in out] == sorted(scores, key=lambda d: (-scores[d], d))
    assert sorted(d.doc_id for d in out) == sorted(corpus.ids)


def test_rerank_error_names_document():
    corpus = Corpus([Document("ok", "x"), Document("bad", "y")])
    with pytest.raises(ScorerError) as err:
        rerank(_TableScorer({"ok": 1.0}), "q", _docs(["ok", "bad"]), corpus)
    assert err.value.doc_id == "bad"


def test_oracle_rerank_puts_relevant_first(planted, planted_envs):
    env = planted_envs["hybrid"]
    for qid in list(planted.queries)[:10]:
        gains = planted.qrels[qid]
        ranked = env.search(planted.queries[qid])
        flags = [gains.get(d.doc_id, 0) > 0 for d in ranked]
        assert flags == sorted(flags, reverse=True)


def _two_sided_env():
    corpus = Corpus([Document(f"s{i}", "alpha") for i in range(3)] + [Document(f"v{i}", "omega") for i in range(3)])
    vectors = {d: np.array([0.0, 1.0]) if d.startswith("v") else np.array([1.0, 0.0]) for d in corpus}
    vectors["alpha"] = np.array([0.0, 1.0])
    vectors["alpha +omega"] = np.array([0.0, 1.0])
    return RetrievalEnvironment.from_indexes(
        BM25Index().fit(corpus), DenseIndex(PrecomputedEmbedder(vectors)).fit(corpus), kind="hybrid", k=3)


def test_retrieve_dispatch():
    env = _two_sided_env()
    q = StructuredQuery("alpha")
    hybrid = env.retrieve(q)
    assert len(hybrid) == 6
    env.set_params(kind="bm25")
    assert env.retrieve(q) == env.bm25_.search(q, 3)
    env.set_params(kind="dense")
    assert [d.doc_id for d in retrieve(env, q, 3)] == ["v0", "v1", "v2"]


def test_dense_side_ignores_operators():
    env = _two_sided_env().set_params(kind="dense")
    q = StructuredQuery("alpha", (Refinement(Op.PLUS, "omega"),))
    # the dense query is the rendered text; no clause filters it
    assert [d.doc_id for d in env.retrieve(q)] == ["v0", "v1", "v2"]


def test_environment_fit_end_to_end(tiny_corpus):
    env = RetrievalEnvironment(kind="bm25", k=3).fit(tiny_corpus)
    assert [d.doc_id for d in env.search("a")] == ["d2", "d1"]
    assert env.get_params()["k"] == 3


def test_depth_sweep_oracle_is_monotone(planted, planted_envs):
    for kind in ("bm25", "dense", "hybrid"):
        rows, excluded = depth_sweep(planted_envs[kind], planted.queries, planted.qrels, [5, 10, 20, 40])
        means = [r.mean_ndcg10 for r in rows]
        assert means == sorted(means), kind
        assert excluded == []


def test_depth_sweep_full_pool_scores_one(planted, planted_indexes):
    env = planted_env(planted, planted_indexes, "dense")
    rows, _ = depth_sweep(env, planted.queries, planted.qrels, [len(planted.corpus)])
    assert rows[0].mean_ndcg10 == pytest.approx(1.0)


def test_depth_sweep_excludes_unjudged(planted, planted_envs):
    queries = dict(planted.queries, extra="nothing judged here")
    rows, excluded = depth_sweep(planted_envs["bm25"], queries, planted.qrels, [10])
    assert excluded == ["extra"]
    assert rows[0].num_queries == len(planted.queries)


def test_sweep_csv_format():
    text = sweep_csv([SweepRow(10, 0.5, 3), SweepRow(20, 0.75, 3)])
    assert text == "k,mean_ndcg10,num_queries\n10,0.5,3\n20,0.75,3\n"


def test_hybrid_dominates_under_oracle(planted, planted_envs):
    scores = {kind: evaluate_environment(env, planted.queries, planted.qrels)[0]
              for kind, env in planted_envs.items()}
    for qid in planted.queries:
        assert scores["hybrid"][qid] >= max(scores["bm25"][qid], scores["dense"][qid]) - 1e-12


def test_oracle_scorer_lookup():
    scorer = OracleScorer({"q1": {"d7": 2}}, {"q1": "some text"})
    assert scorer.score("some text", Document("d7", "x")) == 2.0
    assert scorer.score("some text", Document("d8", "x")) == 0.0
    assert scorer.score("other", Document("d7", "x")) == 0.0
