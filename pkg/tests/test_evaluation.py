import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hare.bm25 import BM25Index
from hare.corpus import Corpus, Document
from hare.dense import DenseIndex, FeatureHashEmbedder
from hare.environment import RetrievalEnvironment
from hare.evaluation import (
    EvalReport,
    classify_outcome,
    depth_buckets,
    evaluate_run,
    load_qrels,
    load_run,
    ndcg_at_k,
    outcome_analysis,
    write_qrels,
    write_run,
)
from hare.query import Op, Refinement
from hare.scoring import OracleScorer
from hare.session import SearchAgent, original_depths

# Five-query fixture scored once with pytrec_eval (trec_eval's ndcg_cut_10) and frozen here.
TREC_QRELS = {
    "q1": {"d1": 1, "d2": 2, "d3": 0},
    "q2": {"d5": 1},
    "q3": {"d1": 3, "d4": 1, "d9": 2},
    "q4": {"d2": 1, "d3": 1},
    "q5": {"d7": 2, "d8": 0},
}
TREC_RUN = {
    "q1": {"d1": 3.0, "d3": 2.0, "d2": 1.0, "d4": 0.5},
    "q2": {"d1": 5, "d2": 4, "d3": 3, "d4": 2, "d5": 1},
    "q3": {"d9": 9, "d8": 8, "d1": 7, "d2": 6, "d3": 5, "d4": 4, "d5": 3, "d6": 2, "d7": 1.5, "d10": 1.2,
           "d11": 1.1},
    "q4": {"d2": 2, "d3": 1},
    "q5": {"d1": 3, "d8": 2},
}
TREC_NDCG_CUT_10 = {
    "q1": 0.7601875334318685,
    "q2": 0.38685280723454163,
    "q3": 0.8098112053334646,
    "q4": 1.0,
    "q5": 0.0,
}


def definition_dcg(order, gains, k=10):
    return sum((2 ** gains.get(d, 0) - 1) / math.log2(i + 2) for i, d in enumerate(order[:k]))


def exhaustive_idcg(gains, k=10):
    """Best DCG over every ordering of the judged documents."""
    return max((definition_dcg(list(p), gains, k) for p in itertools.permutations(gains)), default=0.0)


def exhaustive_ndcg(ranking, gains, k=10, ideal=None):
    ideal = exhaustive_idcg(gains, k) if ideal is None else ideal
    return definition_dcg(ranking, gains, k) / ideal if ideal > 0 else 0.0


def test_ndcg_examples():
    assert ndcg_at_k(["r", "x"], {"r": 1}) == 1.0
    assert ndcg_at_k(["x", "r"], {"r": 1}) == pytest.approx(0.6309297535714575, abs=1e-12)
    assert ndcg_at_k(["x"], {"r": 0}) == 0.0
    assert ndcg_at_k([], {"r": 1}) == 0.0
    with pytest.raises(ValueError):
        ndcg_at_k(["x"], {"x": 1}, k=0)


ids = list("abcde")


@settings(max_examples=300, deadline=None)
@given(st.permutations(ids), st.integers(1, 5), st.dictionaries(st.sampled_from(ids), st.integers(0, 3)),
       st.integers(1, 10))
def test_ndcg_matches_definition(perm, n, gains, k):
    ranking = perm[:n]
    value = ndcg_at_k(ranking, gains, k)
    assert value == pytest.approx(exhaustive_ndcg(ranking, gains, k), abs=1e-9)
    assert 0.0 <= value <= 1.0 + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.permutations(ids), st.dictionaries(st.sampled_from(ids), st.integers(0, 3)))
def test_oracle_order_is_optimal(perm, gains):
    best = sorted(perm, key=lambda d: (-gains.get(d, 0), d))
    top = ndcg_at_k(best, gains)
    for p in itertools.permutations(perm):
        assert ndcg_at_k(list(p), gains) <= top + 1e-12


def test_irrelevant_tail_permutations_do_not_matter():
    gains = {"a": 2, "b": 1}
    assert ndcg_at_k(["b", "a", "x", "y", "z"], gains) == ndcg_at_k(["b", "a", "z", "x", "y"], gains)


def test_linear_gain_matches_trec_eval_fixture():
    run = {q: sorted(docs.items(), key=lambda e: -e[1]) for q, docs in TREC_RUN.items()}
    per_query, skipped = evaluate_run(run, TREC_QRELS, 10, gain="linear")
    assert skipped == []
    for qid, expected in TREC_NDCG_CUT_10.items():
        assert per_query[qid] == pytest.approx(expected, abs=1e-4)


def test_exponential_and_linear_agree_on_binary_judgments():
    for qid in ("q2", "q4"):
        ranking = sorted(TREC_RUN[qid], key=lambda d: -TREC_RUN[qid][d])
        assert ndcg_at_k(ranking, TREC_QRELS[qid]) == pytest.approx(TREC_NDCG_CUT_10[qid], abs=1e-12)


def test_live_trec_eval_cross_check():
    pytrec_eval = pytest.importorskip("pytrec_eval")
    evaluator = pytrec_eval.RelevanceEvaluator(TREC_QRELS, {"ndcg_cut_10"})
    live = evaluator.evaluate({q: {d: float(s) for d, s in docs.items()} for q, docs in TREC_RUN.items()})
    for qid in TREC_QRELS:
        assert live[qid]["ndcg_cut_10"] == pytest.approx(TREC_NDCG_CUT_10[qid], abs=1e-12)


def test_qrels_io(tmp_path):
    path = tmp_path / "qrels.txt"
    path.write_text("q1 0 d7 2\nq1 0 d8 0\n\nq2 0 d1 1\n")
    assert load_qrels(path) == {"q1": {"d7": 2, "d8": 0}, "q2": {"d1": 1}}
    out = tmp_path / "again.txt"
    write_qrels(load_qrels(path), out)
    assert load_qrels(out) == load_qrels(path)


def test_beir_qrels_tsv(tmp_path):
    path = tmp_path / "test.tsv"
    path.write_text("query-id\tcorpus-id\tscore\nq1\td1\t1\n")
    assert load_qrels(path) == {"q1": {"d1": 1}}


@pytest.mark.parametrize("body, line", [("q1 0 d7 2\nq1 0 d8 1\nbad\n", 3), ("q1 0 d7 x\n", 1),
                                        ("q1 0 d7 -1\n", 1)])
def test_qrels_errors_carry_line_numbers(tmp_path, body, line):
    path = tmp_path / "qrels.txt"
    path.write_text(body)
    with pytest.raises(ValueError, match=f":{line}:"):
        load_qrels(path)


def test_run_io(tmp_path):
    run = {"q2": [("b", 0.5), ("a", 2.0)], "q1": [("x", 1.0)]}
    path = tmp_path / "run.trec"
    write_run(run, path, tag="t")
    assert path.read_text().splitlines() == ["q1 Q0 x 1 1.0 t", "q2 Q0 a 1 2.0 t", "q2 Q0 b 2 0.5 t"]
    assert load_run(path) == {"q1": [("x", 1.0)], "q2": [("a", 2.0), ("b", 0.5)]}
    (tmp_path / "bad.trec").write_text("q1 Q0 x 1 1.0 t\nq1 Q0 y one 1.0 t\n")
    with pytest.raises(ValueError, match=":2:"):
        load_run(tmp_path / "bad.trec")


def test_evaluate_run_reports_unjudged_queries():
    per_query, skipped = evaluate_run({"q1": [("d1", 1.0)], "zz": [("d1", 1.0)]}, {"q1": {"d1": 1}})
    assert per_query == {"q1": 1.0} and skipped == ["zz"]


def test_depth_buckets():
    hist = depth_buckets([1, 10, 11, 100, 101, 1000, 1001, 1500, None, None])
    assert hist["counts"] == {"1-10": 2, "11-100": 2, "101-1000": 2, ">1000": 2, "not-retrieved": 2}
    assert sum(hist["fractions"].values()) == pytest.approx(1.0)
    assert depth_buckets([1500])["counts"][">1000"] == 1
    top = depth_buckets(range(1, 11))
    assert top["fractions"]["1-10"] == 1.0
    assert depth_buckets([])["total"] == 0


def test_session_pulls_a_deep_document():
    # 1100 short docs crowd "common"; the gold doc is long, so BM25 ranks it last
    docs = [Document(f"c{i:04d}", "common") for i in range(1100)]
    docs.append(Document("gold", "common rareword " + "filler " * 30))
    corpus = Corpus(docs)
    env = RetrievalEnvironment.from_indexes(
        BM25Index().fit(corpus), DenseIndex(FeatureHashEmbedder(16)).fit(corpus), kind="bm25",
        scorer=OracleScorer({"q": {"gold": 1}}, {"q": "common"}))
    agent = SearchAgent(env, wiring="bm25").fit()
    state = agent.start("common", {"gold": 1})
    assert state.ndcg() == 0.0
    state = agent.step(state, Refinement(Op.PLUS, "rareword"))
    assert state.aggregate_ids[0] == "gold" and state.ndcg() == 1.0
    depths = original_depths(env, "common", state.aggregate_ids)
    assert depths["gold"]["bm25"] == 1101
    hist = depth_buckets([d["bm25"] for d in depths.values()])
    assert hist["counts"][">1000"] == 1 and hist["counts"]["1-10"] == len(state.aggregate_ids) - 1


def test_outcome_fixture():
    traces = [[1.0], [0.0, 0.5, 1.0, 1.0], [0.3, 0.3], [0.5, 0.2], [0.2, 0.6, 0.6]]
    result = outcome_analysis(traces)
    assert result["counts"] == {"solved-at-q0": 1, "improved-at-step-1": 1, "improved-at-step-2": 1,
                                "unchanged": 1, "worse": 1}
    assert sum(result["counts"].values()) == result["total"] == 5
    assert classify_outcome([0.0]) == "unchanged"
    with pytest.raises(ValueError):
        classify_outcome([])


def test_report_mean_and_serialization():
    report = EvalReport(per_query={"a": 0.5, "b": 1.0}, docs_reranked={"a": 10, "b": 20})
    assert report.mean == 0.75 and report.mean_docs_reranked == 15
    d = report.to_dict()
    assert d["mean_ndcg10"] == 0.75 and d["num_queries"] == 2
    assert "nDCG@10      0.7500" in report.to_text()
