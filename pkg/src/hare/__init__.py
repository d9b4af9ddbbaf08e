"""Hybrid sparse/dense retrieval environments and query-refinement search agents."""

from .bm25 import BM25Index, bm25_search, build_index
from .corpus import Corpus, Document, ScoredDoc, Source, read_queries
from .dense import DenseIndex, FeatureHashEmbedder, PrecomputedEmbedder, dense_search
from .environment import RetrievalEnvironment, depth_sweep, hybrid_join, rerank
from .evaluation import (
    EvalReport,
    depth_buckets,
    load_qrels,
    load_run,
    ndcg_at_k,
    outcome_analysis,
    write_run,
)
from .expanders import (
    ExternalExpander,
    NullExpander,
    RM3Expander,
    RocchioExpander,
    rocchio_session,
    serialize_observation,
)
from .query import Op, Refinement, StructuredQuery, apply_refinement, parse_query, parse_refinement, tokenize
from .scoring import ExternalScorer, LexicalScorer, OracleScorer, build_rerank_lists, listwise_softmax_ce
from .session import SearchAgent, SessionState, Termination, aggregate

__all__ = [
    "BM25Index",
    "Corpus",
    "DenseIndex",
    "Document",
    "EvalReport",
    "ExternalExpander",
    "ExternalScorer",
    "FeatureHashEmbedder",
    "LexicalScorer",
    "NullExpander",
    "Op",
    "OracleScorer",
    "PrecomputedEmbedder",
    "RM3Expander",
    "Refinement",
    "RetrievalEnvironment",
    "RocchioExpander",
    "ScoredDoc",
    "SearchAgent",
    "SessionState",
    "Source",
    "StructuredQuery",
    "Termination",
    "aggregate",
    "apply_refinement",
    "bm25_search",
    "build_index",
    "build_rerank_lists",
    "dense_search",
    "depth_buckets",
    "depth_sweep",
    "hybrid_join",
    "listwise_softmax_ce",
    "load_qrels",
    "load_run",
    "ndcg_at_k",
    "outcome_analysis",
    "parse_query",
    "parse_refinement",
    "read_queries",
    "rerank",
    "rocchio_session",
    "serialize_observation",
    "tokenize",
    "write_run",
]

__version__ = "0.1.0"
