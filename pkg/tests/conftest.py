import sys
from pathlib import Path

import pytest

from hare.bm25 import BM25Index
from hare.corpus import Corpus, Document
from hare.datasets import make_planted_corpus
from hare.dense import DenseIndex
from hare.environment import RetrievalEnvironment
from hare.scoring import OracleScorer

TESTS = Path(__file__).parent
STUB = str(TESTS / "stub_model.py")
FIXTURES = TESTS / "fixtures"


def stub_command(*args):
    return [sys.executable, STUB, *map(str, args)]


@pytest.fixture
def tiny_corpus():
    return Corpus([Document("d1", "a b"), Document("d2", "a"), Document("d3", "b b b")])


@pytest.fixture
def tiny_index(tiny_corpus):
    return BM25Index().fit(tiny_corpus)


@pytest.fixture(scope="session")
def planted():
    return make_planted_corpus(seed=0)


@pytest.fixture(scope="session")
def planted_indexes(planted):
    return BM25Index().fit(planted.corpus), DenseIndex(planted.embedder).fit(planted.corpus)


def planted_env(planted, planted_indexes, kind="hybrid", k=10):
    bm25, dense = planted_indexes
    scorer = OracleScorer(planted.qrels, planted.queries)
    return RetrievalEnvironment.from_indexes(bm25, dense, kind=kind, k=k, scorer=scorer)


@pytest.fixture(scope="session")
def planted_envs(planted, planted_indexes):
    return {kind: planted_env(planted, planted_indexes, kind) for kind in ("bm25", "dense", "hybrid")}


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
