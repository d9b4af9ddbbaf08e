"""nDCG@k, TREC qrels/run files, and session analyses."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

Qrels = dict  # qid -> {doc_id: gain}

GAINS = {
    "exponential": lambda g: 2.0 ** g - 1.0,
    "linear": float,  # trec_eval's ndcg_cut
}


def dcg(gains: Sequence[float], k: int, gain: str = "exponential") -> float:
    transform = GAINS[gain]
    return sum(transform(g) / math.log2(i + 2) for i, g in enumerate(gains[:k]))


def ndcg_at_k(ranking: Sequence[str], gains: Mapping[str, float], k: int = 10,
              gain: str = "exponential") -> float:
    """nDCG@k of a ranked list of doc ids; unjudged documents have gain 0.

    ``gain="exponential"`` uses ``2**g - 1``; ``gain="linear"`` uses ``g``, which
    is what trec_eval's ``ndcg_cut`` computes.  The two agree on binary judgments.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ideal = dcg(sorted((g for g in gains.values() if g > 0), reverse=True), k, gain)
    if ideal <= 0:
        return 0.0
    return dcg([gains.get(d, 0) for d in ranking], k, gain) / ideal


# -- TREC files -------------------------------------------------------------

def load_qrels(path) -> Qrels:
    """Read ``qid 0 docid gain`` lines, or BEIR ``query-id corpus-id score`` TSV."""
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if lineno == 1 and parts[0] in ("query-id", "qid", "query_id"):
                continue
            try:
                if len(parts) == 4:
                    qid, _, doc_id, gain = parts
                elif len(parts) == 3:
                    qid, doc_id, gain = parts
                else:
                    raise ValueError
                gain = int(gain)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed qrels line {line.rstrip()!r}") from None
            if gain < 0:
                raise ValueError(f"{path}:{lineno}: negative gain")
            qrels.setdefault(qid, {})[doc_id] = gain
    return qrels


def write_qrels(qrels: Mapping[str, Mapping[str, int]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(qrels):
            for doc_id in sorted(qrels[qid]):
                fh.write(f"{qid} 0 {doc_id} {qrels[qid][doc_id]}\n")


def write_run(run: Mapping[str, Sequence[tuple[str, float]]], path, tag: str = "hare") -> None:
    """Write ``qid Q0 docid rank score tag`` lines; entries are re-sorted by score."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(run):
            ranked = sorted(run[qid], key=lambda e: (-e[1], e[0]))
            for rank, (doc_id, score) in enumerate(ranked, 1):
                fh.write(f"{qid} Q0 {doc_id} {rank} {score!r} {tag}\n")


def load_run(path) -> dict[str, list[tuple[str, float]]]:
    run: dict[str, list[tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                qid, _, doc_id, rank, score, _tag = parts
                int(rank)
                score = float(score)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed run line {line.rstrip()!r}") from None
            run.setdefault(qid, []).append((doc_id, score))
    for qid in run:
        run[qid].sort(key=lambda e: (-e[1], e[0]))
    return run


def evaluate_run(run: Mapping[str, Sequence[tuple[str, float]]], qrels: Qrels, k: int = 10,
                 gain: str = "exponential") -> tuple[dict[str, float], list[str]]:
    """Per-query nDCG@k over queries judged in ``qrels``; also returns unjudged run qids."""
    per_query = {}
    for qid in sorted(qrels):
        if not any(g > 0 for g in qrels[qid].values()):
            continue
        ranking = [d for d, _ in run.get(qid, [])]
        per_query[qid] = ndcg_at_k(ranking, qrels[qid], k, gain)
    skipped = sorted(q for q in run if q not in per_query)
    return per_query, skipped


# -- analyses ---------------------------------------------------------------

DEFAULT_DEPTH_EDGES = (10, 100, 1000)
NOT_RETRIEVED = "not-retrieved"


def _bucket_labels(edges: Sequence[int]) -> list[str]:
    labels, lo = [], 1
    for hi in edges:
        labels.append(f"{lo}-{hi}")
        lo = hi + 1
    labels.append(f">{edges[-1]}")
    return labels


def depth_buckets(depths: Iterable[Optional[int]], edges: Sequence[int] = DEFAULT_DEPTH_EDGES) -> dict:
    """Histogram of original retrieval depths (1-based; None = not retrieved).

    Returns ``{"counts": {...}, "fractions": {...}, "total": n}`` with buckets
    ``1-10, 11-100, 101-1000, >1000`` for the default edges.
    """
    labels = _bucket_labels(edges)
    counts = Counter({label: 0 for label in labels + [NOT_RETRIEVED]})
    total = 0
    for depth in depths:
        total += 1
        if depth is None:
            counts[NOT_RETRIEVED] += 1
            continue
        for label, hi in zip(labels, edges):
            if depth <= hi:
                counts[label] += 1
                break
        else:
            counts[labels[-1]] += 1
    order = labels + [NOT_RETRIEVED]
    return {
        "counts": {label: counts[label] for label in order},
        "fractions": {label: (counts[label] / total if total else 0.0) for label in order},
        "total": total,
    }


SOLVED_AT_Q0 = "solved-at-q0"
UNCHANGED = "unchanged"
WORSE = "worse"


def classify_outcome(ndcgs: Sequence[float], tol: float = 1e-12) -> str:
    """Outcome of one session from its per-step nDCG@10 (index 0 = initial query)."""
    if not ndcgs:
        raise ValueError("empty nDCG trace")
    initial, final = ndcgs[0], ndcgs[-1]
    if initial >= 1.0 - tol:
        return SOLVED_AT_Q0
    if final > initial + tol:
        step = next(i for i, v in enumerate(ndcgs) if v >= final - tol)
        return f"improved-at-step-{step}"
    if final < initial - tol:
        return WORSE
    return UNCHANGED


def outcome_analysis(traces: Iterable[Sequence[float]]) -> dict:
    counts = Counter(classify_outcome(t) for t in traces)
    total = sum(counts.values())

    def key(label):
        fixed = {SOLVED_AT_Q0: (0, 0), UNCHANGED: (2, 0), WORSE: (3, 0)}
        return fixed.get(label) or (1, int(label.rsplit("-", 1)[1]))

    ordered = sorted(counts, key=key)
    return {
        "counts": {c: counts[c] for c in ordered},
        "fractions": {c: counts[c] / total for c in ordered},
        "total": total,
    }


@dataclass
class EvalReport:
    per_query: dict = field(default_factory=dict)
    docs_reranked: dict = field(default_factory=dict)
    step_latency_ms: dict = field(default_factory=dict)
    depth_histograms: dict = field(default_factory=dict)
    outcomes: dict = field(default_factory=dict)
    excluded: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        vals = list(self.per_query.values())
        return sum(vals) / len(vals) if vals else 0.0

    @property
    def mean_docs_reranked(self) -> Optional[float]:
        vals = list(self.docs_reranked.values())
        return sum(vals) / len(vals) if vals else None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mean_ndcg10"] = self.mean
        out["num_queries"] = len(self.per_query)
        out["mean_docs_reranked"] = self.mean_docs_reranked
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = []
        if self.per_query or self.excluded or not (self.depth_histograms or self.outcomes):
            lines += [f"queries      {len(self.per_query)}", f"nDCG@10      {self.mean:.4f}"]
        if self.excluded:
            lines.append(f"excluded     {len(self.excluded)} (no qrels)")
        if self.docs_reranked:
            lines.append(f"docs scored  {self.mean_docs_reranked:.1f}")
        for name, ms in self.step_latency_ms.items():
            lines.append(f"latency {name:<20} {ms:.2f} ms")
        for source, hist in self.depth_histograms.items():
            cells = "  ".join(f"{b}:{f:.3f}" for b, f in hist["fractions"].items())
            lines.append(f"depth[{source}]  {cells}")
        if self.outcomes:
            cells = "  ".join(f"{c}:{n}" for c, n in self.outcomes["counts"].items())
            lines.append(f"outcomes     {cells}")
        return "\n".join(lines)
