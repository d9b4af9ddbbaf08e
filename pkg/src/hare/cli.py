"""Command line interface: ``hare <subcommand> [flags]``.

Flags may also come from a ``key=value`` config file given with ``--config``;
flags on the command line take precedence.  ``HARE_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

from .bm25 import BM25Index
from .corpus import Corpus, read_queries
from .dense import DenseIndex, FeatureHashEmbedder, PrecomputedEmbedder
from .environment import RetrievalEnvironment, depth_sweep, write_sweep
from .evaluation import (
    EvalReport,
    depth_buckets,
    evaluate_run,
    load_qrels,
    load_run,
    outcome_analysis,
    write_run,
)
from .expanders import ExternalExpander, NullExpander, RM3Expander, RocchioExpander, rocchio_session
from .protocol import ModelClient
from .query import parse_query, parse_refinement
from .scoring import ExternalScorer, LexicalScorer, OracleScorer, build_rerank_lists
from .session import SearchAgent, original_depths

logger = logging.getLogger("hare")

PRESETS = {"ht": 20, "hq": 100}
WIRING_FOR_ENV = {"bm25": "bm25", "dense": "dense", "hybrid": "hare"}


class CLIError(Exception):
    """Configuration or input problem reported with exit status 1."""


# -- config -------------------------------------------------------------------

def read_config(path) -> dict:
    config = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CLIError(f"{path}:{lineno}: expected key=value")
            config[key.strip().replace("-", "_")] = value.strip()
    return config


# -- parser -------------------------------------------------------------------

def _common(p, *names):
    adders = {
        "corpus": lambda: p.add_argument("--corpus", help="BEIR-style corpus.jsonl"),
        "queries": lambda: p.add_argument("--queries", help="queries.jsonl or qid<TAB>text file"),
        "qrels": lambda: p.add_argument("--qrels", help="TREC qrels file"),
        "index_dir": lambda: p.add_argument("--index-dir", help="index directory"),
        "env": lambda: p.add_argument("--env", choices=sorted(WIRING_FOR_ENV), default="hybrid"),
        "k": lambda: p.add_argument("--k", type=int, default=10, help="retrieval depth per retriever"),
        "scorer": lambda: p.add_argument("--scorer", choices=["lexical", "oracle", "external"], default="lexical"),
        "model": lambda: (
            p.add_argument("--model-cmd", help="command of an external model speaking the JSON-lines protocol"),
            p.add_argument("--model-addr", help="host:port of an external model server"),
        ),
        "seed": lambda: p.add_argument("--seed", type=int, default=0),
        "out": lambda: p.add_argument("--out", help="output path"),
        "session": lambda: (
            p.add_argument("--k-agg", type=int, default=10, help="size of the aggregated result list"),
            p.add_argument("--max-steps", type=int, default=5),
            p.add_argument("--top-k", type=int, default=1000, help="size of the frozen dense sub-collection"),
        ),
    }
    for name in names:
        adders[name]()


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="hare", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["index"] = sub.add_parser("index", help="build and persist the BM25 and dense indexes")
    _common(p, "corpus", "index_dir")
    p.add_argument("--embeddings", help="precomputed embeddings JSON-lines (default: feature hashing)")
    p.add_argument("--dim", type=int, default=256, help="feature hashing dimension")
    p.add_argument("--k1", type=float, default=0.9)
    p.add_argument("--b", type=float, default=0.4)

    p = subs["search"] = sub.add_parser("search", help="run one query and print the ranking")
    _common(p, "index_dir", "env", "k", "scorer", "model", "queries", "qrels")
    p.add_argument("query", help="query text; +w, -w and w^i operators are honoured")
    p.add_argument("--no-rerank", action="store_true", help="print retriever order without reranking")

    p = subs["session"] = sub.add_parser("session", help="run agent sessions over a query file")
    _common(p, "index_dir", "queries", "qrels", "env", "k", "scorer", "model", "seed", "out", "session")
    p.add_argument("--expander", choices=["rocchio", "rm3", "external", "none"], default="rm3")
    p.add_argument("--M", type=int, default=100, help="rocchio candidates per operator")
    p.add_argument("--lam", type=float, default=0.5, help="RM3 interpolation weight")
    p.add_argument("--boost-grid", default="2,4,6,8", help="rocchio boost factors")

    p = subs["rocchio"] = sub.add_parser("rocchio", help="generate behavioural-cloning data with the oracle")
    _common(p, "index_dir", "queries", "qrels", "env", "k", "scorer", "model", "seed", "out", "session")
    p.add_argument("--preset", choices=sorted(PRESETS), default="hq", help="ht: M=20, hq: M=100")
    p.add_argument("--M", type=int, help="override the preset's candidate budget")
    p.add_argument("--boost-grid", default="2,4,6,8")

    p = subs["eval"] = sub.add_parser("eval", help="score a TREC run against qrels")
    _common(p, "qrels", "out")
    p.add_argument("--run", help="TREC run file")
    p.add_argument("--gain", choices=["exponential", "linear"], default="exponential")

    p = subs["sweep"] = sub.add_parser("sweep", help="nDCG@10 as a function of reranking depth")
    _common(p, "index_dir", "queries", "qrels", "env", "scorer", "model", "out")
    p.add_argument("--depths", default="10,20,50,100,200")

    p = subs["analyze"] = sub.add_parser("analyze", help="depth buckets and outcome categories from traces")
    _common(p, "index_dir", "out")
    p.add_argument("--traces", help="traces.jsonl written by `session` or `rocchio`")

    p = subs["rerank-lists"] = sub.add_parser("rerank-lists", help="build listwise reranker training lists")
    _common(p, "index_dir", "queries", "qrels", "seed", "out")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--m", type=int, default=32)

    p = subs["make-planted"] = sub.add_parser("make-planted", help="write a synthetic planted collection")
    _common(p, "seed", "out")
    p.add_argument("--n-queries", type=int, default=50)

    return parser, subs


# -- helpers ------------------------------------------------------------------

def _need(args, *names):
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise CLIError(f"--{name.replace('_', '-')} is required for `{args.command}`")


def _out_dir(args) -> Path:
    _need(args, "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _client(args):
    if getattr(args, "model_cmd", None):
        return ModelClient(command=args.model_cmd)
    if getattr(args, "model_addr", None):
        return ModelClient(address=args.model_addr)
    raise CLIError("an external model needs --model-cmd or --model-addr")


def _load_env(args, client=None) -> RetrievalEnvironment:
    _need(args, "index_dir")
    index_dir = Path(args.index_dir)
    if not (index_dir / "bm25.json").exists():
        raise CLIError(f"no index in {index_dir} (run `hare index` first)")
    bm25 = BM25Index.load(index_dir / "bm25.json")
    dense = DenseIndex.load(index_dir)
    env = RetrievalEnvironment.from_indexes(bm25, dense, kind=getattr(args, "env", "hybrid"),
                                            k=getattr(args, "k", 10))
    scorer = getattr(args, "scorer", "lexical")
    if scorer == "lexical":
        env.scorer = LexicalScorer(bm25)
    elif scorer == "oracle":
        _need(args, "qrels", "queries")
        env.scorer = OracleScorer(load_qrels(args.qrels), read_queries(args.queries))
    else:
        env.scorer = ExternalScorer(client or _client(args))
    return env


def _write_lines(path, lines) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def _boosts(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise CLIError(f"bad boost grid {text!r}") from None


def _session_report(results, qrels) -> EvalReport:
    report = EvalReport()
    latency: dict = {}
    counts: Counter = Counter()
    for qid, res in sorted(results.items()):
        report.docs_reranked[qid] = res.docs_reranked
        for step in res.trace:
            for name, ms in step.timings.items():
                latency[name] = latency.get(name, 0.0) + ms
                counts[name] += 1
        gains = qrels.get(qid)
        if gains and any(g > 0 for g in gains.values()):
            report.per_query[qid] = res.ndcgs[-1]
        elif qrels:
            report.excluded.append(qid)
    report.step_latency_ms = {name: latency[name] / counts[name] for name in sorted(latency)}
    traces = [res.ndcgs for qid, res in sorted(results.items()) if qid in report.per_query]
    if traces:
        report.outcomes = outcome_analysis(traces)
    return report


# -- subcommands --------------------------------------------------------------

def cmd_index(args) -> None:
    _need(args, "corpus", "index_dir")
    corpus = Corpus.from_jsonl(args.corpus)
    index_dir = Path(args.index_dir)
    index_dir.mkdir(parents=True, exist_ok=True)
    bm25 = BM25Index(k1=args.k1, b=args.b).fit(corpus)
    bm25.save(index_dir / "bm25.json")
    embedder = PrecomputedEmbedder.from_jsonl(args.embeddings) if args.embeddings else FeatureHashEmbedder(args.dim)
    DenseIndex(embedder=embedder).fit(corpus).save(index_dir)
    print(f"indexed {len(corpus)} documents, {len(bm25.postings_)} terms -> {index_dir}")


def cmd_search(args) -> None:
    env = _load_env(args)
    query = parse_query(args.query)
    hits = env.retrieve(query) if args.no_rerank else env.search(query)
    for rank, hit in enumerate(hits, 1):
        print(f"{rank}\t{hit.doc_id}\t{hit.score:.6f}")


def _expander(args, client):
    if args.expander == "rocchio":
        return RocchioExpander(M=args.M, boost_factors=_boosts(args.boost_grid))
    if args.expander == "rm3":
        return RM3Expander(lam=args.lam)
    if args.expander == "external":
        return ExternalExpander(client)
    return NullExpander()


def cmd_session(args) -> None:
    _need(args, "queries")
    client = _client(args) if args.expander == "external" or args.scorer == "external" else None
    try:
        env = _load_env(args, client)
        queries = read_queries(args.queries)
        qrels = load_qrels(args.qrels) if args.qrels else {}
        if args.expander == "rocchio" and not qrels:
            raise CLIError("the rocchio expander needs --qrels")
        agent = SearchAgent(env, _expander(args, client), wiring=WIRING_FOR_ENV[args.env], k=args.k,
                            k_agg=args.k_agg, max_steps=args.max_steps, top_k=args.top_k).fit()
        results = agent.run_many(queries, qrels)
    finally:
        if client is not None:
            client.close()
    out = _out_dir(args)
    _write_lines(out / "traces.jsonl", (json.dumps(r, ensure_ascii=False)
                                         for qid in sorted(results) for r in results[qid].trace_records()))
    write_run({qid: [(d.doc_id, d.score) for d in res.aggregate] for qid, res in results.items()},
              out / "run.trec", tag=f"hare-{args.env}-{args.expander}")
    report = _session_report(results, qrels)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_text())


def cmd_rocchio(args) -> None:
    _need(args, "queries", "qrels")
    M = args.M if args.M is not None else PRESETS[args.preset]
    client = _client(args) if args.scorer == "external" else None
    try:
        env = _load_env(args, client)
        queries = read_queries(args.queries)
        qrels = load_qrels(args.qrels)
        agent = SearchAgent(env, wiring=WIRING_FOR_ENV[args.env], k=args.k, k_agg=args.k_agg,
                            max_steps=args.max_steps, top_k=args.top_k).fit()
        results = {}
        for qid in sorted(queries):
            gains = qrels.get(qid)
            if not gains or not any(g > 0 for g in gains.values()):
                logger.warning("query %s has no relevant documents; skipped", qid)
                continue
            results[qid] = rocchio_session(agent, queries[qid], gains, M=M, max_steps=args.max_steps,
                                           query_id=qid, boost_factors=_boosts(args.boost_grid))
    finally:
        if client is not None:
            client.close()
    out = _out_dir(args)
    examples = [ex for qid in sorted(results) for ex in results[qid].examples]
    _write_lines(out / "bc.jsonl", (ex.to_json() for ex in examples))
    _write_lines(out / "traces.jsonl", (json.dumps(r, ensure_ascii=False) for qid in sorted(results)
                                         for r in results[qid].session.trace_records()))
    write_run({qid: [(d.doc_id, d.score) for d in r.session.aggregate] for qid, r in results.items()},
              out / "run.trec", tag=f"rocchio-{args.preset if args.M is None else M}")
    ops = Counter(parse_refinement(ex.target).op.value for ex in examples)
    n = len(results)
    summary = {
        "M": M,
        "queries": n,
        "improved_queries": sum(r.improved for r in results.values()),
        "improved_fraction": (sum(r.improved for r in results.values()) / n) if n else 0.0,
        "examples": len(examples),
        "mean_initial_ndcg10": (sum(r.initial_ndcg for r in results.values()) / n) if n else 0.0,
        "mean_final_ndcg10": (sum(r.final_ndcg for r in results.values()) / n) if n else 0.0,
        "operator_usage": {op: ops[op] / len(examples) for op in sorted(ops)} if examples else {},
        "mean_docs_reranked": (sum(r.session.docs_reranked for r in results.values()) / n) if n else 0.0,
    }
    (out / "headroom.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(summary, indent=2, sort_keys=True))


def cmd_eval(args) -> None:
    _need(args, "run", "qrels")
    qrels = load_qrels(args.qrels)
    per_query, skipped = evaluate_run(load_run(args.run), qrels, 10, args.gain)
    report = EvalReport(per_query=per_query, excluded=skipped)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_text())


def cmd_sweep(args) -> None:
    _need(args, "queries", "qrels", "out")
    try:
        depths = [int(x) for x in args.depths.split(",") if x.strip()]
    except ValueError:
        raise CLIError(f"bad depth list {args.depths!r}") from None
    env = _load_env(args)
    rows, excluded = depth_sweep(env, read_queries(args.queries), load_qrels(args.qrels), depths)
    write_sweep(rows, args.out)
    for row in rows:
        print(f"k={row.k}\tnDCG@10={row.mean_ndcg10:.4f}\tqueries={row.num_queries}")
    if excluded:
        print(f"excluded {len(excluded)} queries without qrels")


def cmd_analyze(args) -> None:
    _need(args, "traces")
    sessions: dict = {}
    with open(args.traces, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise CLIError(f"{args.traces}:{lineno}: invalid JSON") from None
            sessions.setdefault(rec.get("query_id", ""), []).append(rec)
    report = EvalReport()
    ndcg_traces = [[s["ndcg10"] for s in steps] for steps in sessions.values() if all("ndcg10" in s for s in steps)]
    if ndcg_traces:
        report.outcomes = outcome_analysis(ndcg_traces)
    if args.index_dir:
        env = _load_env(argparse.Namespace(index_dir=args.index_dir, env="hybrid", k=10, scorer="lexical"))
        depths = {"bm25": [], "dense": []}
        for steps in sessions.values():
            final = steps[-1]["aggregate_ids"][:10]
            for info in original_depths(env, steps[0]["query"], final).values():
                depths["bm25"].append(info["bm25"])
                depths["dense"].append(info["dense"])
        report.depth_histograms = {src: depth_buckets(vals) for src, vals in depths.items()}
    payload = {"outcomes": report.outcomes, "depth_histograms": report.depth_histograms,
               "sessions": len(sessions)}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(report.to_text())


def cmd_rerank_lists(args) -> None:
    _need(args, "index_dir", "queries", "qrels", "out")
    bm25 = BM25Index.load(Path(args.index_dir) / "bm25.json")
    lists, stats = build_rerank_lists(bm25, read_queries(args.queries), load_qrels(args.qrels),
                                      k=args.k, m=args.m, seed=args.seed)
    _write_lines(args.out, (json.dumps(rl.to_dict(), ensure_ascii=False) for rl in lists))
    print(f"queries={stats.queries} lists={stats.emitted} skipped={stats.skipped_no_gold} "
          f"({stats.skipped_fraction:.1%}) short={stats.short_lists}")


def cmd_make_planted(args) -> None:
    from .datasets import make_planted_corpus

    _need(args, "out")
    paths = make_planted_corpus(n_queries=args.n_queries, seed=args.seed).write(args.out)
    for name, path in paths.items():
        print(f"{name}\t{path}")


COMMANDS = {
    "index": cmd_index, "search": cmd_search, "session": cmd_session, "rocchio": cmd_rocchio,
    "eval": cmd_eval, "sweep": cmd_sweep, "analyze": cmd_analyze, "rerank-lists": cmd_rerank_lists,
    "make-planted": cmd_make_planted,
}


def run_command(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    level = os.environ.get("HARE_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        print(f"hare: error: HARE_LOG={level!r} is not a log level", file=sys.stderr)
        return 1
    logger.setLevel(level)
    parser, subs = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre, _ = parser.parse_known_args(argv) if "--config" in argv else (None, None)
    try:
        if pre is not None and pre.config:
            config = read_config(pre.config)
            for sp in subs.values():
                known = {a.dest for a in sp._actions}
                sp.set_defaults(**{k: v for k, v in config.items() if k in known})
            all_known = {a.dest for sp in subs.values() for a in sp._actions}
            unknown = sorted(set(config) - all_known)
            if unknown:
                raise CLIError(f"unknown config keys: {', '.join(unknown)}")
    except (CLIError, OSError) as exc:
        print(f"hare: error: {exc}", file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: usage errors are status 2, --help is 0
        return int(exc.code or 0)
    _coerce(args, subs[args.command])
    try:
        COMMANDS[args.command](args)
    except (CLIError, OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"hare: error: {exc}", file=sys.stderr)
        return 1
    return 0


def _coerce(args, subparser) -> None:
    # config-file defaults arrive as strings; apply each action's type
    for action in subparser._actions:
        value = getattr(args, action.dest, None)
        if isinstance(value, str) and action.type not in (None, str):
            setattr(args, action.dest, action.type(value))
        elif isinstance(value, str) and isinstance(action, argparse._StoreTrueAction):
            setattr(args, action.dest, value.lower() in ("1", "true", "yes"))


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
