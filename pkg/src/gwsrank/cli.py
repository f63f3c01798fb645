"""Command-line harness: ``gwsrank <subcommand>``.

Progress goes to stderr; every result is written to files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import gws as gws_mod
from .config import ExperimentConfig
from .corpus import QrelSet, Query, ingest_documents, read_qrels, read_queries
from .errors import ConfigError, ContractError, GwsError
from .evaluation import METRICS, MetricsRecord, RunRanking, evaluate, paired_t_test, per_query_diff
from .gws import GwsContext, GwsReport, IterationRow, Split, bm25_pools
from .index import InvertedIndex, build_index
from .synthetic import SyntheticSpec, gen_synthetic
from .trec import parse_run, write_run

logger = logging.getLogger("gwsrank")

CURVE_HEADER = ["iteration", "model", *METRICS]


def export_iteration_curves(report: GwsReport | dict, path) -> None:
    """Write one CSV row per (iteration, model); iteration 0 is BM25.

    Held-out evaluation metrics are used when every row has them, otherwise
    validation metrics.
    """
    rows = report.rows if isinstance(report, GwsReport) else [IterationRow(**r) for r in report["rows"]]
    if not rows:
        raise ContractError("cannot export curves from an empty report")
    use_eval = all(r.eval_metrics for r in rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for r in rows:
            values = r.eval_metrics if use_eval else r.metrics
            if not values:
                raise ContractError(f"row for iteration {r.iteration} has no metrics")
            writer.writerow([r.iteration, r.model, *(f"{values[m]:.6f}" for m in METRICS)])


def report_to_json(report: GwsReport) -> str:
    payload = {
        "algorithm": report.algorithm,
        "rows": [{k: v for k, v in asdict(r).items() if k not in ("params", "produced")}
                 for r in _plain_rows(report.rows)],
        "runs": [asdict(r) for r in report.runs],
        "selections": [asdict(s) for s in report.selections],
        "best_iteration": report.best_iteration,
    }
    return json.dumps(payload, indent=1, sort_keys=True, allow_nan=True) + "\n"


def _plain_rows(rows):
    return [replace(r, params=None, produced=None) for r in rows]


def _require(path, what):
    if not path:
        raise ConfigError(f"missing {what} path")
    if not Path(path).exists():
        raise ConfigError(f"{what} path does not exist: {path}")
    return path


def _load_index(args, cfg):
    if getattr(args, "index", None):
        return InvertedIndex.load(_require(args.index, "index"))
    return build_index(ingest_documents(_require(cfg.paths.get("corpus"), "corpus")))


def _split_validation(queries: list[Query], fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    n_val = max(1, int(round(fraction * len(queries))))
    if n_val >= len(queries):
        raise ConfigError("too few training queries to carve out a validation split")
    picked = set(rng.choice(len(queries), size=n_val, replace=False).tolist())
    train = [q for i, q in enumerate(queries) if i not in picked]
    val = [q for i, q in enumerate(queries) if i in picked]
    return train, val


def _experiment_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    paths = dict(cfg.paths)
    for key in ("corpus", "queries", "qrels", "validation_queries", "eval_queries"):
        value = getattr(args, key, None)
        if value:
            paths[key] = value
    if getattr(args, "out_dir", None):
        paths["output_dir"] = args.out_dir
    cfg = replace(cfg, paths=paths)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "workers", None) is not None:
        cfg = replace(cfg, workers=args.workers)
    updates = {}
    if getattr(args, "algorithm", None):
        updates["algorithm"] = args.algorithm
    if getattr(args, "no_qpp", False):
        updates["qpp_enabled"] = False
    if getattr(args, "max_iterations", None):
        updates["max_iterations"] = args.max_iterations
    if getattr(args, "relevance_threshold", None):
        updates["relevance_threshold"] = args.relevance_threshold
    if updates:
        cfg = replace(cfg, gws=replace(cfg.gws, **updates))
    return cfg


def run_experiment(cfg: ExperimentConfig, out_dir) -> tuple[list, GwsReport]:
    """Run one GWS experiment and write its artifacts under ``out_dir``."""
    out = Path(out_dir)
    for sub in ("checkpoints", "triplets", "runs"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    paths = cfg.paths
    index = build_index(ingest_documents(_require(paths.get("corpus"), "corpus")))
    queries = read_queries(_require(paths.get("queries"), "queries"))
    qrels = read_qrels(_require(paths.get("qrels"), "qrels")) if paths.get("qrels") else QrelSet({})
    evaluation = None
    if paths.get("eval_queries"):
        evaluation = Split(read_queries(_require(paths["eval_queries"], "evaluation queries")), qrels)
        held_out = {q.query_id for q in evaluation.queries}
        queries = [q for q in queries if q.query_id not in held_out]
    if paths.get("validation_queries"):
        val_queries = read_queries(_require(paths["validation_queries"], "validation queries"))
        val_ids = {q.query_id for q in val_queries}
        train_queries = [q for q in queries if q.query_id not in val_ids]
    else:
        train_queries, val_queries = _split_validation(queries, cfg.validation_fraction, cfg.gws.base_seed)

    cfg.save(out / "config.ini")
    ctx = GwsContext(cfg.gws, index, train_queries, Split(val_queries, qrels), evaluation,
                     bm25=cfg.bm25, opt=cfg.optimizer, loss=cfg.loss,
                     qpp=replace(cfg.qpp, top_k=min(cfg.qpp.top_k, cfg.gws.pool_depth)),
                     workers=cfg.workers)
    ctx.weights.write_tsv(out / "weights.tsv")
    logger.info("running %s on %d training queries", cfg.gws.algorithm, len(ctx.queries))
    models, report = gws_mod.run_gws(cfg.gws, None, None, context=ctx)

    for row in report.rows:
        stem = f"iter{row.iteration:02d}_{row.model}"
        if row.params is not None:
            row.params.save(out / "checkpoints" / f"{stem}.txt")
        if row.produced is not None:
            row.produced.write_tsv(out / "triplets" / f"{stem}.tsv")
    names = [gws_mod._model_name(cfg.gws, i) for i in range(len(models))]
    for name, params in zip(names, models):
        params.save(out / "checkpoints" / f"best_{name}.txt")
    report.write_tsv(out / "report.tsv")
    (out / "report.json").write_text(report_to_json(report), encoding="utf-8")
    export_iteration_curves(report, out / "curves.csv")

    if evaluation is not None:
        bm25_runs = ctx.bm25_rankings("evaluation")
        write_run(bm25_runs, out / "runs" / "bm25.run", tag="bm25")
        evaluate(bm25_runs, qrels, cfg.gws.relevance_threshold).write_tsv(out / "runs" / "bm25.metrics.tsv")
        for name, params in zip(names, models):
            rankings = ctx.evaluation.rankings(params)
            write_run(rankings, out / "runs" / f"{name}.run", tag=name)
            evaluate(rankings, qrels, cfg.gws.relevance_threshold).write_tsv(out / "runs" / f"{name}.metrics.tsv")
    return models, report


def cmd_index(args):
    index = build_index(ingest_documents(_require(args.corpus, "corpus"), args.format))
    index.save(args.out)
    logger.info("indexed %d documents", index.doc_count)


def cmd_search(args):
    cfg = _experiment_config(args)
    index = _load_index(args, cfg)
    queries = read_queries(_require(args.queries, "queries"))
    pools = bm25_pools(index, cfg.bm25, queries, args.k)
    write_run([RunRanking(q, tuple(p.doc_ids), tuple(p.scores)) for q, p in pools.items()], args.out, tag="bm25")


def cmd_gws(args):
    cfg = _experiment_config(args)
    out_dir = cfg.paths.get("output_dir")
    if not out_dir:
        raise ConfigError("an output directory is required (--out-dir)")
    run_experiment(cfg, out_dir)


def cmd_ws(args):
    args.algorithm = "self"
    args.max_iterations = 1
    cmd_gws(args)


def cmd_eval(args):
    rankings = parse_run(_require(args.run, "run"))
    record = evaluate(rankings, read_qrels(_require(args.qrels, "qrels")), args.relevance_threshold)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record.write_tsv(out / "per_query.tsv")
    with open(out / "summary.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for metric, value in record.aggregate().items():
            fh.write(f"{metric}\t{value:.6f}\n")


def cmd_sig(args):
    a, b = MetricsRecord.read_tsv(args.a), MetricsRecord.read_tsv(args.b)
    if set(a.per_query) != set(b.per_query):
        raise ContractError("metric files cover different query sets")
    ids = sorted(a.per_query)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("metric\tmean_a\tmean_b\tt\tp\tsignificant\n")
        for metric in args.metrics:
            res = paired_t_test(a.values(metric, ids), b.values(metric, ids), args.comparisons)
            fh.write(f"{metric}\t{a.mean(metric):.6f}\t{b.mean(metric):.6f}\t{res.t_statistic:.6f}"
                     f"\t{res.p_value:.6g}\t{str(res.significant).lower()}\n")


def cmd_diff(args):
    summary = per_query_diff(MetricsRecord.read_tsv(args.a), MetricsRecord.read_tsv(args.b), args.bound)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("metric\timproved\tdegraded\tunchanged\timproved_fraction\tdegraded_fraction\tunchanged_fraction\n")
        for metric, s in summary.items():
            fh.write(f"{metric}\t{s['improved']}\t{s['degraded']}\t{s['unchanged']}\t{s['improved_fraction']:.4f}"
                     f"\t{s['degraded_fraction']:.4f}\t{s['unchanged_fraction']:.4f}\n")


def cmd_gen_synthetic(args):
    spec = SyntheticSpec(num_queries=args.num_queries, docs_per_query_pool=args.pool,
                         vocab_size=args.vocab_size, topic_terms_per_query=args.topic_terms,
                         noise_rate=args.noise_rate, relevant_per_query=args.relevant, seed=args.seed)
    gen_synthetic(spec, args.out_dir)


def cmd_curves(args):
    report = json.loads(Path(_require(args.report, "report")).read_text(encoding="utf-8"))
    export_iteration_curves(report, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gwsrank", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build and save an inverted index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=("tsv", "jsonl"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="BM25 run file")
    p.add_argument("--config")
    p.add_argument("--corpus")
    p.add_argument("--index")
    p.add_argument("--queries", required=True)
    p.add_argument("-k", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    for name, func, help_ in (("ws", cmd_ws, "one round of weak supervision"),
                              ("gws", cmd_gws, "generalized weak supervision")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config")
        p.add_argument("--corpus")
        p.add_argument("--queries")
        p.add_argument("--qrels")
        p.add_argument("--validation-queries", dest="validation_queries")
        p.add_argument("--eval-queries", dest="eval_queries")
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, default=None,
                       help="parallel training runs (default: config value)")
        p.add_argument("--no-qpp", dest="no_qpp", action="store_true", help="uniform query weights")
        p.add_argument("--relevance-threshold", dest="relevance_threshold", type=int)
        if name == "gws":
            p.add_argument("--algorithm", choices=gws_mod.ALGORITHMS)
            p.add_argument("--max-iterations", dest="max_iterations", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate a run file")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--relevance-threshold", dest="relevance_threshold", type=int, default=2)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sig", help="paired t-test between two per-query metric files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--metrics", nargs="+", default=list(METRICS), choices=METRICS)
    p.add_argument("--comparisons", type=int, default=1, help="Bonferroni factor")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sig)

    p = sub.add_parser("diff", help="per-query improved/degraded counts")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--bound", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("gen-synthetic", help="write a synthetic collection")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--num-queries", dest="num_queries", type=int, default=50)
    p.add_argument("--pool", type=int, default=20)
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=500)
    p.add_argument("--topic-terms", dest="topic_terms", type=int, default=3)
    p.add_argument("--noise-rate", dest="noise_rate", type=float, default=0.35)
    p.add_argument("--relevant", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("curves", help="per-iteration metric CSV from report.json")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except GwsError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("%s", exc)
        return 9
    return 0


if __name__ == "__main__":
    sys.exit(main())
