"""Desk-scale synthetic benchmark comparing BM25, WS and the GWS schedules.

Each seed generates a fresh collection and splits its queries into held-out
test, validation and training parts. Every system is scored by mean
NDCG@10 on the test queries.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .corpus import write_queries
from .evaluation import MetricsRecord, evaluate
from .gws import RUNNERS, GwsConfig, GwsContext, Split, run_weak_supervision
from .index import build_index
from .ranker import OptimizerConfig
from .synthetic import SyntheticSpec, gen_synthetic, generate

SYSTEMS = ("bm25", "ws", "self", "cross", "jcs", "multi", "self_no_qpp")


@dataclass(frozen=True)
class BenchmarkSetup:
    test_queries: int = 15
    validation_queries: int = 10
    max_steps: int = 2000
    validation_every: int = 200
    relevance_threshold: int = 1  # planted labels are binary

    def optimizer(self, seed: int) -> OptimizerConfig:
        return OptimizerConfig(max_steps=self.max_steps, validation_every=self.validation_every, seed=seed)

    def gws(self, seed: int, algorithm: str = "self") -> GwsConfig:
        return GwsConfig(algorithm=algorithm, base_seed=seed, relevance_threshold=self.relevance_threshold)


def split_queries(queries, seed: int, setup: BenchmarkSetup = BenchmarkSetup()):
    """Seeded (train, validation, test) split; each part keeps file order."""
    order = np.random.default_rng(seed).permutation(len(queries))
    n_test, n_val = setup.test_queries, setup.validation_queries
    test_ids = {queries[i].query_id for i in order[:n_test]}
    val_ids = {queries[i].query_id for i in order[n_test:n_test + n_val]}
    pick = lambda ids: [q for q in queries if q.query_id in ids]  # noqa: E731
    train = [q for q in queries if q.query_id not in test_ids | val_ids]
    return train, pick(val_ids), pick(test_ids)


def run_seed(seed: int, systems=SYSTEMS, spec: SyntheticSpec | None = None,
             setup: BenchmarkSetup = BenchmarkSetup(), workers: int = 1) -> dict[str, MetricsRecord]:
    """Per-query test metrics of every requested system on one synthetic seed.

    Multi-model schedules report the model with the best validation NDCG@10.
    """
    spec = spec or SyntheticSpec(seed=seed)
    corpus, queries, qrels = generate(spec)
    index = build_index(corpus)
    train_q, val_q, test_q = split_queries(queries, seed, setup)
    opt = setup.optimizer(seed)

    def context(config):
        return GwsContext(config, index, train_q, Split(val_q, qrels), Split(test_q, qrels),
                          opt=opt, workers=workers)

    def record(ctx, params):
        rankings = ctx.bm25_rankings("evaluation") if params is None else ctx.evaluation.rankings(params)
        return evaluate(rankings, qrels, setup.relevance_threshold)

    ctx = context(setup.gws(seed))
    out = {}
    for system in systems:
        if system == "bm25":
            out[system] = record(ctx, None)
        elif system == "ws":
            params, _ = run_weak_supervision(ctx.config, None, None, context=ctx)
            out[system] = record(ctx, params)
        elif system == "self_no_qpp":
            config = replace(setup.gws(seed), qpp_enabled=False)
            plain = context(config)
            params, _ = RUNNERS["self"](config, None, None, context=plain)
            out[system] = record(plain, params)
        else:
            ctx.config = setup.gws(seed, system)
            models, _ = RUNNERS[system](ctx.config, None, None, context=ctx)
            models = models if isinstance(models, list) else [models]
            best = max(models, key=ctx.validation.ndcg10)
            out[system] = record(ctx, best)
    return out


def write_cli_inputs(seed: int, out_dir, setup: BenchmarkSetup = BenchmarkSetup(),
                     spec: SyntheticSpec | None = None) -> Path:
    """Write one seed's collection, split files and config.ini for the CLI.

    Returns the config path; ``gwsrank gws --config`` on it reproduces the
    in-process ``run_seed`` self-labeling system.
    """
    out = Path(out_dir)
    files = gen_synthetic(spec or SyntheticSpec(seed=seed), out)
    _, queries, _ = generate(spec or SyntheticSpec(seed=seed))
    _, val_q, test_q = split_queries(queries, seed, setup)
    write_queries(val_q, out / "validation_queries.tsv")
    write_queries(test_q, out / "eval_queries.tsv")
    cfg = ExperimentConfig(
        paths={"corpus": str(files["corpus"]), "queries": str(files["queries"]), "qrels": str(files["qrels"]),
               "validation_queries": str(out / "validation_queries.tsv"),
               "eval_queries": str(out / "eval_queries.tsv")},
        gws=setup.gws(seed), optimizer=setup.optimizer(seed), seed=seed, workers=1)
    cfg.save(out / "config.ini")
    return out / "config.ini"
