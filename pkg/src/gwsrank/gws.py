"""Generalized weak supervision: BM25 bootstraps a ranker, and trained
rankers become the weak labelers of later iterations.

Four re-labeling schedules are provided. Self-labeling retrains a single
model on its own labels. Cross-labeling has models swap labels. The joint
variant exchanges labels and then runs a short self-labeling loop per
model. Greedy multi-labeling trains every architecture on every teacher
and keeps the best student per architecture.

Self-labeling is an EM-style loop. ``relabel`` plays the E-step, since it
imputes relevance scores with the current model. ``train`` plays the
M-step, fitting parameters to those scores. Unlike classic EM it starts
from the BM25 labeling and not from random labels.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import Query, QrelSet
from .errors import ContractError, OrchestrationError
from .evaluation import RunRanking, evaluate
from .index import Bm25Params, InvertedIndex, RankedList, retrieve_topk
from .qpp import QppConfig, QueryWeights, compute_query_weights
from .ranker import (
    ARCHITECTURES,
    FeatureStore,
    LossConfig,
    OptimizerConfig,
    RankerParams,
    RerankSet,
    TrainPair,
    init_params,
    score_batch,
    train,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("self", "cross", "jcs", "multi")
TIE_EPSILON = 1e-9


@dataclass(frozen=True)
class GwsConfig:
    algorithm: str = "self"
    pool_depth: int = 20
    pairs_per_query: int = 20
    architectures: tuple[str, ...] = ("mlp", "linear")
    max_iterations: int = 8
    patience: int = 2
    inner_self_iterations: int = 3
    base_seed: int = 0
    qpp_enabled: bool = True
    teacher_assignment: str = "cycle"
    relevance_threshold: int = 2

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ContractError(f"unknown algorithm {self.algorithm!r}")
        if not self.architectures or any(a not in ARCHITECTURES for a in self.architectures):
            raise ContractError(f"architectures must be drawn from {ARCHITECTURES}")
        if self.algorithm in ("cross", "jcs") and len(self.architectures) < 2:
            raise ContractError(f"{self.algorithm} needs at least two models")
        if min(self.pool_depth, self.pairs_per_query, self.max_iterations, self.patience) < 1:
            raise ContractError("pool_depth, pairs_per_query, max_iterations and patience must be >= 1")
        if self.inner_self_iterations < 0 or self.base_seed < 0:
            raise ContractError("inner_self_iterations and base_seed must be non-negative")
        if self.teacher_assignment not in ("cycle", "random"):
            raise ContractError("teacher_assignment is 'cycle' or 'random'")

    @property
    def model_count(self) -> int:
        return 1 if self.algorithm == "self" else len(self.architectures)


@dataclass(frozen=True)
class TripletSet:
    """Per-query (doc_id, score) triplets over a fixed pool, with the tag of
    the model that produced the scores."""

    triplets: Mapping[str, tuple[tuple[str, float], ...]]
    source_tag: str

    @property
    def query_ids(self) -> list[str]:
        return sorted(self.triplets)

    def doc_ids(self, query_id: str) -> list[str]:
        return [d for d, _ in self.triplets[query_id]]

    def pool_sets(self) -> dict[str, frozenset[str]]:
        return {q: frozenset(d for d, _ in entries) for q, entries in self.triplets.items()}

    def __len__(self) -> int:
        return sum(len(v) for v in self.triplets.values())

    def ordering(self, query_id: str) -> list[str]:
        return [d for d, _ in sorted(self.triplets[query_id], key=lambda e: (-e[1], e[0]))]

    def write_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for qid in self.query_ids:
                for doc_id, s in self.triplets[qid]:
                    fh.write(f"{qid}\t{doc_id}\t{s!r}\t{self.source_tag}\n")


@dataclass(frozen=True)
class Split:
    """Queries with judgments, used for validation or held-out evaluation."""

    queries: Sequence[Query]
    qrels: QrelSet


def bm25_pools(index: InvertedIndex, params: Bm25Params, queries: Sequence[Query], k: int) -> dict[str, RankedList]:
    pools = {}
    for query in queries:
        ranked = retrieve_topk(index, params, query, k)
        if ranked.depth == 0:
            logger.warning("query %s retrieves nothing; dropped", query.query_id)
            continue
        pools[query.query_id] = ranked
    return pools


def initial_weak_labels(index: InvertedIndex, bm25: Bm25Params, queries: Sequence[Query], k: int) -> TripletSet:
    pools = bm25_pools(index, bm25, queries, k)
    if not pools:
        raise OrchestrationError("no training query retrieves any document")
    return TripletSet({q: pool.entries for q, pool in pools.items()}, "bm25")


def relabel(params: RankerParams, triplet_set: TripletSet, features: FeatureStore, source_tag: str | None = None) -> TripletSet:
    """Rescore every pooled (query, doc) pair with ``params``; pools are untouched."""
    out = {}
    for qid in triplet_set.query_ids:
        docs = triplet_set.doc_ids(qid)
        scores = score_batch(params, features.matrix(qid, docs))
        out[qid] = tuple(zip(docs, map(float, scores)))
    tag = source_tag if source_tag is not None else f"{params.architecture}:{params.seed}"
    return TripletSet(out, tag)


def sample_pairs(triplet_set: TripletSet, pairs_per_query: int, seed) -> list[TrainPair]:
    """Top-half vs bottom-half pair sampling per query.

    Each pair is one uniformly drawn document from the upper half of the
    teacher's ordering (rounding up) and one from the lower half. Pairs the
    teacher cannot tell apart are redrawn, up to ten times the quota.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for qid in triplet_set.query_ids:
        entries = sorted(triplet_set.triplets[qid], key=lambda e: (-e[1], e[0]))
        n = len(entries)
        if n < 2:
            logger.warning("query %s has a pool of %d; skipped", qid, n)
            continue
        n_pos = math.ceil(n / 2)
        positives, negatives = entries[:n_pos], entries[n_pos:]
        emitted = attempts = 0
        while emitted < pairs_per_query and attempts < 10 * pairs_per_query:
            attempts += 1
            d1, s1 = positives[rng.integers(len(positives))]
            d2, s2 = negatives[rng.integers(len(negatives))]
            delta = s1 - s2
            if abs(delta) < TIE_EPSILON:
                continue
            pairs.append(TrainPair(qid, d1, d2, 1 if delta > 0 else -1))
            emitted += 1
        if emitted < pairs_per_query:
            logger.warning("query %s: only %d of %d pairs after tie rejection", qid, emitted, pairs_per_query)
    return pairs


def validation_error(params: RankerParams, validation: RerankSet) -> float:
    """1 - NDCG@10 of ``params`` re-ranking the validation pools."""
    if validation is None or not validation.query_ids:
        raise ContractError("validation_error needs a non-empty validation set")
    return 1.0 - validation.ndcg10(params)


@dataclass
class IterationRow:
    iteration: int
    model: str
    data_tag: str
    validation_ndcg10: float
    metrics: dict[str, float]
    eval_metrics: dict[str, float] | None = None
    params: RankerParams | None = field(default=None, repr=False, compare=False)
    produced: TripletSet | None = field(default=None, repr=False, compare=False)


@dataclass
class TrainingRun:
    iteration: int
    stage: str
    student: str
    data_tag: str
    init_seed: int
    validation_ndcg10: float


@dataclass
class Selection:
    iteration: int
    student: str
    chosen_teacher: int
    errors: tuple[float, ...]


@dataclass
class GwsReport:
    algorithm: str
    rows: list[IterationRow] = field(default_factory=list)
    runs: list[TrainingRun] = field(default_factory=list)
    selections: list[Selection] = field(default_factory=list)
    best_iteration: dict[str, int] = field(default_factory=dict)

    def rows_for(self, model: str) -> list[IterationRow]:
        return [r for r in self.rows if r.model == model]

    def runs_at(self, iteration: int) -> list[TrainingRun]:
        return [r for r in self.runs if r.iteration == iteration]

    @property
    def iterations(self) -> int:
        return max((r.iteration for r in self.rows), default=0)

    def write_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("iteration\tmodel\tvalidation_ndcg_at_10\tteacher\n")
            for r in self.rows:
                fh.write(f"{r.iteration}\t{r.model}\t{r.validation_ndcg10:.6f}\t{r.data_tag}\n")


@dataclass
class IterationState:
    """Convergence bookkeeping for one model across iterations."""

    name: str
    patience: int
    best_params: RankerParams | None = None
    best_score: float = -math.inf
    best_iteration: int = 0
    since_improved: int = 0
    converged: bool = False
    checkpoints: dict[int, RankerParams] = field(default_factory=dict)
    validation_scores: dict[int, float] = field(default_factory=dict)

    def record(self, iteration: int, params: RankerParams, score: float | None) -> None:
        self.checkpoints[iteration] = params
        if score is None:
            self.best_params, self.best_iteration = params, iteration
            return
        self.validation_scores[iteration] = score
        if score > self.best_score:
            self.best_params, self.best_score, self.best_iteration = params, score, iteration
            self.since_improved = 0
        else:
            self.since_improved += 1
            if self.since_improved >= self.patience:
                self.converged = True


class GwsContext:
    """Everything that stays fixed across GWS iterations: the BM25 pools,
    frozen feature standardization, query weights and validation pools."""

    def __init__(self, config: GwsConfig, index: InvertedIndex, queries: Sequence[Query],
                 validation: Split | None = None, evaluation: Split | None = None, *,
                 bm25: Bm25Params = Bm25Params(), opt: OptimizerConfig = OptimizerConfig(),
                 loss: LossConfig = LossConfig(), qpp: QppConfig | None = None, workers: int = 1):
        self.config = config
        self.index = index
        self.bm25 = bm25
        self.opt = opt
        self.loss = loss
        # 0 means one worker per available CPU.
        self.workers = workers if workers > 0 else (os.cpu_count() or 1)
        self.initial = initial_weak_labels(index, bm25, queries, config.pool_depth)
        train_ids = set(self.initial.query_ids)
        self.queries = [q for q in queries if q.query_id in train_ids]

        qpp = qpp or QppConfig(top_k=config.pool_depth)
        if config.qpp_enabled:
            pools = {q: RankedList(q, self.initial.triplets[q]) for q in train_ids}
            self.weights = compute_query_weights(self.queries, pools, index, bm25, qpp)
        else:
            self.weights = QueryWeights.uniform(train_ids)

        all_queries = list(self.queries)
        all_pools: dict[str, list[str]] = {q: self.initial.doc_ids(q) for q in train_ids}
        self._split_pools = {}
        for name, split in (("validation", validation), ("evaluation", evaluation)):
            if split is None:
                continue
            pools = bm25_pools(index, bm25, split.queries, config.pool_depth)
            self._split_pools[name] = pools
            for q in split.queries:
                if q.query_id in pools:
                    all_queries.append(q)
                    all_pools.setdefault(q.query_id, pools[q.query_id].doc_ids)
        self.features = FeatureStore(index, bm25, _unique(all_queries), all_pools, fit_on=sorted(train_ids))

        self.validation = self._rerank_set("validation", validation)
        self.evaluation = self._rerank_set("evaluation", evaluation)

    def _rerank_set(self, name, split):
        if split is None:
            return None
        pools = self._split_pools[name]
        if not pools:
            raise OrchestrationError(f"no {name} query retrieves any document")
        return RerankSet({q: p.doc_ids for q, p in pools.items()}, self.features, split.qrels)

    def bm25_rankings(self, name: str) -> list[RunRanking]:
        pools = self._split_pools[name]
        return [RunRanking(q, tuple(p.doc_ids), tuple(p.scores)) for q, p in sorted(pools.items())]

    def metrics_for(self, rerank: RerankSet | None, params: RankerParams | None, name: str):
        if rerank is None:
            return None
        rankings = self.bm25_rankings(name) if params is None else rerank.rankings(params)
        return evaluate(rankings, rerank.qrels, self.config.relevance_threshold).aggregate()

    def row(self, iteration, model, data_tag, params, produced=None) -> IterationRow:
        val = self.metrics_for(self.validation, params, "validation")
        ev = self.metrics_for(self.evaluation, params, "evaluation")
        score = val["ndcg_at_10"] if val is not None else math.nan
        return IterationRow(iteration, model, data_tag, score, val or {}, ev, params, produced)

    def train_one(self, triplets: TripletSet, architecture: str, init_seed: int, iteration: int,
                  stage: int = 0) -> tuple[RankerParams, float | None]:
        cfg = self.config
        pair_seed = cfg.base_seed + iteration if stage == 0 else [cfg.base_seed + iteration, stage]
        pairs = sample_pairs(triplets, cfg.pairs_per_query, pair_seed)
        if not pairs:
            raise OrchestrationError(f"teacher {triplets.source_tag} yields no training pairs")
        initial = init_params(architecture, init_seed)
        params = train(pairs, self.weights, self.features, architecture, self.opt, self.loss,
                       self.validation, initial=initial,
                       shuffle_seed=[self.opt.seed, iteration, stage, init_seed])
        score = self.validation.ndcg10(params) if self.validation is not None else None
        return params, score

    def map(self, fn: Callable, jobs: list) -> list:
        if self.workers == 1 or len(jobs) < 2:
            return [fn(*job) for job in jobs]
        with ThreadPoolExecutor(self.workers) as pool:
            return list(pool.map(lambda job: fn(*job), jobs))


def _unique(queries):
    seen = {}
    for q in queries:
        seen.setdefault(q.query_id, q)
    return list(seen.values())


def _model_name(config: GwsConfig, i: int) -> str:
    return f"{config.architectures[i]}-{i + 1}"


def _tag(name: str, iteration: int, inner: int = 0) -> str:
    return f"{name}@{iteration}" if inner == 0 else f"{name}@{iteration}.{inner}"


def _context(config, index, queries, validation, evaluation, context, kwargs) -> GwsContext:
    if context is not None:
        return context
    return GwsContext(config, index, queries, validation, evaluation, **kwargs)


def _start_report(ctx: GwsContext, algorithm: str) -> GwsReport:
    report = GwsReport(algorithm)
    report.rows.append(ctx.row(0, "bm25", "bm25", None, ctx.initial))
    return report


def _finish(report: GwsReport, states: list[IterationState]) -> list[RankerParams]:
    for s in states:
        report.best_iteration[s.name] = s.best_iteration
    return [s.best_params for s in states]


def teacher_assignment(m: int, mode: str = "cycle", seed=0) -> list[int]:
    """Teacher index for each of ``m`` students; nobody teaches itself.

    ``cycle`` maps student i to i-1 (student 0 to m-1). ``random`` draws a
    seeded derangement.
    """
    if m < 2:
        return [0] * m
    if mode == "cycle":
        return [(i - 1) % m for i in range(m)]
    rng = np.random.default_rng(seed)
    while True:
        perm = rng.permutation(m)
        if all(perm[i] != i for i in range(m)):
            return [int(x) for x in perm]


def run_self_labeling(config: GwsConfig, index: InvertedIndex | None, queries: Sequence[Query] | None,
                      validation: Split | None = None, evaluation: Split | None = None, *,
                      context: GwsContext | None = None, **kwargs) -> tuple[RankerParams, GwsReport]:
    ctx = _context(config, index, queries, validation, evaluation, context, kwargs)
    report = _start_report(ctx, "self")
    arch = config.architectures[0]
    name = _model_name(config, 0)
    state = IterationState(name, config.patience)
    triplets = ctx.initial
    for t in range(1, config.max_iterations + 1):
        params, score = ctx.train_one(triplets, arch, config.base_seed, t)
        report.runs.append(TrainingRun(t, "self", name, triplets.source_tag, config.base_seed, _nan(score)))
        state.record(t, params, score)
        produced = relabel(params, triplets, ctx.features, _tag(name, t))
        report.rows.append(ctx.row(t, name, triplets.source_tag, params, produced))
        triplets = produced
        if state.converged:
            break
    return _finish(report, [state])[0], report


def run_weak_supervision(config: GwsConfig, index, queries, validation=None, evaluation=None, **kwargs):
    """Plain weak supervision: one round of training on BM25 labels."""
    return run_self_labeling(replace(config, algorithm="self", max_iterations=1), index, queries,
                             validation, evaluation, **kwargs)


def _nan(score):
    return math.nan if score is None else score


def _exchange_round(ctx: GwsContext, sets, states, t, report, inner_budget: int):
    """One round of cross-labeling, optionally followed by per-model
    self-labeling of up to ``inner_budget`` steps.

    The inner loop stops at the first step that fails to improve on the
    validation score, and the best model seen becomes the new labeler.
    """
    config = ctx.config
    m = len(states)
    assign = teacher_assignment(m, config.teacher_assignment, [config.base_seed, t])
    active = [i for i in range(m) if not states[i].converged]
    if not active:
        return False

    def cross_then_self(i):
        arch, seed, name = config.architectures[i], config.base_seed + i, states[i].name
        teacher_set = sets[assign[i]]
        params, score = ctx.train_one(teacher_set, arch, seed, t)
        runs = [TrainingRun(t, "cross", name, teacher_set.source_tag, seed, _nan(score))]
        best, best_score, best_tag = params, score, _tag(name, t)
        own = relabel(params, sets[i], ctx.features, best_tag)
        # Round 1 trains on the initial labels only, so it matches plain WS.
        for s in range(1, (inner_budget if t > 1 else 0) + 1):
            p, sc = ctx.train_one(own, arch, seed, t, stage=s)
            runs.append(TrainingRun(t, "self", name, own.source_tag, seed, _nan(sc)))
            if sc is not None and sc <= best_score:
                break
            best, best_score, best_tag = p, sc, _tag(name, t, s)
            own = relabel(p, sets[i], ctx.features, best_tag)
        return teacher_set.source_tag, best, best_score, own, runs

    results = ctx.map(cross_then_self, [(i,) for i in active])
    for i, (data_tag, params, score, produced, runs) in zip(active, results):
        report.runs.extend(runs)
        states[i].record(t, params, score)
        report.rows.append(ctx.row(t, states[i].name, data_tag, params, produced))
    # Relabeled sets are published only after every model has trained.
    for i, result in zip(active, results):
        sets[i] = result[3]
    return True


def run_cross_labeling(config: GwsConfig, index, queries, validation=None, evaluation=None, *,
                       context: GwsContext | None = None, **kwargs) -> tuple[list[RankerParams], GwsReport]:
    ctx = _context(config, index, queries, validation, evaluation, context, kwargs)
    return _run_exchange(ctx, "cross", inner_budget=0)


def run_jcs(config: GwsConfig, index, queries, validation=None, evaluation=None, *,
            context: GwsContext | None = None, **kwargs) -> tuple[list[RankerParams], GwsReport]:
    ctx = _context(config, index, queries, validation, evaluation, context, kwargs)
    return _run_exchange(ctx, "jcs", inner_budget=config.inner_self_iterations)


def _run_exchange(ctx: GwsContext, algorithm: str, inner_budget: int):
    config = ctx.config
    m = len(config.architectures)
    if m < 2:
        raise ContractError(f"{algorithm} needs at least two models")
    report = _start_report(ctx, algorithm)
    states = [IterationState(_model_name(config, i), config.patience) for i in range(m)]
    sets = [ctx.initial] * m
    for t in range(1, config.max_iterations + 1):
        if not _exchange_round(ctx, sets, states, t, report, inner_budget):
            break
    return _finish(report, states), report


def run_greedy_multi(config: GwsConfig, index, queries, validation=None, evaluation=None, *,
                     context: GwsContext | None = None, **kwargs) -> tuple[list[RankerParams], GwsReport]:
    ctx = _context(config, index, queries, validation, evaluation, context, kwargs)
    if ctx.validation is None:
        raise ContractError("greedy multi-labeling needs a validation set")
    m = len(config.architectures)
    report = _start_report(ctx, "multi")
    states = [IterationState(_model_name(config, i), config.patience) for i in range(m)]
    sets = [ctx.initial] * m
    for t in range(1, config.max_iterations + 1):
        active = [i for i in range(m) if not states[i].converged]
        if not active:
            break
        jobs = [(sets[j], config.architectures[i], config.base_seed + i * m + j, t) for i in active for j in range(m)]
        trained = ctx.map(ctx.train_one, jobs)
        produced = {}
        for n, i in enumerate(active):
            candidates = trained[n * m:(n + 1) * m]
            errors = tuple(1.0 - score for _, score in candidates)
            for j, (_, score) in enumerate(candidates):
                report.runs.append(TrainingRun(t, "candidate", states[i].name, sets[j].source_tag,
                                               config.base_seed + i * m + j, score))
            # Lowest error wins; on ties the self-taught candidate, then the lowest teacher index.
            chosen = min(range(m), key=lambda j: (errors[j], j != i, j))
            params, score = candidates[chosen]
            report.selections.append(Selection(t, states[i].name, chosen, errors))
            states[i].record(t, params, score)
            produced[i] = relabel(params, sets[i], ctx.features, _tag(states[i].name, t))
            report.rows.append(ctx.row(t, states[i].name, sets[chosen].source_tag, params, produced[i]))
        for i in active:
            sets[i] = produced[i]
    return _finish(report, states), report


RUNNERS = {
    "self": run_self_labeling,
    "cross": run_cross_labeling,
    "jcs": run_jcs,
    "multi": run_greedy_multi,
}


def run_gws(config: GwsConfig, index, queries, validation=None, evaluation=None, **kwargs):
    """Dispatch on ``config.algorithm``; always returns a list of models."""
    models, report = RUNNERS[config.algorithm](config, index, queries, validation, evaluation, **kwargs)
    if isinstance(models, RankerParams):
        models = [models]
    return models, report
