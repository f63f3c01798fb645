"""Rank-quality metrics over re-ranking pools, significance testing and
per-query difference summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from scipy import stats

from .corpus import QrelSet
from .errors import ContractError

METRICS = ("ndcg_at_1", "ndcg_at_10", "map", "mrr")
_BOUND_SLACK = 1e-12


@dataclass(frozen=True)
class RunRanking:
    query_id: str
    doc_ids: tuple[str, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.doc_ids) != len(self.scores):
            raise ContractError("doc_ids and scores differ in length")
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise ContractError(f"duplicate doc_id in ranking for {self.query_id}")

    @classmethod
    def from_scores(cls, query_id: str, scored: Mapping[str, float] | Iterable[tuple[str, float]]):
        """Sort (doc, score) pairs descending, ties by doc_id."""
        items = scored.items() if isinstance(scored, Mapping) else scored
        ordered = sorted(items, key=lambda e: (-e[1], e[0]))
        return cls(query_id, tuple(d for d, _ in ordered), tuple(float(s) for _, s in ordered))


@dataclass
class MetricsRecord:
    per_query: dict[str, dict[str, float]] = field(default_factory=dict)

    def mean(self, metric: str) -> float:
        if not self.per_query:
            return 0.0
        return math.fsum(v[metric] for v in self.per_query.values()) / len(self.per_query)

    @property
    def ndcg_at_1(self) -> float:
        return self.mean("ndcg_at_1")

    @property
    def ndcg_at_10(self) -> float:
        return self.mean("ndcg_at_10")

    @property
    def map(self) -> float:
        return self.mean("map")

    @property
    def mrr(self) -> float:
        return self.mean("mrr")

    def aggregate(self) -> dict[str, float]:
        return {m: self.mean(m) for m in METRICS}

    def values(self, metric: str, query_ids: Sequence[str] | None = None) -> list[float]:
        ids = sorted(self.per_query) if query_ids is None else query_ids
        return [self.per_query[q][metric] for q in ids]

    def write_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for qid in sorted(self.per_query):
                for metric in METRICS:
                    fh.write(f"{qid}\t{metric}\t{self.per_query[qid][metric]:.6f}\n")

    @classmethod
    def read_tsv(cls, path) -> "MetricsRecord":
        per_query: dict[str, dict[str, float]] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    qid, metric, value = line.rstrip("\n").split("\t")
                    per_query.setdefault(qid, {})[metric] = float(value)
        return cls(per_query)


def _dcg(grades: Iterable[int]) -> float:
    return math.fsum((2.0 ** g - 1.0) / math.log2(r + 1) for r, g in enumerate(grades, start=1))


def ndcg_at(ranking: RunRanking, qrels: QrelSet, cutoff: int) -> float:
    """NDCG with exponential gain; the ideal ordering uses every judged
    document for the query, retrieved or not."""
    if cutoff < 1:
        raise ContractError(f"cutoff must be >= 1, got {cutoff}")
    judged = qrels.for_query(ranking.query_id)
    ideal = sorted((g for g in judged.values() if g > 0), reverse=True)[:cutoff]
    if not ideal:
        return 0.0
    got = [judged.get(d, 0) for d in ranking.doc_ids[:cutoff]]
    return _dcg(got) / _dcg(ideal)


def map_in_pool(ranking: RunRanking, qrels: QrelSet, relevance_threshold: int = 2) -> float:
    """Average precision normalized by the relevant documents inside the ranking."""
    if relevance_threshold < 1:
        raise ContractError("relevance_threshold must be >= 1")
    hits = 0
    precisions = []
    for rank, doc_id in enumerate(ranking.doc_ids, start=1):
        if qrels.grade(ranking.query_id, doc_id) >= relevance_threshold:
            hits += 1
            precisions.append(hits / rank)
    return math.fsum(precisions) / hits if hits else 0.0


def mrr(ranking: RunRanking, qrels: QrelSet, relevance_threshold: int = 2) -> float:
    if relevance_threshold < 1:
        raise ContractError("relevance_threshold must be >= 1")
    for rank, doc_id in enumerate(ranking.doc_ids, start=1):
        if qrels.grade(ranking.query_id, doc_id) >= relevance_threshold:
            return 1.0 / rank
    return 0.0


def evaluate_ranking(ranking: RunRanking, qrels: QrelSet, relevance_threshold: int = 2) -> dict[str, float]:
    return {
        "ndcg_at_1": ndcg_at(ranking, qrels, 1),
        "ndcg_at_10": ndcg_at(ranking, qrels, 10),
        "map": map_in_pool(ranking, qrels, relevance_threshold),
        "mrr": mrr(ranking, qrels, relevance_threshold),
    }


def evaluate(rankings: Iterable[RunRanking], qrels: QrelSet, relevance_threshold: int = 2) -> MetricsRecord:
    return MetricsRecord({r.query_id: evaluate_ranking(r, qrels, relevance_threshold) for r in rankings})


class TTestResult(NamedTuple):
    t_statistic: float
    p_value: float
    significant: bool


def paired_t_test(per_query_a: Sequence[float], per_query_b: Sequence[float],
                  num_comparisons: int = 1, alpha: float = 0.05) -> TTestResult:
    """Two-tailed paired t-test, Bonferroni-corrected over num_comparisons."""
    n = len(per_query_a)
    if n != len(per_query_b) or n < 2:
        raise ContractError("paired t-test needs two equal-length samples of size >= 2")
    if num_comparisons < 1:
        raise ContractError("num_comparisons must be >= 1")
    diffs = [a - b for a, b in zip(per_query_a, per_query_b)]
    mean = math.fsum(diffs) / n
    var = math.fsum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, False)
        return TTestResult(math.copysign(math.inf, mean), 0.0, True)
    t = mean / math.sqrt(var / n)
    p = 2.0 * stats.t.sf(abs(t), df=n - 1)
    return TTestResult(t, float(p), bool(p < alpha / num_comparisons))


def per_query_diff(records_a: MetricsRecord, records_b: MetricsRecord, bound: float = 0.01) -> dict:
    """Count queries where a beats b by more than ``bound``, loses by more,
    or neither, for every metric."""
    if set(records_a.per_query) != set(records_b.per_query):
        raise ContractError("records cover different query sets")
    n = len(records_a.per_query)
    summary = {}
    for metric in METRICS:
        improved = degraded = 0
        for qid, values in records_a.per_query.items():
            delta = values[metric] - records_b.per_query[qid][metric]
            # Metric values are printed to 6 decimals; a float residue must
            # not push an exact boundary difference across the bound.
            if delta > bound + _BOUND_SLACK:
                improved += 1
            elif delta < -bound - _BOUND_SLACK:
                degraded += 1
        unchanged = n - improved - degraded
        summary[metric] = {
            "improved": improved,
            "degraded": degraded,
            "unchanged": unchanged,
            "improved_fraction": improved / n if n else 0.0,
            "degraded_fraction": degraded / n if n else 0.0,
            "unchanged_fraction": unchanged / n if n else 0.0,
        }
    return summary
