"""NQC query performance prediction and per-query training weights."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus import Query
from .errors import ContractError
from .index import Bm25Params, InvertedIndex, RankedList, bm25_term

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QppConfig:
    top_k: int = 20
    normalize_by_corpus_score: bool = True


@dataclass(frozen=True)
class QueryWeights:
    weights: Mapping[str, float] = field(default_factory=dict)

    def __getitem__(self, query_id: str) -> float:
        return self.weights[query_id]

    def __contains__(self, query_id) -> bool:
        return query_id in self.weights

    def __len__(self) -> int:
        return len(self.weights)

    @classmethod
    def uniform(cls, query_ids) -> "QueryWeights":
        return cls({q: 1.0 for q in query_ids})

    def write_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for qid in sorted(self.weights):
                fh.write(f"{qid}\t{self.weights[qid]!r}\n")


def nqc(ranked_list: RankedList | Sequence[float], corpus_score: float | None = None,
        config: QppConfig = QppConfig()) -> float:
    """Population standard deviation of the top scores, optionally divided
    by the query's score against the whole collection."""
    scores = ranked_list.scores if isinstance(ranked_list, RankedList) else list(ranked_list)
    scores = scores[: min(config.top_k, len(scores))]
    if len(scores) < 2:
        raise ContractError("NQC needs at least two scores")
    n = len(scores)
    mu = math.fsum(scores) / n
    sd = math.sqrt(math.fsum((s - mu) ** 2 for s in scores) / n)
    if not config.normalize_by_corpus_score:
        return sd
    if corpus_score is None or corpus_score <= 0:
        raise ContractError(f"corpus score must be positive for normalization, got {corpus_score}")
    return sd / corpus_score


def corpus_score(index: InvertedIndex, params: Bm25Params, query: Query) -> float:
    """BM25 of the query against all documents concatenated into one.

    Term frequencies are collection-wide and the pseudo-document length is
    the total token count; idf and avgdl come from the original index.
    """
    length = index.total_token_count
    total = 0.0
    for term in query.tokens:
        tf = index.collection_tf.get(term, 0)
        if tf:
            total += bm25_term(index.idf(term), tf, length, index.avg_doc_length, params)
    return total


def compute_query_weights(queries: Sequence[Query], pools: Mapping[str, RankedList],
                          index: InvertedIndex, params: Bm25Params = Bm25Params(),
                          config: QppConfig = QppConfig()) -> QueryWeights:
    if not queries:
        raise ContractError("cannot weight an empty query set")
    raw: dict[str, float | None] = {}
    for query in sorted(queries, key=lambda q: q.query_id):
        pool = pools.get(query.query_id)
        if pool is None or pool.depth < 2:
            raw[query.query_id] = None
            continue
        cscore = corpus_score(index, params, query) if config.normalize_by_corpus_score else None
        if config.normalize_by_corpus_score and not cscore:
            raw[query.query_id] = None
            continue
        value = nqc(pool, cscore, config)
        raw[query.query_id] = value if value > 0 and math.isfinite(value) else None
    positive = [v for v in raw.values() if v is not None]
    fallback = math.fsum(positive) / len(positive) if positive else 1.0
    degenerate = [q for q, v in raw.items() if v is None]
    if degenerate:
        logger.warning("%d queries with degenerate pools get fallback weight %.6g", len(degenerate), fallback)
    return QueryWeights({q: (fallback if v is None else v) for q, v in raw.items()})
