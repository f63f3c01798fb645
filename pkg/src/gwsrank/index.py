"""Inverted index with BM25 scoring and top-k retrieval."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

from .corpus import Corpus, Query
from .errors import BuildError, ContractError, LoadError, UnknownDocumentError

INDEX_MAGIC = "GWSRANK-INDEX v1"


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 0.9
    b: float = 0.4

    def __post_init__(self):
        if self.k1 < 0 or not 0.0 <= self.b <= 1.0:
            raise ContractError(f"invalid BM25 parameters k1={self.k1}, b={self.b}")


@dataclass(frozen=True)
class RankedList:
    query_id: str
    entries: tuple[tuple[str, float], ...]

    @property
    def depth(self) -> int:
        return len(self.entries)

    @property
    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.entries]


class InvertedIndex:
    """Term postings plus the document statistics BM25 needs.

    Postings lists are sorted by doc_id so the index does not depend on
    corpus order.
    """

    def __init__(self, postings, doc_lengths):
        self.postings: dict[str, list[tuple[str, int]]] = postings
        self.doc_lengths: dict[str, int] = doc_lengths
        self.doc_count = len(doc_lengths)
        if self.doc_count == 0:
            raise BuildError("cannot build an index over an empty corpus")
        self.total_token_count = sum(doc_lengths.values())
        self.avg_doc_length = self.total_token_count / self.doc_count
        if self.avg_doc_length <= 0:
            raise BuildError("corpus contains no tokens")
        self.df = {term: len(plist) for term, plist in postings.items()}
        self.collection_tf = {term: sum(tf for _, tf in plist) for term, plist in postings.items()}
        self._doc_tf: dict[str, dict[str, int]] = {d: {} for d in doc_lengths}
        for term, plist in postings.items():
            for doc_id, tf in plist:
                self._doc_tf[doc_id][term] = tf

    def __contains__(self, doc_id) -> bool:
        return doc_id in self.doc_lengths

    def term_frequencies(self, doc_id: str) -> dict[str, int]:
        try:
            return self._doc_tf[doc_id]
        except KeyError:
            raise UnknownDocumentError(f"unknown doc_id {doc_id!r}") from None

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def save(self, path) -> None:
        payload = {
            "doc_lengths": self.doc_lengths,
            "postings": {t: [[d, tf] for d, tf in plist] for t, plist in sorted(self.postings.items())},
        }
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(INDEX_MAGIC + "\n")
            json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "InvertedIndex":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != INDEX_MAGIC:
                raise LoadError(f"not an index file (header {header!r})", path, 1)
            payload = json.load(fh)
        postings = {t: [(d, int(tf)) for d, tf in plist] for t, plist in payload["postings"].items()}
        return cls(postings, {d: int(n) for d, n in payload["doc_lengths"].items()})


def build_index(corpus: Corpus) -> InvertedIndex:
    if len(corpus) == 0:
        raise BuildError("cannot build an index over an empty corpus")
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths = {}
    for doc in corpus:
        doc_lengths[doc.doc_id] = doc.length
        for term, tf in Counter(doc.tokens).items():
            postings.setdefault(term, []).append((doc.doc_id, tf))
    for plist in postings.values():
        plist.sort()
    return InvertedIndex(postings, doc_lengths)


def bm25_term(idf: float, tf: float, doc_length: float, avgdl: float, params: Bm25Params) -> float:
    if tf <= 0:
        return 0.0
    norm = params.k1 * (1.0 - params.b + params.b * doc_length / avgdl)
    return idf * tf * (params.k1 + 1.0) / (tf + norm)


def bm25_score(index: InvertedIndex, params: Bm25Params, query: Query, doc_id: str) -> float:
    """BM25 with Lucene-style idf; repeated query terms count once per occurrence."""
    tfs = index.term_frequencies(doc_id)
    length = index.doc_lengths[doc_id]
    total = 0.0
    for term in query.tokens:
        tf = tfs.get(term, 0)
        if tf:
            total += bm25_term(index.idf(term), tf, length, index.avg_doc_length, params)
    return total


def retrieve_topk(index: InvertedIndex, params: Bm25Params, query: Query, k: int) -> RankedList:
    """Top-k documents with positive score; ties go to the smaller doc_id."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    scores: dict[str, float] = {}
    avgdl = index.avg_doc_length
    # Accumulate in query-token order so sums match bm25_score bit for bit.
    for term in query.tokens:
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for doc_id, tf in plist:
            contrib = bm25_term(idf, tf, index.doc_lengths[doc_id], avgdl, params)
            scores[doc_id] = scores.get(doc_id, 0.0) + contrib
    ranked = sorted(((d, s) for d, s in scores.items() if s > 0), key=lambda e: (-e[1], e[0]))
    return RankedList(query.query_id, tuple(ranked[:k]))
