"""TREC run files: "qid Q0 docid rank score tag"."""

from __future__ import annotations

import logging
from typing import Iterable

from .errors import LoadError
from .evaluation import RunRanking

logger = logging.getLogger(__name__)


def write_run(rankings: Iterable[RunRanking], path, tag: str = "gwsrank") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ranking in rankings:
            for rank, (doc_id, s) in enumerate(zip(ranking.doc_ids, ranking.scores), start=1):
                fh.write(f"{ranking.query_id} Q0 {doc_id} {rank} {s:.6f} {tag}\n")


def parse_run(path) -> list[RunRanking]:
    """Read a run file; a query whose scores increase with rank is re-sorted
    by score (with a warning)."""
    per_query: dict[str, list[tuple[int, str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise LoadError("expected 'qid Q0 docid rank score tag'", path, lineno)
            qid, _, doc_id, rank, s, _ = parts
            try:
                entry = (int(rank), doc_id, float(s))
            except ValueError:
                raise LoadError("rank must be an integer and score a number", path, lineno) from None
            per_query.setdefault(qid, []).append(entry)
    rankings = []
    for qid, entries in per_query.items():
        entries.sort(key=lambda e: e[0])
        scores = [e[2] for e in entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            logger.warning("run for %s has scores increasing with rank; re-sorting by score", qid)
            entries.sort(key=lambda e: (-e[2], e[0]))
        rankings.append(RunRanking(qid, tuple(e[1] for e in entries), tuple(e[2] for e in entries)))
    return rankings
