"""Document, query and relevance-judgment ingestion."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DuplicateIdError, LoadError

logger = logging.getLogger(__name__)

_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters.

    >>> tokenize("What is BM25?")
    ['what', 'is', 'bm25']
    """
    return [tok for tok in _SPLIT.split(text.lower()) if tok]


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    tokens: tuple[str, ...]

    @property
    def length(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_text(cls, doc_id: str, text: str) -> "Document":
        return cls(doc_id, text, tuple(tokenize(text)))


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    tokens: tuple[str, ...]

    @classmethod
    def from_text(cls, query_id: str, text: str) -> "Query":
        return cls(query_id, text, tuple(tokenize(text)))


class Corpus:
    """An ordered, immutable collection of documents keyed by id."""

    def __init__(self, documents: Iterable[Document]):
        self.documents: tuple[Document, ...] = tuple(documents)
        self._by_id: dict[str, Document] = {}
        for doc in self.documents:
            if not doc.doc_id:
                raise LoadError("empty doc_id")
            if doc.doc_id in self._by_id:
                raise DuplicateIdError(f"duplicate doc_id {doc.doc_id!r}")
            self._by_id[doc.doc_id] = doc
        self.total_token_count = sum(doc.length for doc in self.documents)

    @property
    def doc_count(self) -> int:
        return len(self.documents)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def __contains__(self, doc_id) -> bool:
        return doc_id in self._by_id

    def __getitem__(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def write_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for doc in self.documents:
                fh.write(f"{doc.doc_id}\t{_flatten(doc.text)}\n")


def _flatten(text: str) -> str:
    return text.replace("\t", " ").replace("\r", " ").replace("\n", " ")


@dataclass(frozen=True)
class QrelSet:
    """Graded judgments; unjudged pairs read as grade 0."""

    judgments: Mapping[tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self):
        grouped: dict[str, dict[str, int]] = {}
        for (q, d), g in self.judgments.items():
            grouped.setdefault(q, {})[d] = g
        object.__setattr__(self, "_grouped", grouped)

    def grade(self, query_id: str, doc_id: str) -> int:
        return self.judgments.get((query_id, doc_id), 0)

    def for_query(self, query_id: str) -> dict[str, int]:
        return dict(self._grouped.get(query_id, {}))

    def query_ids(self) -> set[str]:
        return set(self._grouped)

    def __len__(self) -> int:
        return len(self.judgments)


def ingest_documents(path, format: str | None = None) -> Corpus:
    """Load a corpus from TSV ("doc_id<TAB>text") or JSON lines ({"id", "text"})."""
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix in (".jsonl", ".json") else "tsv"
    if format not in ("tsv", "jsonl"):
        raise LoadError(f"unknown document format {format!r}", path)
    docs = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if format == "tsv":
                doc_id, sep, text = line.partition("\t")
                if not sep or not doc_id:
                    raise LoadError("expected 'doc_id<TAB>text'", path, lineno)
            else:
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise LoadError(f"invalid JSON ({exc.msg})", path, lineno) from None
                if not isinstance(record, dict) or "id" not in record or "text" not in record:
                    raise LoadError("record needs 'id' and 'text' fields", path, lineno)
                doc_id, text = str(record["id"]), record["text"]
                if not doc_id or not isinstance(text, str):
                    raise LoadError("bad 'id' or 'text' value", path, lineno)
            if doc_id in seen:
                raise DuplicateIdError(f"duplicate doc_id {doc_id!r}", path, lineno)
            seen.add(doc_id)
            docs.append(Document.from_text(doc_id, text))
    return Corpus(docs)


def read_queries(path) -> list[Query]:
    """Read "qid<TAB>text" lines. Queries with no tokens are dropped."""
    queries = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            qid, sep, text = line.partition("\t")
            if not sep or not qid:
                raise LoadError("expected 'query_id<TAB>text'", path, lineno)
            if qid in seen:
                raise DuplicateIdError(f"duplicate query_id {qid!r}", path, lineno)
            seen.add(qid)
            query = Query.from_text(qid, text)
            if not query.tokens:
                logger.warning("dropping query %s: no tokens after tokenization", qid)
                continue
            queries.append(query)
    return queries


def read_qrels(path, known_queries: Iterable[str] | None = None) -> QrelSet:
    """Read TREC qrels ("qid 0 docid grade"), grades restricted to 0..3."""
    judgments: dict[tuple[str, str], int] = {}
    known = set(known_queries) if known_queries is not None else None
    unknown = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise LoadError("expected 'qid 0 docid grade'", path, lineno)
            qid, _, doc_id, raw = parts
            try:
                grade = int(raw)
            except ValueError:
                raise LoadError(f"grade {raw!r} is not an integer", path, lineno) from None
            if not 0 <= grade <= 3:
                raise LoadError(f"grade {grade} outside [0, 3]", path, lineno)
            if known is not None and qid not in known:
                unknown.add(qid)
            judgments[(qid, doc_id)] = grade
    if unknown:
        logger.warning("qrels reference %d unknown queries (kept)", len(unknown))
    return QrelSet(judgments)


def ingest_queries_and_qrels(query_path, qrels_path=None) -> tuple[list[Query], QrelSet]:
    queries = read_queries(query_path)
    if qrels_path is None:
        return queries, QrelSet({})
    return queries, read_qrels(qrels_path, known_queries=[q.query_id for q in queries])


def write_queries(queries: Iterable[Query], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q in queries:
            fh.write(f"{q.query_id}\t{_flatten(q.text)}\n")


def write_qrels(qrels: QrelSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (qid, doc_id), grade in qrels.judgments.items():
            fh.write(f"{qid} 0 {doc_id} {grade}\n")
