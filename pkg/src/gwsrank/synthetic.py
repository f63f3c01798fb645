"""Synthetic test collections with planted relevant documents.

Every query owns a block of documents. Its relevant documents contain all
of its topic terms, spread through long background text. Its non-relevant
documents carry each topic term with probability ``noise_rate``. Such a
term is repeated one to four times in a shorter document, which is the
kind of keyword-stuffed near miss that BM25 tends to over-reward.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, Document, QrelSet, Query, write_qrels, write_queries
from .errors import ConfigError

RELEVANT_LENGTH = (20, 60)
NOISE_LENGTH = (5, 40)
NOISE_TF = (1, 4)


@dataclass(frozen=True)
class SyntheticSpec:
    num_queries: int = 50
    docs_per_query_pool: int = 20
    vocab_size: int = 500
    topic_terms_per_query: int = 3
    noise_rate: float = 0.35
    relevant_per_query: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.num_queries < 1 or self.docs_per_query_pool < 1 or self.relevant_per_query < 1:
            raise ConfigError("num_queries, docs_per_query_pool and relevant_per_query must be >= 1")
        if self.relevant_per_query >= self.docs_per_query_pool:
            raise ConfigError("relevant_per_query must be smaller than docs_per_query_pool")
        if self.topic_terms_per_query < 1 or self.vocab_size <= self.topic_terms_per_query:
            raise ConfigError("vocab_size must exceed topic_terms_per_query (>= 1)")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigError("noise_rate must lie in [0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


def _term(i: int, width: int) -> str:
    return f"w{i:0{width}d}"


def generate(spec: SyntheticSpec) -> tuple[Corpus, list[Query], QrelSet]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    width = len(str(spec.vocab_size - 1))
    vocab = [_term(i, width) for i in rng.permutation(spec.vocab_size)]
    needed = spec.num_queries * spec.topic_terms_per_query
    n_topic = min(needed, spec.vocab_size // 2) or 1
    topic_vocab, background = vocab[:n_topic], vocab[n_topic:]

    queries, blocks = [], []
    for qi in range(spec.num_queries):
        if needed <= n_topic:
            terms = topic_vocab[qi * spec.topic_terms_per_query:(qi + 1) * spec.topic_terms_per_query]
        else:
            picks = rng.choice(n_topic, size=spec.topic_terms_per_query, replace=False)
            terms = [topic_vocab[i] for i in sorted(picks)]
        qid = f"q{qi + 1:04d}"
        queries.append(Query.from_text(qid, " ".join(terms)))
        for j in range(spec.docs_per_query_pool):
            relevant = j < spec.relevant_per_query
            if relevant:
                length = int(rng.integers(RELEVANT_LENGTH[0], RELEVANT_LENGTH[1] + 1))
                planted = list(terms)
            else:
                length = int(rng.integers(NOISE_LENGTH[0], NOISE_LENGTH[1] + 1))
                planted = []
                for term in terms:
                    if rng.random() < spec.noise_rate:
                        planted += [term] * int(rng.integers(NOISE_TF[0], NOISE_TF[1] + 1))
            words = [background[i] for i in rng.integers(len(background), size=length)] + planted
            rng.shuffle(words)
            blocks.append((qid, relevant, " ".join(words)))

    # Doc ids follow a shuffled order so they carry no hint of relevance.
    order = rng.permutation(len(blocks))
    id_width = len(str(len(blocks)))
    docs, judgments = [], {}
    for n, b in enumerate(order, start=1):
        qid, relevant, text = blocks[b]
        doc_id = f"d{n:0{id_width}d}"
        docs.append(Document.from_text(doc_id, text))
        if relevant:
            judgments[(qid, doc_id)] = 1
    judgments = dict(sorted(judgments.items()))
    return Corpus(docs), queries, QrelSet(judgments)


def gen_synthetic(spec: SyntheticSpec, out_dir) -> dict[str, Path]:
    """Write corpus.tsv, queries.tsv and qrels.txt under ``out_dir``."""
    corpus, queries, qrels = generate(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"corpus": out / "corpus.tsv", "queries": out / "queries.tsv", "qrels": out / "qrels.txt"}
    corpus.write_tsv(paths["corpus"])
    write_queries(queries, paths["queries"])
    write_qrels(qrels, paths["qrels"])
    return paths
