"""Iterative weak supervision for learning-to-rank, bootstrapped from BM25."""

from .corpus import Corpus, Document, QrelSet, Query, ingest_documents, read_qrels, read_queries, tokenize
from .errors import GwsError
from .evaluation import evaluate, paired_t_test, per_query_diff
from .gws import GwsConfig, run_cross_labeling, run_greedy_multi, run_gws, run_jcs, run_self_labeling
from .index import Bm25Params, InvertedIndex, build_index, retrieve_topk
from .qpp import QppConfig, compute_query_weights, nqc
from .ranker import LossConfig, OptimizerConfig, RankerParams, train

__version__ = "0.1.0"
