import logging

import numpy as np
import pytest

from gwsrank.gws import GwsConfig, GwsContext, Split
from gwsrank.index import build_index
from gwsrank.ranker import OptimizerConfig
from gwsrank.synthetic import SyntheticSpec, generate

FAST_OPT = OptimizerConfig(max_steps=60, validation_every=20, batch_size=16, learning_rate=0.01, seed=1)


@pytest.fixture(scope="session")
def small_collection():
    corpus, queries, qrels = generate(SyntheticSpec(num_queries=14, docs_per_query_pool=10,
                                                    relevant_per_query=3, seed=4))
    return build_index(corpus), queries, qrels


@pytest.fixture
def make_context(small_collection):
    index, queries, qrels = small_collection

    def make(**overrides):
        cfg = GwsConfig(**{"architectures": ("mlp", "linear"), "pool_depth": 10, "pairs_per_query": 8,
                           "max_iterations": 3, "patience": 5, "relevance_threshold": 1, **overrides})
        return GwsContext(cfg, index, queries[:9], Split(queries[9:12], qrels), Split(queries[12:], qrels),
                          opt=FAST_OPT)
    return make


@pytest.fixture(autouse=True)
def _quiet_warnings(caplog):
    caplog.set_level(logging.WARNING)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
