import filecmp

import numpy as np
import pytest

from gwsrank.config import ExperimentConfig
from gwsrank.corpus import read_qrels
from gwsrank.errors import ConfigError, LoadError
from gwsrank.evaluation import RunRanking
from gwsrank.gws import GwsConfig
from gwsrank.index import Bm25Params, build_index, retrieve_topk
from gwsrank.ranker import OptimizerConfig
from gwsrank.synthetic import SyntheticSpec, gen_synthetic, generate
from gwsrank.trec import parse_run, write_run


def test_noise_free_collection_is_separable():
    corpus, queries, qrels = generate(SyntheticSpec(num_queries=20, noise_rate=0.0, seed=9))
    index = build_index(corpus)
    for q in queries:
        ranked = retrieve_topk(index, Bm25Params(), q, index.doc_count)
        grades = [qrels.grade(q.query_id, d) for d in ranked.doc_ids]
        assert grades[:4] == [1, 1, 1, 1]
        assert sum(grades) == 4


def test_gen_synthetic_is_deterministic(tmp_path):
    a = gen_synthetic(SyntheticSpec(seed=3), tmp_path / "a")
    b = gen_synthetic(SyntheticSpec(seed=3), tmp_path / "b")
    for key in a:
        assert filecmp.cmp(a[key], b[key], shallow=False)
    assert len(read_qrels(a["qrels"]).judgments) == 200
    lines = a["qrels"].read_text().splitlines()
    assert len(lines) == 200 and all(line.split()[-1] == "1" for line in lines)


@pytest.mark.parametrize("bad", [
    dict(relevant_per_query=20),
    dict(vocab_size=3),
    dict(noise_rate=1.5),
    dict(num_queries=0),
])
def test_synthetic_spec_validation(bad):
    with pytest.raises(ConfigError):
        SyntheticSpec(**bad).validate()


def test_run_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rankings = []
    for i in range(100):
        n = int(rng.integers(1, 15))
        scores = np.sort(rng.normal(size=n) * 10)[::-1]
        scores = np.round(scores, 3) + np.arange(n)[::-1] * 1e-3  # distinct after printing
        rankings.append(RunRanking(f"q{i}", tuple(f"d{j}" for j in rng.permutation(n)), tuple(scores)))
    path = tmp_path / "x.run"
    write_run(rankings, path, tag="t")
    back = parse_run(path)
    assert [r.query_id for r in back] == [r.query_id for r in rankings]
    for a, b in zip(rankings, back):
        assert a.doc_ids == b.doc_ids
        assert np.allclose(a.scores, b.scores, atol=1e-6)


def test_run_format(tmp_path):
    path = tmp_path / "x.run"
    write_run([RunRanking("q", ("a", "b"), (2.0, 1.0))], path, tag="bm25")
    assert path.read_text() == "q Q0 a 1 2.000000 bm25\nq Q0 b 2 1.000000 bm25\n"


def test_run_parse_errors_and_repair(tmp_path, caplog):
    path = tmp_path / "bad.run"
    path.write_text("q Q0 a 1 2.0 t\nq Q0 b two 1.0 t\n")
    with pytest.raises(LoadError) as exc:
        parse_run(path)
    assert exc.value.line == 2
    path.write_text("q Q0 a 1 2.0 t\nq Q0 b\n")
    with pytest.raises(LoadError):
        parse_run(path)
    path.write_text("q Q0 a 1 1.0 t\nq Q0 b 2 3.0 t\n")
    (r,) = parse_run(path)
    assert r.doc_ids == ("b", "a")
    assert "re-sorting" in caplog.text


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(paths={"corpus": "c.tsv", "output_dir": "out"},
                           gws=GwsConfig(algorithm="jcs", architectures=("linear", "mlp", "mlp"), qpp_enabled=False),
                           optimizer=OptimizerConfig(learning_rate=0.0025, max_steps=77), seed=5, workers=3)
    text = cfg.to_ini()
    assert "reported: 0.99" in text
    assert ExperimentConfig.from_ini(text) == cfg
    cfg.save(tmp_path / "c.ini")
    assert ExperimentConfig.load(tmp_path / "c.ini") == cfg
    assert ExperimentConfig.from_ini(ExperimentConfig().to_ini()) == ExperimentConfig()


@pytest.mark.parametrize("text", [
    "[gws]\nbogus = 1\n",
    "[optimizer]\nmax_steps = many\n",
    "[gws]\nalgorithm = nope\n",
    "not an ini",
])
def test_config_rejects_bad_input(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini(text)


def test_with_seed_propagates():
    cfg = ExperimentConfig().with_seed(11)
    assert cfg.seed == cfg.gws.base_seed == cfg.optimizer.seed == 11
