import csv
import json

import pytest

from gwsrank.benchmark import BenchmarkSetup, write_cli_inputs
from gwsrank.cli import export_iteration_curves, main
from gwsrank.evaluation import MetricsRecord
from gwsrank.gws import GwsReport
from gwsrank.synthetic import SyntheticSpec

SMALL = SyntheticSpec(num_queries=14, docs_per_query_pool=10, relevant_per_query=3, seed=4)
FAST = BenchmarkSetup(test_queries=3, validation_queries=3, max_steps=60, validation_every=20)


@pytest.fixture
def inputs(tmp_path):
    return write_cli_inputs(4, tmp_path / "data", FAST, SMALL)


def read_curves(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_self_curves_and_bm25_row(inputs, tmp_path):
    out = tmp_path / "self"
    assert main(["gws", "--config", str(inputs), "--algorithm", "self", "--max-iterations", "3",
                 "--out-dir", str(out)]) == 0
    rows = read_curves(out / "curves.csv")
    assert rows[0] == ["iteration", "model", "ndcg_at_1", "ndcg_at_10", "map", "mrr"]
    assert [r[0] for r in rows[1:]] == ["0", "1", "2", "3"]

    data = inputs.parent
    assert main(["eval", "--run", str(out / "runs" / "bm25.run"), "--qrels", str(data / "qrels.txt"),
                 "--relevance-threshold", "1", "--out-dir", str(tmp_path / "ev")]) == 0
    summary = dict(line.split("\t") for line in (tmp_path / "ev" / "summary.tsv").read_text().splitlines())
    assert rows[1][2:] == [summary[m] for m in ("ndcg_at_1", "ndcg_at_10", "map", "mrr")]

    assert main(["curves", "--report", str(out / "report.json"), "--out", str(tmp_path / "c.csv")]) == 0
    assert (tmp_path / "c.csv").read_text() == (out / "curves.csv").read_text()
    for name in ("config.ini", "weights.tsv", "report.tsv", "checkpoints/best_mlp-1.txt", "runs/mlp-1.run",
                 "runs/mlp-1.metrics.tsv", "triplets/iter01_mlp-1.tsv"):
        assert (out / name).exists(), name


def test_cross_curves(inputs, tmp_path):
    out = tmp_path / "cross"
    assert main(["gws", "--config", str(inputs), "--algorithm", "cross", "--max-iterations", "2",
                 "--out-dir", str(out)]) == 0
    rows = read_curves(out / "curves.csv")[1:]
    assert [(r[0], r[1]) for r in rows] == [("0", "bm25"), ("1", "mlp-1"), ("1", "linear-2"),
                                           ("2", "mlp-1"), ("2", "linear-2")]
    report = json.loads((out / "report.json").read_text())
    assert report["algorithm"] == "cross"


def test_ws_sig_diff(inputs, tmp_path):
    assert main(["ws", "--config", str(inputs), "--out-dir", str(tmp_path / "ws")]) == 0
    assert main(["gws", "--config", str(inputs), "--no-qpp", "--max-iterations", "1",
                 "--out-dir", str(tmp_path / "plain")]) == 0
    weights = (tmp_path / "plain" / "weights.tsv").read_text().splitlines()
    assert all(line.split("\t")[1] == "1.0" for line in weights)
    a, b = tmp_path / "ws" / "runs" / "mlp-1.metrics.tsv", tmp_path / "ws" / "runs" / "bm25.metrics.tsv"
    assert main(["sig", str(a), str(b), "--comparisons", "2", "--out", str(tmp_path / "sig.tsv")]) == 0
    lines = (tmp_path / "sig.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["metric", "mean_a", "mean_b", "t", "p", "significant"]
    assert len(lines) == 5
    assert main(["diff", str(a), str(a), "--out", str(tmp_path / "diff.tsv")]) == 0
    rows = [line.split("\t") for line in (tmp_path / "diff.tsv").read_text().splitlines()[1:]]
    assert all(r[3] == str(len(MetricsRecord.read_tsv(a).per_query)) for r in rows)


def test_index_and_search(inputs, tmp_path):
    data = inputs.parent
    assert main(["index", "--corpus", str(data / "corpus.tsv"), "--out", str(tmp_path / "idx")]) == 0
    assert main(["search", "--index", str(tmp_path / "idx"), "--queries", str(data / "queries.tsv"),
                 "-k", "5", "--out", str(tmp_path / "a.run")]) == 0
    assert main(["search", "--corpus", str(data / "corpus.tsv"), "--queries", str(data / "queries.tsv"),
                 "-k", "5", "--out", str(tmp_path / "b.run")]) == 0
    assert (tmp_path / "a.run").read_text() == (tmp_path / "b.run").read_text()
    assert len((tmp_path / "a.run").read_text().splitlines()) == 14 * 5


def test_gen_synthetic_command(tmp_path):
    assert main(["gen-synthetic", "--out-dir", str(tmp_path), "--seed", "2"]) == 0
    assert len((tmp_path / "qrels.txt").read_text().splitlines()) == 200


def test_exit_codes(tmp_path, inputs):
    assert main(["gws", "--corpus", str(tmp_path / "missing.tsv"), "--out-dir", str(tmp_path / "o")]) == 3
    bad = tmp_path / "bad.tsv"
    bad.write_text("only-one-column\n")
    assert main(["index", "--corpus", str(bad), "--out", str(tmp_path / "idx")]) == 2
    (tmp_path / "bad.ini").write_text("[gws]\nwhat = 1\n")
    assert main(["gws", "--config", str(tmp_path / "bad.ini"), "--out-dir", str(tmp_path / "o")]) == 3
    (tmp_path / "m.tsv").write_text("q1\tndcg_at_10\t0.5\n")
    (tmp_path / "n.tsv").write_text("q2\tndcg_at_10\t0.5\n")
    assert main(["diff", str(tmp_path / "m.tsv"), str(tmp_path / "n.tsv"), "--out", str(tmp_path / "d")]) == 4


def test_empty_report_is_rejected(tmp_path):
    from gwsrank.errors import ContractError
    with pytest.raises(ContractError):
        export_iteration_curves(GwsReport("self"), tmp_path / "c.csv")
