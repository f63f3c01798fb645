import math

import numpy as np
import pytest

from gwsrank.corpus import Corpus, Document, Query
from gwsrank.errors import ContractError, TrainingError
from gwsrank.index import Bm25Params, build_index
from gwsrank.qpp import QueryWeights
from gwsrank.ranker import (
    NUM_FEATURES,
    LossConfig,
    OptimizerConfig,
    RankerParams,
    TrainPair,
    extract_features,
    init_params,
    loss_and_grad,
    pair_loss,
    score,
    score_batch,
    train,
)


@pytest.fixture
def two_docs():
    return build_index(Corpus([Document.from_text("d1", "a b"), Document.from_text("d2", "b b")]))


def test_features_hand_computed(two_docs):
    f = extract_features(two_docs, Bm25Params(0.9, 0.4), Query.from_text("q", "b"), "d2")
    idf_b = math.log(1.2)
    expected = [idf_b * 3.8 / 2.9, 2.0, 1.0, idf_b, 1.0, 1.0, 1.0]
    np.testing.assert_allclose(f, expected, atol=1e-12)


def test_features_no_overlap(two_docs):
    f = extract_features(two_docs, Bm25Params(), Query.from_text("q", "zz yy"), "d1")
    assert f.shape == (NUM_FEATURES,)
    assert f[0] == f[1] == f[2] == f[3] == f[5] == 0.0
    assert f[4] == 1.0 and f[6] == 2.0


def test_features_query_equals_doc(two_docs):
    f = extract_features(two_docs, Bm25Params(), Query.from_text("q", "a b"), "d1")
    assert f[2] == 1.0


def test_init_params():
    a, b = init_params("mlp", 3), init_params("mlp", 3)
    assert a.equals(b)
    lin = init_params("linear", 0)
    assert lin.weights["w"].shape == (7,) and lin.weights["b"].shape == ()
    assert lin.flat().size == 8
    for s in range(10):
        for arch in ("linear", "mlp"):
            assert not init_params(arch, s).equals(init_params(arch, s + 100))
    limit = math.sqrt(6 / (7 + 16))
    w1 = init_params("mlp", 1).weights["W1"]
    assert np.all(np.abs(w1) <= limit)
    assert np.all(init_params("mlp", 1).weights["b1"] == 0)
    with pytest.raises(ContractError):
        init_params("transformer", 0)


def test_score_identities():
    x = np.arange(1.0, 8.0)
    zero = RankerParams("linear", 0, {"w": np.zeros(7), "b": np.zeros(())})
    assert score(zero, x) == 0.0
    proj = RankerParams("linear", 0, {"w": np.eye(7)[0], "b": np.zeros(())})
    assert score(proj, x) == 1.0
    mlp = init_params("mlp", 0)
    mlp.weights["W1"][:] = 0.0
    mlp.weights["b2"] = np.asarray(0.37)
    assert score(mlp, x) == pytest.approx(0.37)
    with pytest.raises(ContractError):
        score(zero, np.ones(5))


def pair(q="q", pref=1):
    return TrainPair(q, "x", "y", pref)


def test_pair_loss_examples():
    w = QueryWeights({"q": 2.0, "a": 3.0, "b": 1.0})
    assert pair_loss([pair(pref=1)], [(0.5, 0.5)], w)[0] == 1.0
    assert pair_loss([pair(pref=-1)], [(0.5, 0.5)], w)[0] == 1.0
    assert pair_loss([pair(pref=1)], [(3.0, 1.0)], w)[0] == 0.0
    loss, contrib = pair_loss([pair("a"), pair("b")], [(0.0, 0.0), (0.0, 0.0)], w)
    assert loss == pytest.approx(1.0)
    np.testing.assert_allclose(contrib, [0.75, 0.25])


def test_pair_loss_contracts():
    with pytest.raises(ContractError):
        pair_loss([pair("missing")], [(0, 0)], QueryWeights({"q": 1.0}))
    with pytest.raises(ContractError):
        pair_loss([pair()], [(0, 0)], QueryWeights({"q": 0.0}))
    with pytest.raises(ContractError):
        pair_loss([], [], QueryWeights({"q": 1.0}))
    with pytest.raises(ContractError):
        TrainPair("q", "x", "y", 0)


def test_weight_scaling_invariance_and_normalization():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 17))
        qids = [f"q{i}" for i in rng.integers(0, 5, size=n)]
        batch = [TrainPair(q, "x", "y", int(rng.choice([-1, 1]))) for q in qids]
        scores = rng.normal(size=(n, 2))
        w = {f"q{i}": float(rng.uniform(0.1, 5)) for i in range(5)}
        c = float(rng.uniform(0.01, 100))
        base, contrib = pair_loss(batch, scores, QueryWeights(w))
        scaled, _ = pair_loss(batch, scores, QueryWeights({k: v * c for k, v in w.items()}))
        assert scaled == pytest.approx(base, abs=1e-10)
        hinge = np.maximum(0, 1 - np.array([p.preference for p in batch]) * (scores[:, 0] - scores[:, 1]))
        nw = np.divide(contrib, hinge, out=np.full(n, np.nan), where=hinge > 0)
        raw = np.array([w[q] for q in qids])
        assert abs((raw / raw.sum()).sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(nw[hinge > 0], (raw / raw.sum())[hinge > 0], rtol=1e-12)


def test_antisymmetry_and_sign_only_dependence():
    w = QueryWeights({"q": 1.0})
    for s1, s2 in [(0.3, -0.2), (2.0, 0.5), (-1.0, 1.0)]:
        a = pair_loss([pair(pref=1)], [(s1, s2)], w)[0]
        b = pair_loss([pair(pref=-1)], [(s2, s1)], w)[0]
        assert a == b


def _flat_loss(params, X1, X2, pref, nw, eps):
    return loss_and_grad(params, X1, X2, pref, nw, eps)[0]


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    h, checked = 1e-5, 0
    while checked < 20:
        arch = ("linear", "mlp")[checked % 2]
        params = init_params(arch, int(rng.integers(1000)))
        for k in params.weights:
            params.weights[k] = params.weights[k] + rng.normal(scale=0.3, size=params.weights[k].shape)
        n = int(rng.integers(1, 17))
        X1, X2 = rng.normal(size=(n, 7)), rng.normal(size=(n, 7))
        pref = rng.choice([-1.0, 1.0], size=n)
        raw = rng.uniform(0.1, 3, size=n)
        nw = raw / raw.sum()
        margin = 1.0 - pref * (score_batch(params, X1) - score_batch(params, X2))
        if np.any(np.abs(margin) < 1e-6):
            continue
        _, grads = loss_and_grad(params, X1, X2, pref, nw, 1.0)
        for name, arr in params.weights.items():
            flat = arr.reshape(-1)
            for i in range(flat.size):
                plus, minus = params.copy(), params.copy()
                plus.weights[name].reshape(-1)[i] += h
                minus.weights[name].reshape(-1)[i] -= h
                fd = (_flat_loss(plus, X1, X2, pref, nw, 1.0) - _flat_loss(minus, X1, X2, pref, nw, 1.0)) / (2 * h)
                an = grads[name].reshape(-1)[i]
                rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
                assert rel < 1e-4, (arch, name, i, an, fd)
        checked += 1


def test_subgradient_zero_at_kink():
    params = RankerParams("linear", 0, {"w": np.eye(7)[0], "b": np.zeros(())})
    X1, X2 = np.eye(7)[[0]] * 1.0, np.zeros((1, 7))
    loss, grads = loss_and_grad(params, X1, X2, np.array([1.0]), np.array([1.0]), 1.0)
    assert loss == 0.0
    assert all(not np.any(g) for g in grads.values())


class ToyFeatures:
    """Feature lookup backed by a plain dict."""

    def __init__(self, table):
        self.table = table

    def matrix(self, qid, docs):
        return np.array([self.table[(qid, d)] for d in docs])


def toy_problem():
    table = {}
    pairs = []
    for i in range(8):
        q = f"q{i}"
        table[(q, "hi")] = np.r_[1.0 + 0.1 * i, np.zeros(6)]
        table[(q, "lo")] = np.r_[-1.0 - 0.1 * i, np.zeros(6)]
        pairs.append(TrainPair(q, "hi", "lo", 1))
    weights = QueryWeights({f"q{i}": 1.0 + i for i in range(8)})
    return ToyFeatures(table), pairs, weights


def test_train_satisfied_pairs_leave_params_unchanged():
    feats, pairs, weights = toy_problem()
    start = RankerParams("linear", 0, {"w": np.r_[5.0, np.full(6, 0.3)], "b": np.asarray(0.2)})
    out = train(pairs, weights, feats, "linear", OptimizerConfig(max_steps=50, batch_size=3), initial=start)
    assert out.equals(start)


def test_train_one_step_direction():
    feats, pairs, weights = toy_problem()
    start = RankerParams("linear", 0, {"w": np.r_[-0.2, np.full(6, 0.1)], "b": np.zeros(())})
    opt = OptimizerConfig(max_steps=1, batch_size=8, weight_decay=0.0)
    X1 = feats.matrix("q0", ["hi"])
    X2 = feats.matrix("q0", ["lo"])
    _, g = loss_and_grad(start, X1, X2, np.array([1.0]), np.array([1.0]), 1.0)
    assert g["w"][0] < 0  # analytic: -(x1 - x2) for a violated positive pair
    out = train(pairs, weights, feats, "linear", opt, initial=start)
    assert out.weights["w"][0] > start.weights["w"][0]
    np.testing.assert_array_equal(out.weights["w"][1:], start.weights["w"][1:])


def test_train_deterministic_and_learns():
    feats, pairs, weights = toy_problem()
    opt = OptimizerConfig(max_steps=300, batch_size=4, learning_rate=0.01, seed=5)
    a = train(pairs, weights, feats, "mlp", opt, init_seed=2)
    b = train(pairs, weights, feats, "mlp", opt, init_seed=2)
    assert a.equals(b)
    for p in pairs:
        s1 = score(a, feats.matrix(p.query_id, [p.doc_id_1])[0])
        s2 = score(a, feats.matrix(p.query_id, [p.doc_id_2])[0])
        assert s1 > s2


def test_train_non_finite_raises():
    feats, pairs, weights = toy_problem()
    feats.table[("q0", "hi")] = np.r_[np.inf, np.zeros(6)]
    with pytest.raises(TrainingError, match="step"):
        train(pairs, weights, feats, "linear", OptimizerConfig(max_steps=20, batch_size=8))


def test_checkpoint_text_round_trip(tmp_path):
    for arch in ("linear", "mlp"):
        p = init_params(arch, 9)
        p.save(tmp_path / f"{arch}.txt")
        again = RankerParams.load(tmp_path / f"{arch}.txt")
        assert again.equals(p) and again.seed == 9
        assert (tmp_path / f"{arch}.txt").read_text().startswith("gwsrank-ranker v1\narchitecture ")
