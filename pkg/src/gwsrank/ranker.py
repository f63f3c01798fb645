"""Feature-based trainable rankers, the weighted pairwise hinge loss and
its AdamW training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import Query, QrelSet
from .errors import ContractError, LoadError, TrainingError
from .evaluation import RunRanking, ndcg_at
from .index import Bm25Params, InvertedIndex, bm25_score

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "bm25",
    "sum_tf",
    "matched_fraction",
    "sum_idf_matched",
    "relative_length",
    "max_normalized_tf",
    "query_length",
)
NUM_FEATURES = len(FEATURE_NAMES)
HIDDEN_UNITS = 16
ARCHITECTURES = ("linear", "mlp")
CHECKPOINT_MAGIC = "gwsrank-ranker v1"


def extract_features(index: InvertedIndex, params: Bm25Params, query: Query, doc_id: str) -> np.ndarray:
    """Raw lexical features of a (query, document) pair.

    Sums run over query tokens with multiplicity, like BM25 itself.
    """
    tfs = index.term_frequencies(doc_id)
    length = index.doc_lengths[doc_id]
    sum_tf = 0
    matched = 0
    sum_idf = 0.0
    max_ntf = 0.0
    for term in query.tokens:
        tf = tfs.get(term, 0)
        if tf:
            sum_tf += tf
            matched += 1
            sum_idf += index.idf(term)
            max_ntf = max(max_ntf, tf / length)
    n_q = len(query.tokens)
    return np.array([
        bm25_score(index, params, query, doc_id),
        float(sum_tf),
        matched / n_q if n_q else 0.0,
        sum_idf,
        length / index.avg_doc_length,
        max_ntf,
        float(n_q),
    ])


class FeatureStore:
    """Standardized features for every (query, doc) pair in a set of pools.

    Mean and standard deviation are fitted once on the training pools and
    frozen; later lookups reuse them.
    """

    def __init__(self, index: InvertedIndex, params: Bm25Params, queries: Sequence[Query],
                 pools: Mapping[str, Sequence[str]], fit_on: Sequence[str] | None = None):
        self._rows: dict[tuple[str, str], int] = {}
        by_id = {q.query_id: q for q in queries}
        raw = []
        for qid in sorted(pools):
            query = by_id[qid]
            for doc_id in pools[qid]:
                if (qid, doc_id) in self._rows:
                    continue
                self._rows[(qid, doc_id)] = len(raw)
                raw.append(extract_features(index, params, query, doc_id))
        self.raw = np.array(raw).reshape(-1, NUM_FEATURES)
        fit_ids = set(pools if fit_on is None else fit_on)
        fit_rows = [r for (q, _), r in self._rows.items() if q in fit_ids]
        sample = self.raw[fit_rows] if fit_rows else self.raw
        self.mean = sample.mean(axis=0) if len(sample) else np.zeros(NUM_FEATURES)
        std = sample.std(axis=0) if len(sample) else np.ones(NUM_FEATURES)
        self.std = np.where(std > 1e-12, std, 1.0)
        self.values = (self.raw - self.mean) / self.std

    def __contains__(self, key) -> bool:
        return key in self._rows

    def matrix(self, query_id: str, doc_ids: Sequence[str]) -> np.ndarray:
        try:
            rows = [self._rows[(query_id, d)] for d in doc_ids]
        except KeyError as exc:
            raise ContractError(f"no features for {exc.args[0]}") from None
        return self.values[rows]


@dataclass
class RankerParams:
    architecture: str
    seed: int
    weights: dict[str, np.ndarray]

    def copy(self) -> "RankerParams":
        return RankerParams(self.architecture, self.seed, {k: v.copy() for k, v in self.weights.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.weights[k]) for k in sorted(self.weights)])

    def equals(self, other: "RankerParams") -> bool:
        return (self.architecture == other.architecture
                and self.weights.keys() == other.weights.keys()
                and all(np.array_equal(self.weights[k], other.weights[k]) for k in self.weights))

    def to_text(self) -> str:
        lines = [CHECKPOINT_MAGIC, f"architecture {self.architecture}", f"seed {self.seed}"]
        for name in sorted(self.weights):
            arr = self.weights[name]
            lines.append(" ".join([name, *map(str, arr.shape)]) if arr.shape else name)
            lines.append(" ".join(repr(float(x)) for x in np.ravel(arr)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RankerParams":
        lines = text.splitlines()
        if not lines or lines[0] != CHECKPOINT_MAGIC:
            raise LoadError("not a ranker checkpoint")
        try:
            architecture = lines[1].split()[1]
            seed = int(lines[2].split()[1])
            weights = {}
            for head, body in zip(lines[3::2], lines[4::2]):
                name, *dims = head.split()
                values = np.array([float(x) for x in body.split()])
                weights[name] = values.reshape(tuple(int(d) for d in dims))
        except (IndexError, ValueError) as exc:
            raise LoadError(f"corrupt checkpoint ({exc})") from None
        return cls(architecture, seed, weights)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "RankerParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def _glorot(rng, fan_in, fan_out, shape):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(architecture: str, seed: int) -> RankerParams:
    rng = np.random.default_rng(seed)
    if architecture == "linear":
        weights = {"w": _glorot(rng, NUM_FEATURES, 1, (NUM_FEATURES,)), "b": np.zeros(())}
    elif architecture == "mlp":
        weights = {
            "W1": _glorot(rng, NUM_FEATURES, HIDDEN_UNITS, (HIDDEN_UNITS, NUM_FEATURES)),
            "b1": np.zeros(HIDDEN_UNITS),
            "w2": _glorot(rng, HIDDEN_UNITS, 1, (HIDDEN_UNITS,)),
            "b2": np.zeros(()),
        }
    else:
        raise ContractError(f"unknown architecture {architecture!r}")
    return RankerParams(architecture, seed, weights)


def score_batch(params: RankerParams, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    if X.shape[1] != NUM_FEATURES:
        raise ContractError(f"expected {NUM_FEATURES} features, got {X.shape[1]}")
    w = params.weights
    if params.architecture == "linear":
        return X @ w["w"] + w["b"]
    hidden = np.tanh(X @ w["W1"].T + w["b1"])
    return hidden @ w["w2"] + w["b2"]


def score(params: RankerParams, features) -> float:
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise ContractError("score takes a single feature vector")
    return float(score_batch(params, features[None, :])[0])


def _backward(params: RankerParams, X: np.ndarray, upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of sum(upstream * score_batch(params, X)) w.r.t. the weights."""
    w = params.weights
    if params.architecture == "linear":
        return {"w": upstream @ X, "b": np.asarray(upstream.sum())}
    hidden = np.tanh(X @ w["W1"].T + w["b1"])
    d_hidden = np.outer(upstream, w["w2"]) * (1.0 - hidden ** 2)
    return {
        "W1": d_hidden.T @ X,
        "b1": d_hidden.sum(axis=0),
        "w2": upstream @ hidden,
        "b2": np.asarray(upstream.sum()),
    }


@dataclass(frozen=True)
class TrainPair:
    query_id: str
    doc_id_1: str
    doc_id_2: str
    preference: int

    def __post_init__(self):
        if self.preference not in (1, -1):
            raise ContractError(f"preference must be +1 or -1, got {self.preference}")
        if self.doc_id_1 == self.doc_id_2:
            raise ContractError("a pair needs two distinct documents")


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ContractError("hinge margin must be positive")


@dataclass(frozen=True)
class OptimizerConfig:
    # Transformer fine-tuning typically uses 5e-5.
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.01
    batch_size: int = 16
    max_steps: int = 10000
    validation_every: int = 1000
    seed: int = 0
    adam_epsilon: float = 1e-8


def normalized_weights(query_ids: Sequence[str], weights) -> np.ndarray:
    try:
        w = np.array([float(weights[q]) for q in query_ids])
    except KeyError as exc:
        raise ContractError(f"no weight for query {exc.args[0]}") from None
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ContractError("query weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ContractError("all query weights in the batch are zero")
    return w / total


def hinge_terms(preference: np.ndarray, s1: np.ndarray, s2: np.ndarray, epsilon: float) -> np.ndarray:
    return np.maximum(0.0, epsilon - preference * (s1 - s2))


def pair_loss(batch: Sequence[TrainPair], student_scores: Sequence[tuple[float, float]],
              weights, config: LossConfig = LossConfig()) -> tuple[float, np.ndarray]:
    """In-batch weighted hinge loss; returns the loss and per-pair contributions."""
    if not batch:
        raise ContractError("empty batch")
    if len(student_scores) != len(batch):
        raise ContractError("one (s1, s2) score pair is needed per training pair")
    nw = normalized_weights([p.query_id for p in batch], weights)
    s = np.asarray(student_scores, dtype=float).reshape(len(batch), 2)
    pref = np.array([p.preference for p in batch], dtype=float)
    contrib = nw * hinge_terms(pref, s[:, 0], s[:, 1], config.epsilon)
    return float(contrib.sum()), contrib


def loss_and_grad(params: RankerParams, X1: np.ndarray, X2: np.ndarray, preference: np.ndarray,
                  norm_weights: np.ndarray, epsilon: float) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted hinge loss of a feature batch and its (sub)gradient.

    ``norm_weights`` must already sum to one over the batch. The
    subgradient is zero where the margin is met exactly.
    """
    s1 = score_batch(params, X1)
    s2 = score_batch(params, X2)
    margin = epsilon - preference * (s1 - s2)
    active = margin > 0
    loss = float(np.sum(norm_weights * np.where(active, margin, 0.0)))
    coef = np.where(active, -norm_weights * preference, 0.0)
    g1 = _backward(params, X1, coef)
    g2 = _backward(params, X2, -coef)
    return loss, {k: g1[k] + g2[k] for k in g1}


class RerankSet:
    """Fixed per-query candidate pools with features and judgments, used to
    measure how well a ranker orders them."""

    def __init__(self, pools: Mapping[str, Sequence[str]], features: FeatureStore, qrels: QrelSet):
        if not pools:
            raise ContractError("empty validation set")
        self.query_ids = sorted(pools)
        self.pools = {q: list(pools[q]) for q in self.query_ids}
        self.matrices = {q: features.matrix(q, self.pools[q]) for q in self.query_ids}
        self.qrels = qrels

    def rankings(self, params: RankerParams) -> list[RunRanking]:
        out = []
        for qid in self.query_ids:
            scores = score_batch(params, self.matrices[qid])
            out.append(RunRanking.from_scores(qid, zip(self.pools[qid], scores.tolist())))
        return out

    def ndcg10(self, params: RankerParams) -> float:
        values = [ndcg_at(r, self.qrels, 10) for r in self.rankings(params)]
        return math.fsum(values) / len(values)


@dataclass
class _AdamW:
    config: OptimizerConfig
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def step(self, weights: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.config
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            update = (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + c.adam_epsilon)
            # Decoupled decay on weight matrices only, not biases.
            if name.startswith(("w", "W")):
                update = update + c.weight_decay * weights[name]
            weights[name] = weights[name] - c.learning_rate * update


def train(pairs: Sequence[TrainPair], weights, features: FeatureStore, architecture: str,
          opt: OptimizerConfig = OptimizerConfig(), loss: LossConfig = LossConfig(),
          validation: RerankSet | None = None, *, initial: RankerParams | None = None,
          init_seed: int = 0, shuffle_seed=None) -> RankerParams:
    """Minimize the weighted hinge loss over ``pairs`` with AdamW.

    Batches are consecutive slices of a seeded permutation, reshuffled
    once every pair has been visited. A batch with no pair inside the
    margin has zero gradient and leaves parameters and optimizer state
    untouched. With ``validation``, the checkpoint with the best NDCG@10
    over evaluations every ``opt.validation_every`` steps (and at the last
    step) is returned; ties keep the earlier checkpoint.
    """
    if not pairs:
        raise ContractError("no training pairs")
    params = (initial if initial is not None else init_params(architecture, init_seed)).copy()
    if params.architecture != architecture:
        raise ContractError("initial parameters do not match the architecture")
    X1 = np.vstack([features.matrix(p.query_id, [p.doc_id_1]) for p in pairs])
    X2 = np.vstack([features.matrix(p.query_id, [p.doc_id_2]) for p in pairs])
    pref = np.array([p.preference for p in pairs], dtype=float)
    try:
        raw_w = np.array([float(weights[p.query_id]) for p in pairs])
    except KeyError as exc:
        raise ContractError(f"no weight for query {exc.args[0]}") from None
    if np.any(raw_w < 0) or not np.all(np.isfinite(raw_w)):
        raise ContractError("query weights must be finite and non-negative")

    rng = np.random.default_rng(opt.seed if shuffle_seed is None else shuffle_seed)
    n = len(pairs)
    order = rng.permutation(n)
    pos = 0
    optimizer = _AdamW(opt)
    best, best_score = None, -math.inf
    for step in range(1, opt.max_steps + 1):
        if pos >= n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + opt.batch_size]
        pos += opt.batch_size
        total = raw_w[idx].sum()
        if total <= 0:
            raise TrainingError("all query weights in the batch are zero", step)
        with np.errstate(invalid="ignore", over="ignore"):
            value, grads = loss_and_grad(params, X1[idx], X2[idx], pref[idx], raw_w[idx] / total, loss.epsilon)
        if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingError("non-finite loss or gradient", step)
        if value > 0 or any(np.any(g) for g in grads.values()):
            optimizer.step(params.weights, grads)
            if not all(np.all(np.isfinite(p)) for p in params.weights.values()):
                raise TrainingError("parameters became non-finite", step)
        if validation is not None and (step % opt.validation_every == 0 or step == opt.max_steps):
            current = validation.ndcg10(params)
            if current > best_score:
                best, best_score = params.copy(), current
    return best if best is not None else params
