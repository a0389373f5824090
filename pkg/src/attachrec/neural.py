"""Windowed neural term ranker with an end-of-ranking (EoR) cut-off.

Every term occurrence is represented by the embeddings of the ``2L + 1``
terms centred on it plus its scaled auxiliary features.  A two-layer softplus
network ``g`` scores each occurrence; a second network ``h`` with the same
shape but separate weights scores the EoR token from the mean of all
occurrence inputs.  A softmax over the ``n + 1`` scores gives the term
distribution; the formulated query is every distinct term ranked above EoR.

Everything is plain numpy with hand-written backpropagation.
"""

from __future__ import annotations

import copy
import hashlib
import math
from collections import Counter
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .features import FEATURE_CATEGORIES, FEATURE_NAMES, PAD_ID, EncodedMessage
from .io import read_container, write_container

CKPT_MAGIC = b"ATRCKPT\x00"
CKPT_VERSION = 1

CONTEXT_WIDTHS = (3, 5, 7, 9, 11, 13, 15)
ABLATIONS = ("message", "collection", "pos", "term", "context", "term+context")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    context_width: int = 3
    embedding_dim: int = 128
    hidden_dims: tuple[int, int] = (512, 512)
    dropout: float = 0.5
    vocab_size: int = 60_002  # including padding and OOV
    aux_features: int = len(FEATURE_NAMES)
    ablate: tuple[str, ...] = ()

    def __post_init__(self):
        if self.context_width < 0:
            raise ValueError("context_width must be non-negative")
        if self.embedding_dim < 1 or min(self.hidden_dims) < 1 or self.vocab_size < 2:
            raise ValueError("dimensions must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        for name in self.ablate:
            if name not in ABLATIONS:
                raise ValueError(f"unknown ablation {name!r}")

    @property
    def window(self) -> int:
        return 2 * self.context_width + 1

    @property
    def input_dim(self) -> int:
        return self.window * self.embedding_dim + self.aux_features

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        d["ablate"] = list(self.ablate)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["hidden_dims"] = tuple(d["hidden_dims"])
        d["ablate"] = tuple(d.get("ablate", ()))
        return cls(**d)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 128
    reg_lambda: float = 0.1
    reg_coef: float | None = None  # defaults to 1 / (2 * reg_lambda)
    alpha_eor: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if min(self.learning_rate, self.eps, self.reg_lambda) <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("training hyperparameters must be positive")
        if not 0 < self.alpha_eor <= 1:
            raise ValueError("alpha_eor must lie in (0, 1]")

    @property
    def regularization(self) -> float:
        return 1.0 / (2.0 * self.reg_lambda) if self.reg_coef is None else self.reg_coef

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingPair:
    pair_id: str
    message: EncodedMessage
    silver: frozenset[str]
    score: float


@dataclass
class TermDistribution:
    probs: np.ndarray  # n term occurrences followed by EoR
    scores: np.ndarray

    @property
    def eor(self) -> float:
        return float(self.probs[-1])


# ---------------------------------------------------------------------------
# parameters

_SCORER_PARTS = ("W1", "b1", "W2", "b2", "W3", "b3")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, seed: int, scorers: Sequence[str] = ("g", "h")) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    h1, h2 = config.hidden_dims
    params = {"embedding": _glorot(rng, config.vocab_size, config.embedding_dim)}
    for s in scorers:
        params[f"{s}.W1"] = _glorot(rng, config.input_dim, h1)
        params[f"{s}.b1"] = np.zeros(h1)
        params[f"{s}.W2"] = _glorot(rng, h1, h2)
        params[f"{s}.b2"] = np.zeros(h2)
        params[f"{s}.W3"] = _glorot(rng, h2, 1)
        params[f"{s}.b3"] = np.zeros(1)
    return params


def is_weight_matrix(name: str) -> bool:
    return name == "embedding" or name.rsplit(".", 1)[-1].startswith("W")


def input_mask(config: ModelConfig) -> np.ndarray:
    """Column mask over the occurrence input vector implementing ablations."""
    d, w, L = config.embedding_dim, config.window, config.context_width
    mask = np.ones(config.input_dim)
    emb = mask[: w * d].reshape(w, d)
    for name in config.ablate:
        if name in ("term", "term+context"):
            emb[L] = 0.0
        if name in ("context", "term+context"):
            emb[:L] = 0.0
            emb[L + 1:] = 0.0
        if name in FEATURE_CATEGORIES:
            for feat in FEATURE_CATEGORIES[name]:
                mask[w * d + FEATURE_NAMES.index(feat)] = 0.0
    return mask


def window_ids(token_ids: np.ndarray, width: int) -> np.ndarray:
    """``(n, 2*width+1)`` ids of the window around each position, padded."""
    n = len(token_ids)
    padded = np.concatenate([np.full(width, PAD_ID), token_ids, np.full(width, PAD_ID)])
    idx = np.arange(n)[:, None] + np.arange(2 * width + 1)[None, :]
    return padded[idx]


# ---------------------------------------------------------------------------
# forward / backward of one scorer network


def _softplus(a: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, a)


def _scorer_forward(params, prefix, x, rng, dropout):
    cache = {"x": x}
    a1 = x @ params[f"{prefix}.W1"] + params[f"{prefix}.b1"]
    z1 = _softplus(a1)
    m1 = _dropout_mask(rng, z1.shape, dropout)
    z1d = z1 * m1 if m1 is not None else z1
    a2 = z1d @ params[f"{prefix}.W2"] + params[f"{prefix}.b2"]
    z2 = _softplus(a2)
    m2 = _dropout_mask(rng, z2.shape, dropout)
    z2d = z2 * m2 if m2 is not None else z2
    out = (z2d @ params[f"{prefix}.W3"])[:, 0] + params[f"{prefix}.b3"][0]
    cache.update(a1=a1, z1d=z1d, m1=m1, a2=a2, z2d=z2d, m2=m2)
    return out, cache


def _dropout_mask(rng, shape, p):
    if rng is None or p == 0:
        return None
    return (rng.random(shape) >= p) / (1.0 - p)


def _scorer_backward(params, prefix, cache, dout, grads):
    grads[f"{prefix}.W3"] += cache["z2d"].T @ dout[:, None]
    grads[f"{prefix}.b3"] += dout.sum(keepdims=True)
    dz2 = dout[:, None] @ params[f"{prefix}.W3"].T
    if cache["m2"] is not None:
        dz2 = dz2 * cache["m2"]
    da2 = dz2 * expit(cache["a2"])
    grads[f"{prefix}.W2"] += cache["z1d"].T @ da2
    grads[f"{prefix}.b2"] += da2.sum(axis=0)
    dz1 = da2 @ params[f"{prefix}.W2"].T
    if cache["m1"] is not None:
        dz1 = dz1 * cache["m1"]
    da1 = dz1 * expit(cache["a1"])
    grads[f"{prefix}.W1"] += cache["x"].T @ da1
    grads[f"{prefix}.b1"] += da1.sum(axis=0)
    return da1 @ params[f"{prefix}.W1"].T


# ---------------------------------------------------------------------------
# models


class _WindowModel:
    kind = "abstract"
    scorers: tuple[str, ...] = ()

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray],
                 vocab_terms: Sequence[str] = (), metadata: dict | None = None):
        self.config = config
        self.params = params
        self.vocab_terms = list(vocab_terms)
        self.metadata = metadata or {}
        self._mask = input_mask(config)

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, vocab_terms: Sequence[str] = ()):
        return cls(config, init_params(config, seed, cls.scorers), vocab_terms, {"init_seed": seed})

    def copy(self):
        return type(self)(self.config, {k: v.copy() for k, v in self.params.items()},
                          self.vocab_terms, copy.deepcopy(self.metadata))

    def build_inputs(self, messages: Sequence[EncodedMessage]):
        """Stacked occurrence inputs for a batch plus bookkeeping for backprop."""
        L = self.config.context_width
        wins, feats, offsets = [], [], [0]
        for msg in messages:
            if len(msg) == 0:
                raise ValueError(f"message {msg.message_id} has no terms")
            wins.append(window_ids(msg.token_ids, L))
            feats.append(msg.features)
            offsets.append(offsets[-1] + len(msg))
        win = np.concatenate(wins)
        emb = self.params["embedding"][win].reshape(len(win), -1)
        x = np.concatenate([emb, np.concatenate(feats)], axis=1) * self._mask
        return x, win, np.array(offsets)

    def _embedding_grad(self, dx, win, grads):
        dx = dx * self._mask
        d = self.config.embedding_dim
        demb = dx[:, : win.shape[1] * d].reshape(win.shape[0], win.shape[1], d)
        np.add.at(grads["embedding"], win, demb)

    def regularizer(self, coef: float) -> float:
        return coef * sum(float(np.sum(v * v)) for k, v in self.params.items() if is_weight_matrix(k))

    def add_regularizer_grad(self, coef: float, grads) -> None:
        for k, v in self.params.items():
            if is_weight_matrix(k):
                grads[k] += 2.0 * coef * v

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


class TermRankingModel(_WindowModel):
    kind = "cnn"
    scorers = ("g", "h")

    def raw_scores(self, messages: Sequence[EncodedMessage], rng=None):
        """Term scores per message and the EoR score per message."""
        x, win, offsets = self.build_inputs(messages)
        p = self.config.dropout
        g, gcache = _scorer_forward(self.params, "g", x, rng, p)
        xbar = np.stack([x[offsets[i]:offsets[i + 1]].mean(axis=0) for i in range(len(messages))])
        h, hcache = _scorer_forward(self.params, "h", xbar, rng, p)
        return g, h, (x, win, offsets, gcache, hcache)

    def forward(self, message: EncodedMessage, train: bool = False, rng=None) -> TermDistribution:
        if len(message) == 0:
            raise ValueError("cannot score an empty message")
        g, h, _ = self.raw_scores([message], rng if train else None)
        scores = np.concatenate([g, h])
        return TermDistribution(np.exp(scores - logsumexp(scores)), scores)


class PointwiseModel(_WindowModel):
    """Per-occurrence logistic scorer (no EoR token)."""

    kind = "cnn-p"
    scorers = ("g",)

    def raw_scores(self, messages: Sequence[EncodedMessage], rng=None):
        x, win, offsets = self.build_inputs(messages)
        g, cache = _scorer_forward(self.params, "g", x, rng, self.config.dropout)
        return g, (x, win, offsets, cache)

    def probabilities(self, message: EncodedMessage) -> np.ndarray:
        g, _ = self.raw_scores([message])
        return expit(g)


def init_model(config: ModelConfig, seed: int = 0, vocab_terms: Sequence[str] = ()) -> TermRankingModel:
    return TermRankingModel.init(config, seed, vocab_terms)


# ---------------------------------------------------------------------------
# targets and losses


def target_distribution(tokens: Sequence[str], silver: Iterable[str], alpha_eor: float = 0.95) -> np.ndarray:
    """Target over the n occurrences plus EoR.

    Each silver term receives an equal share of ``alpha_eor`` split across its
    occurrences; EoR receives ``1 - alpha_eor``.
    """
    silver = frozenset(silver)
    counts = Counter(tokens)
    missing = [t for t in silver if counts[t] == 0]
    if missing or not silver:
        raise ValueError(f"silver terms absent from message: {sorted(missing)}")
    q = np.zeros(len(tokens) + 1)
    for i, tok in enumerate(tokens):
        if tok in silver:
            q[i] = alpha_eor / (counts[tok] * len(silver))
    q[-1] = 1.0 - alpha_eor
    return q


def _pair_terms(pair: TrainingPair, g_seg: np.ndarray, h_val: float, alpha: float):
    """Per-pair cross-entropy and cut-off losses with gradients w.r.t. the scores."""
    q = target_distribution(pair.message.tokens, pair.silver, alpha)
    scores = np.append(g_seg, h_val)
    logp = scores - logsumexp(scores)
    xent = -float(np.dot(q, logp))
    dscores = np.exp(logp) - q
    silver_pos = np.flatnonzero(np.isin(np.array(pair.message.tokens), list(pair.silver)))
    j = silver_pos[np.argmin(g_seg[silver_pos])]
    gap = g_seg[j] - h_val
    cutoff = float(gap * gap)
    dg = dscores[:-1].copy()
    dg[j] += 2.0 * gap
    dh = dscores[-1] - 2.0 * gap
    return xent, cutoff, dg, dh


def compute_loss(model: TermRankingModel, batch: Sequence[TrainingPair], config: TrainingConfig,
                 rng: np.random.Generator | None = None, regularize: bool = True,
                 with_grad: bool = True):
    """Batch objective and its gradient.

    ``rng`` enables dropout; pass ``None`` for a deterministic evaluation.
    Returns ``(loss, grads)`` with ``grads`` None when ``with_grad`` is false.
    """
    if not batch:
        raise ValueError("empty batch")
    g, h, (x, win, offsets, gcache, hcache) = model.raw_scores([p.message for p in batch], rng)
    nb = len(batch)
    data_loss = 0.0
    dg = np.zeros_like(g)
    dh = np.zeros_like(h)
    for i, pair in enumerate(batch):
        lo, hi = offsets[i], offsets[i + 1]
        xent, cutoff, dgi, dhi = _pair_terms(pair, g[lo:hi], h[i], config.alpha_eor)
        contrib = pair.score * (xent + cutoff)
        if not math.isfinite(contrib):
            raise TrainingError(f"non-finite loss for pair {pair.pair_id}")
        data_loss += contrib / nb
        dg[lo:hi] = pair.score * dgi / nb
        dh[i] = pair.score * dhi / nb
    loss = data_loss
    if regularize:
        loss += model.regularizer(config.regularization)
    if not with_grad:
        return loss, None

    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    dx = _scorer_backward(model.params, "g", gcache, dg, grads)
    dxbar = _scorer_backward(model.params, "h", hcache, dh, grads)
    counts = np.diff(offsets)
    dx += np.repeat(dxbar / counts[:, None], counts, axis=0)
    model._embedding_grad(dx, win, grads)
    if regularize:
        model.add_regularizer_grad(config.regularization, grads)
    return loss, grads


def data_loss(model: TermRankingModel, pairs: Sequence[TrainingPair], config: TrainingConfig,
              batch_size: int = 256) -> float:
    """Mean score-weighted data loss without regularization or dropout."""
    total = 0.0
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        loss, _ = compute_loss(model, chunk, config, None, regularize=False, with_grad=False)
        total += loss * len(chunk)
    return total / len(pairs)


def pointwise_loss(model: PointwiseModel, batch: Sequence[TrainingPair], config: TrainingConfig,
                   rng: np.random.Generator | None = None, regularize: bool = True,
                   with_grad: bool = True):
    """Score-weighted binary cross-entropy against silver-term membership."""
    if not batch:
        raise ValueError("empty batch")
    g, (x, win, offsets, cache) = model.raw_scores([p.message for p in batch], rng)
    nb = len(batch)
    loss = 0.0
    dg = np.zeros_like(g)
    for i, pair in enumerate(batch):
        lo, hi = offsets[i], offsets[i + 1]
        y = np.isin(np.array(pair.message.tokens), list(pair.silver)).astype(float)
        seg = g[lo:hi]
        # log(1 + e^s) - y s is the logistic loss written in logits
        bce = float(np.mean(np.logaddexp(0.0, seg) - y * seg))
        if not math.isfinite(bce):
            raise TrainingError(f"non-finite loss for pair {pair.pair_id}")
        loss += pair.score * bce / nb
        dg[lo:hi] = pair.score * (expit(seg) - y) / (len(seg) * nb)
    if regularize:
        loss += model.regularizer(config.regularization)
    if not with_grad:
        return loss, None
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    dx = _scorer_backward(model.params, "g", cache, dg, grads)
    model._embedding_grad(dx, win, grads)
    if regularize:
        model.add_regularizer_grad(config.regularization, grads)
    return loss, grads


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _fit(model, train_pairs, val_pairs, tcfg: TrainingConfig, loss_fn, progress=None):
    if not train_pairs:
        raise TrainingError("empty training set")
    if not val_pairs:
        raise TrainingError("empty validation set")
    rng = np.random.default_rng([tcfg.seed, 1])
    opt = Adam(model.params, tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.eps)

    def evaluate(pairs):
        total = 0.0
        for start in range(0, len(pairs), 256):
            chunk = pairs[start:start + 256]
            loss, _ = loss_fn(model, chunk, tcfg, None, regularize=False, with_grad=False)
            total += loss * len(chunk)
        return total / len(pairs)

    val_losses = [evaluate(val_pairs)]
    train_losses = [evaluate(train_pairs)]
    # epoch 0 (the initial weights) is recorded but never selected
    best_epoch, best = 0, {k: v.copy() for k, v in model.params.items()}
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(len(train_pairs))
        for start in range(0, len(order), tcfg.batch_size):
            batch = [train_pairs[i] for i in order[start:start + tcfg.batch_size]]
            _, grads = loss_fn(model, batch, tcfg, rng)
            opt.step(model.params, grads)
        train_losses.append(evaluate(train_pairs))
        val_losses.append(evaluate(val_pairs))
        if best_epoch == 0 or val_losses[-1] < val_losses[best_epoch]:
            best_epoch = epoch
            best = {k: v.copy() for k, v in model.params.items()}
        if progress is not None:
            progress(epoch, train_losses[-1], val_losses[-1])
    model.params = best
    model.metadata.update(
        training=tcfg.to_dict(), best_epoch=best_epoch,
        val_losses=val_losses, train_losses=train_losses,
        n_train=len(train_pairs), n_val=len(val_pairs),
    )
    return model


def train(train_pairs: Sequence[TrainingPair], val_pairs: Sequence[TrainingPair],
          model_config: ModelConfig, training_config: TrainingConfig,
          vocab_terms: Sequence[str] = (), progress=None) -> TermRankingModel:
    """Adam training; returns the epoch with the lowest validation data loss."""
    model = TermRankingModel.init(model_config, training_config.seed, vocab_terms)
    return _fit(model, list(train_pairs), list(val_pairs), training_config, compute_loss, progress)


def train_pointwise(train_pairs: Sequence[TrainingPair], val_pairs: Sequence[TrainingPair],
                    model_config: ModelConfig, training_config: TrainingConfig,
                    vocab_terms: Sequence[str] = (), progress=None) -> PointwiseModel:
    model = PointwiseModel.init(model_config, training_config.seed, vocab_terms)
    model = _fit(model, list(train_pairs), list(val_pairs), training_config, pointwise_loss, progress)
    threshold, f1 = select_threshold(model, val_pairs)
    model.metadata.update(threshold=threshold, val_f1=f1)
    return model


# ---------------------------------------------------------------------------
# query formulation


def cut_at_eor(tokens: Sequence[str], term_scores: np.ndarray, eor_score: float) -> list[str]:
    """Distinct terms ranked above EoR; ties favour the earlier position, EoR sits last."""
    n = len(tokens)
    scores = np.append(term_scores, eor_score)
    order = np.lexsort((np.arange(n + 1), -scores))
    query: list[str] = []
    for pos in order:
        if pos == n:
            break
        if tokens[pos] not in query:
            query.append(tokens[pos])
    return query


def formulate_query_cnn(model: TermRankingModel, message: EncodedMessage) -> list[str]:
    if len(message) == 0:
        return []
    g, h, _ = model.raw_scores([message])
    return cut_at_eor(message.tokens, g, float(h[0]))


def term_max_scores(tokens: Sequence[str], scores: np.ndarray) -> dict[str, float]:
    best: dict[str, float] = {}
    for tok, s in zip(tokens, scores):
        if tok not in best or s > best[tok]:
            best[tok] = float(s)
    return best


def formulate_query_pointwise(model: PointwiseModel, message: EncodedMessage,
                              threshold: float | None = None) -> list[str]:
    if len(message) == 0:
        return []
    if threshold is None:
        threshold = model.metadata["threshold"]
    best = term_max_scores(message.tokens, model.probabilities(message))
    ranked = sorted(best.items(), key=lambda kv: -kv[1])
    return [t for t, s in ranked if s > threshold]


def sweep_threshold(scores: Sequence[dict[str, float]], labels: Sequence[set[str]]) -> tuple[float, float]:
    """Threshold maximising micro F1 of ``score > threshold`` over unique terms.

    Candidates are 0 and every observed score; ties go to the smaller threshold.
    """
    flat = [(s, term in lab) for sc, lab in zip(scores, labels) for term, s in sc.items()]
    n_pos = sum(1 for _, y in flat if y)
    candidates = sorted({0.0, *(s for s, _ in flat)})
    best_t, best_f1 = candidates[0], -1.0
    for t in candidates:
        tp = sum(1 for s, y in flat if s > t and y)
        fp = sum(1 for s, y in flat if s > t and not y)
        denom = 2 * tp + fp + (n_pos - tp)
        f1 = 2 * tp / denom if denom else 0.0
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    return best_t, best_f1


def select_threshold(model: PointwiseModel, pairs: Sequence[TrainingPair]) -> tuple[float, float]:
    scores = [term_max_scores(p.message.tokens, model.probabilities(p.message)) for p in pairs]
    return sweep_threshold(scores, [set(p.silver) for p in pairs])


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: _WindowModel, path: str | Path) -> None:
    meta = {
        "kind": model.kind,
        "config": model.config.to_dict(),
        "vocab_terms": model.vocab_terms,
        "vocab_hash": hashlib.sha256("\n".join(model.vocab_terms).encode("utf-8")).hexdigest(),
        "metadata": model.metadata,
    }
    write_container(path, CKPT_MAGIC, CKPT_VERSION, meta, dict(sorted(model.params.items())))


def load_model(path: str | Path) -> _WindowModel:
    meta, arrays = read_container(path, CKPT_MAGIC, CKPT_VERSION)
    cls = {"cnn": TermRankingModel, "cnn-p": PointwiseModel}[meta["kind"]]
    return cls(ModelConfig.from_dict(meta["config"]), arrays, meta["vocab_terms"], meta["metadata"])


def with_ablation(config: ModelConfig, category: str) -> ModelConfig:
    return replace(config, ablate=tuple(sorted({*config.ablate, category})))
