"""Classical query formulation baselines over subject, body or both."""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable

from .corpus import Message
from .features import CollectionStats

METHODS = ("full", "tf", "tfidf", "logtfidf", "re", "random_k", "random_pct")
SCORED_METHODS = ("tf", "tfidf", "logtfidf", "re")
FIELDS = ("subject", "body", "both")

K_GRID = tuple(range(1, 16))
PCT_GRID = (10, 20, 30, 40, 50)
LAMBDA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class FormulationConfig:
    method: str
    field: str = "both"
    k: int | None = None
    p: int | None = None
    lam: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.field not in FIELDS:
            raise ValueError(f"unknown field {self.field!r}")
        needs_k = self.method in SCORED_METHODS or self.method == "random_k"
        if needs_k != (self.k is not None):
            raise ValueError(f"k is {'required' if needs_k else 'not used'} for {self.method}")
        if (self.method == "random_pct") != (self.p is not None):
            raise ValueError("p is used by random_pct only")
        if (self.method == "re") != (self.lam is not None):
            raise ValueError("lam is used by re only")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be positive")
        if self.p is not None and not 0 < self.p <= 100:
            raise ValueError("p is a percentage in (0, 100]")
        if self.lam is not None and not 0 < self.lam < 1:
            raise ValueError("lam must lie in (0, 1)")

    @property
    def name(self) -> str:
        parts = [self.method, self.field]
        if self.k is not None:
            parts.append(f"k{self.k}")
        if self.p is not None:
            parts.append(f"p{self.p}")
        if self.lam is not None:
            parts.append(f"lam{self.lam}")
        return "-".join(parts)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def field_tokens(message: Message, field: str) -> tuple[str, ...]:
    if field == "subject":
        return message.subject_tokens
    if field == "body":
        return message.body_tokens
    return message.tokens


def unique_terms(tokens: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(tokens))


def score_terms(message: Message, method: str, field: str, stats: CollectionStats,
                lam: float | None = None) -> list[tuple[str, float]]:
    tokens = field_tokens(message, field)
    if not tokens:
        return []
    counts = Counter(tokens)

    def idf(t: str) -> float:
        df = stats.df.get(t, 0)
        return math.log(stats.n_docs / df) if df else 0.0

    if method == "tf":
        scores = {t: float(c) for t, c in counts.items()}
    elif method == "tfidf":
        scores = {t: c * idf(t) for t, c in counts.items()}
    elif method == "logtfidf":
        scores = {t: math.log1p(c) * idf(t) for t, c in counts.items()}
    elif method == "re":
        if lam is None:
            raise ValueError("relative entropy needs lam")
        n = len(tokens)
        scores = {}
        for t, c in counts.items():
            p_c = stats.p_collection(t)
            p = lam * c / n + (1 - lam) * p_c
            scores[t] = p * math.log(p / p_c) if p_c > 0 else math.inf
    else:
        raise ValueError(f"{method!r} does not score terms")
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def formulate_baseline_query(message: Message, config: FormulationConfig,
                             stats: CollectionStats | None = None,
                             instance_key: str = "") -> list[str]:
    """Query (unique terms) for ``message`` under ``config``.

    ``instance_key`` decorrelates random draws across messages while keeping
    them reproducible for a fixed seed.
    """
    tokens = field_tokens(message, config.field)
    terms = unique_terms(tokens)
    if not terms:
        return []
    if config.method == "full":
        return terms
    if config.method in SCORED_METHODS:
        if stats is None:
            raise ValueError(f"{config.method} needs collection statistics")
        ranked = score_terms(message, config.method, config.field, stats, config.lam)
        return [t for t, _ in ranked[:config.k]]
    rng = random.Random(f"{config.seed}:{instance_key}")
    pool = sorted(terms)
    if config.method == "random_k":
        n = config.k
    else:
        n = math.ceil(config.p * len(pool) / 100)
    if n >= len(pool):
        return pool
    return rng.sample(pool, n)


def sweep_configs(method: str, fields: Iterable[str] = FIELDS, seed: int = 0) -> list[FormulationConfig]:
    """Every configuration of ``method`` on its hyperparameter grid."""
    out = []
    for field in fields:
        if method == "full":
            out.append(FormulationConfig("full", field))
        elif method in ("tf", "tfidf", "logtfidf"):
            out.extend(FormulationConfig(method, field, k=k) for k in K_GRID)
        elif method == "re":
            out.extend(FormulationConfig("re", field, k=k, lam=lam) for k in K_GRID for lam in LAMBDA_GRID)
        elif method == "random_k":
            out.extend(FormulationConfig("random_k", field, k=k, seed=seed) for k in K_GRID)
        elif method == "random_pct":
            out.extend(FormulationConfig("random_pct", field, p=p, seed=seed) for p in PCT_GRID)
        else:
            raise ValueError(f"unknown method {method!r}")
    return out
