"""Per-occurrence term features for the neural term ranker."""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .corpus import Corpus, Message
from .io import read_container, write_container
from .text import noun_lexicon, verb_lexicon

FEATURE_NAMES = (
    "is_noun", "is_verb", "is_other",
    "is_subject", "is_body", "abs_tf", "rel_tf", "rel_pos", "is_oov_repr",
    "idf", "tf_idf", "abs_cf", "rel_cf", "rel_entropy", "scq", "ictf", "pointwise_scs",
)
FLAG_FEATURES = frozenset({"is_noun", "is_verb", "is_other", "is_subject", "is_body", "is_oov_repr"})
REAL_MASK = np.array([name not in FLAG_FEATURES for name in FEATURE_NAMES])

FEATURE_CATEGORIES = {
    "pos": ("is_noun", "is_verb", "is_other"),
    "message": ("is_subject", "is_body", "abs_tf", "rel_tf", "rel_pos", "is_oov_repr"),
    "collection": ("idf", "tf_idf", "abs_cf", "rel_cf", "rel_entropy", "scq", "ictf", "pointwise_scs"),
}

VOCAB_SIZE = 60_000
PAD_ID = 0
OOV_ID = 1
ENTROPY_LAMBDA = 0.5

FEATURE_MAGIC = b"ATRFEAT\x00"
FEATURE_VERSION = 1

NOUN, VERB, OTHER = "noun", "verb", "other"


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class CollectionStats:
    n_docs: int
    df: dict[str, int]
    cf: dict[str, int]
    total_tokens: int

    def p_collection(self, term: str) -> float:
        return self.cf.get(term, 0) / self.total_tokens

    def idf(self, term: str) -> float:
        return math.log(self.n_docs / self.df[term])


def build_collection_stats(messages: Iterable[Message] | Corpus) -> CollectionStats:
    if isinstance(messages, Corpus):
        messages = messages.messages.values()
    df: Counter[str] = Counter()
    cf: Counter[str] = Counter()
    n = 0
    for msg in messages:
        toks = msg.tokens
        cf.update(toks)
        df.update(set(toks))
        n += 1
    if n == 0:
        raise FeatureError("cannot build statistics over an empty corpus")
    total = sum(cf.values())
    if total == 0:
        raise FeatureError("corpus contains no tokens")
    return CollectionStats(n, dict(sorted(df.items())), dict(sorted(cf.items())), total)


class Tagger(Protocol):
    name: str

    def tag(self, tokens: Sequence[str]) -> list[str]: ...


class LexiconTagger:
    """Dictionary lookup; words listed as both noun and verb count as nouns."""

    name = "lexicon-v1"

    def __init__(self, nouns: frozenset[str] | None = None, verbs: frozenset[str] | None = None):
        self.nouns = noun_lexicon() if nouns is None else nouns
        self.verbs = verb_lexicon() if verbs is None else verbs

    def tag(self, tokens: Sequence[str]) -> list[str]:
        return [NOUN if t in self.nouns else VERB if t in self.verbs else OTHER for t in tokens]


class ConstantTagger:
    name = "constant-v1"

    def __init__(self, tag: str = OTHER):
        self._tag = tag

    def tag(self, tokens: Sequence[str]) -> list[str]:
        return [self._tag] * len(tokens)


def pos_tag(tokens: Sequence[str], tagger: Tagger | None = None) -> list[str]:
    return (tagger or LexiconTagger()).tag(tokens)


class Vocabulary:
    """Most frequent terms get ids from 2; id 0 is padding, id 1 the shared OOV slot."""

    def __init__(self, terms: Sequence[str]):
        self.terms = list(terms)
        self.ids = {t: i + 2 for i, t in enumerate(self.terms)}

    @classmethod
    def from_stats(cls, stats: CollectionStats, size: int = VOCAB_SIZE) -> "Vocabulary":
        ranked = sorted(stats.cf.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([t for t, _ in ranked[:size]])

    def __len__(self) -> int:
        return len(self.terms) + 2

    def lookup(self, term: str) -> int:
        return self.ids.get(term, OOV_ID)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.terms).encode("utf-8")).hexdigest()


def compute_term_features(position: int, message: Message, stats: CollectionStats,
                          vocab: Vocabulary, tags: Sequence[str] | None = None,
                          counts: Counter | None = None) -> np.ndarray:
    """Unscaled feature row for the token at ``position`` (subject then body)."""
    tokens = message.tokens
    n = len(tokens)
    term = tokens[position]
    if counts is None:
        counts = Counter(tokens)
    if tags is None:
        tags = LexiconTagger().tag(tokens)
    df, cf = stats.df.get(term, 0), stats.cf.get(term, 0)
    if df == 0 or cf == 0:
        raise FeatureError(f"term {term!r} of message {message.message_id} missing from statistics")

    abs_tf = counts[term]
    rel_tf = abs_tf / n
    p_c = cf / stats.total_tokens
    idf = math.log(stats.n_docs / df)
    p_smooth = ENTROPY_LAMBDA * rel_tf + (1 - ENTROPY_LAMBDA) * p_c
    in_subject = position < len(message.subject_tokens)
    tag = tags[position]
    return np.array([
        tag == NOUN, tag == VERB, tag == OTHER,
        in_subject, not in_subject,
        abs_tf, rel_tf, position / (n - 1) if n > 1 else 0.0,
        vocab.lookup(term) == OOV_ID,
        idf, abs_tf * idf, cf, p_c,
        p_smooth * math.log(p_smooth / p_c),
        (1 + math.log(cf)) * idf,
        math.log(stats.total_tokens / cf),
        rel_tf * math.log2(rel_tf / p_c),
    ], dtype=np.float64)


def message_features(message: Message, stats: CollectionStats, vocab: Vocabulary,
                     tagger: Tagger | None = None) -> np.ndarray:
    tokens = message.tokens
    if not tokens:
        return np.zeros((0, len(FEATURE_NAMES)))
    tags = (tagger or LexiconTagger()).tag(tokens)
    counts = Counter(tokens)
    return np.stack([compute_term_features(i, message, stats, vocab, tags, counts)
                     for i in range(len(tokens))])


def scale_features_message_level(matrix: np.ndarray, real_mask: np.ndarray = REAL_MASK) -> np.ndarray:
    """Min-max scale the real-valued columns of one message; constant columns become 0."""
    out = np.array(matrix, dtype=np.float64, copy=True)
    if out.shape[0] == 0:
        return out
    cols = out[:, real_mask]
    lo = cols.min(axis=0)
    span = cols.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    out[:, real_mask] = np.where(span > 0, (cols - lo) / safe, 0.0)
    return out


@dataclass
class EncodedMessage:
    """Model-ready view of one message: token ids plus scaled features."""

    message_id: str
    tokens: tuple[str, ...]
    token_ids: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return len(self.tokens)


def encode_message(message: Message, stats: CollectionStats, vocab: Vocabulary,
                   tagger: Tagger | None = None) -> EncodedMessage:
    raw = message_features(message, stats, vocab, tagger)
    return EncodedMessage(
        message_id=message.message_id,
        tokens=message.tokens,
        token_ids=np.array([vocab.lookup(t) for t in message.tokens], dtype=np.int64),
        features=scale_features_message_level(raw),
    )


def save_feature_matrix(path: str | Path, enc: EncodedMessage, tagger_name: str) -> None:
    meta = {"message_id": enc.message_id, "columns": list(FEATURE_NAMES),
            "tokens": list(enc.tokens), "tagger": tagger_name}
    write_container(path, FEATURE_MAGIC, FEATURE_VERSION, meta,
                    {"token_ids": enc.token_ids, "features": enc.features})


def load_feature_matrix(path: str | Path) -> tuple[EncodedMessage, str]:
    meta, arrays = read_container(path, FEATURE_MAGIC, FEATURE_VERSION)
    if tuple(meta["columns"]) != FEATURE_NAMES:
        raise FeatureError("feature column layout mismatch")
    enc = EncodedMessage(meta["message_id"], tuple(meta["tokens"]),
                         arrays["token_ids"], arrays["features"])
    return enc, meta["tagger"]
