"""Tokenization and the embedded word lists."""

from __future__ import annotations

import string
import unicodedata
from functools import lru_cache
from importlib import resources

PUNCTUATION = string.punctuation


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip punctuation at token edges.

    Interior characters are kept, so ``"v1.2,"`` becomes ``"v1.2"``.
    """
    tokens = []
    for raw in text.lower().split():
        token = raw.strip(PUNCTUATION)
        if token:
            tokens.append(token)
    return tokens


def has_digit(token: str) -> bool:
    return any(ch.isdigit() for ch in token)


def has_punctuation(token: str) -> bool:
    return any(ch in PUNCTUATION or unicodedata.category(ch).startswith("P") for ch in token)


def _load_wordlist(name: str) -> frozenset[str]:
    text = resources.files("attachrec").joinpath("data").joinpath(name).read_text(encoding="utf-8")
    return frozenset(
        line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


@lru_cache(maxsize=None)
def stopwords() -> frozenset[str]:
    return _load_wordlist("stopwords.txt")


@lru_cache(maxsize=None)
def noun_lexicon() -> frozenset[str]:
    return _load_wordlist("nouns.txt")


@lru_cache(maxsize=None)
def verb_lexicon() -> frozenset[str]:
    return _load_wordlist("verbs.txt")
