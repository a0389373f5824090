"""Per-mailbox query-likelihood retrieval and attachable-item ranking.

Messages are scored with the Dirichlet-smoothed query-likelihood model,
``mu`` being the average message length of the indexed mailbox.  Items are
ranked with a normalized mixture over the retrieved messages: every retrieved
message votes with its (rescaled) retrieval probability for the items in its
conversation context, and each item's total is divided by the number of
pre-``t'`` mailbox messages whose context contains it.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Corpus, Message
from .io import read_container, write_container

INDEX_MAGIC = b"ATRIDX\x00\x00"
INDEX_VERSION = 1

DEFAULT_MESSAGE_LIMIT = 1000
DEFAULT_ITEM_LIMIT = 100


class EmptyIndexError(ValueError):
    pass


class UnanswerableQuery(ValueError):
    """None of the query terms occurs in the indexed collection."""


@dataclass(frozen=True)
class ItemRanking:
    entries: tuple[tuple[str, float], ...]
    limit: int = DEFAULT_ITEM_LIMIT

    def item_ids(self) -> list[str]:
        return [iid for iid, _ in self.entries]

    def rank_of(self, item_id: str) -> int | None:
        for pos, (iid, _) in enumerate(self.entries, start=1):
            if iid == item_id:
                return pos
        return None

    def __len__(self) -> int:
        return len(self.entries)


class Index:
    """Inverted index over one mailbox; immutable after construction."""

    def __init__(
        self,
        user: str,
        doc_ids: Sequence[str],
        timestamps: Sequence[int],
        thread_ids: Sequence[str],
        doc_items: Sequence[Sequence[str]],
        doc_tokens: Sequence[Sequence[str]],
    ):
        if not doc_ids:
            raise EmptyIndexError(f"mailbox {user!r} has no messages to index")
        order = sorted(range(len(doc_ids)), key=lambda i: doc_ids[i])
        self.user = user
        self.doc_ids: list[str] = [doc_ids[i] for i in order]
        self.timestamps = np.array([timestamps[i] for i in order], dtype=np.int64)
        self.thread_ids: list[str] = [thread_ids[i] for i in order]
        self.doc_items: list[tuple[str, ...]] = [tuple(sorted(set(doc_items[i]))) for i in order]
        self.doc_pos = {mid: i for i, mid in enumerate(self.doc_ids)}

        lengths = []
        acc: dict[str, list[tuple[int, int]]] = defaultdict(list)
        for pos, i in enumerate(order):
            counts = Counter(doc_tokens[i])
            lengths.append(len(doc_tokens[i]))
            for term in sorted(counts):
                acc[term].append((pos, counts[term]))
        self.doc_len = np.array(lengths, dtype=np.float64)
        self.postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.cf: dict[str, int] = {}
        self.df: dict[str, int] = {}
        for term in sorted(acc):
            plist = acc[term]
            docs = np.array([p for p, _ in plist], dtype=np.int64)
            tfs = np.array([tf for _, tf in plist], dtype=np.int64)
            self.postings[term] = (docs, tfs)
            self.cf[term] = int(tfs.sum())
            self.df[term] = len(plist)
        self.total_tokens = int(self.doc_len.sum())
        self.n_docs = len(self.doc_ids)
        self.mu = self.total_tokens / self.n_docs
        if self.mu <= 0:
            raise EmptyIndexError(f"mailbox {user!r} contains no tokens")

    # -- statistics -------------------------------------------------------

    def collection_prob(self, term: str) -> float:
        return self.cf.get(term, 0) / self.total_tokens

    def tf(self, term: str, message_id: str) -> int:
        post = self.postings.get(term)
        if post is None:
            return 0
        docs, tfs = post
        pos = self.doc_pos[message_id]
        j = np.searchsorted(docs, pos)
        return int(tfs[j]) if j < len(docs) and docs[j] == pos else 0

    def answerable_terms(self, query: Iterable[str]) -> list[str]:
        return [t for t in query if self.cf.get(t, 0) > 0]

    # -- scoring ----------------------------------------------------------

    def log_scores(self, query: Iterable[str], t_prime: float | None = None) -> np.ndarray:
        """Dirichlet query log-likelihood of every indexed message.

        With ``t_prime`` the collection statistics (cf, total tokens, mu)
        come from the messages older than ``t_prime`` only, so later mail
        cannot influence the scores.  Scores of newer messages are then
        meaningless and must be ignored by the caller.
        """
        if t_prime is None or self.timestamps.max() < t_prime:
            visible = None
            cf = self.cf
            total, mu = self.total_tokens, self.mu
        else:
            visible = self.timestamps < t_prime
            total = float(self.doc_len[visible].sum())
            n = int(visible.sum())
            if n == 0 or total == 0:
                raise UnanswerableQuery("query unanswerable: no messages before t'")
            mu = total / n
            cf = {}
            for term in set(query):
                post = self.postings.get(term)
                if post is not None:
                    cf[term] = int(post[1][visible[post[0]]].sum())
        terms = [t for t in query if cf.get(t, 0) > 0]
        if not terms:
            raise UnanswerableQuery("query unanswerable: no term occurs in the collection")
        log_denom = np.log(self.doc_len + mu)
        scores = np.zeros(self.n_docs)
        for term in terms:
            background = mu * cf[term] / total
            contrib = np.full(self.n_docs, math.log(background))
            docs, tfs = self.postings[term]
            contrib[docs] = np.log(tfs + background)
            scores += contrib - log_denom
        return scores

    # -- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        terms = list(self.postings)
        offsets = np.zeros(len(terms) + 1, dtype=np.int64)
        for i, term in enumerate(terms):
            offsets[i + 1] = offsets[i] + len(self.postings[term][0])
        docs = np.concatenate([self.postings[t][0] for t in terms]) if terms else np.zeros(0, np.int64)
        tfs = np.concatenate([self.postings[t][1] for t in terms]) if terms else np.zeros(0, np.int64)
        meta = {
            "user": self.user,
            "doc_ids": self.doc_ids,
            "thread_ids": self.thread_ids,
            "doc_items": [list(x) for x in self.doc_items],
            "terms": terms,
            "mu": self.mu,
        }
        arrays = {"timestamps": self.timestamps, "doc_len": self.doc_len,
                  "offsets": offsets, "docs": docs, "tfs": tfs}
        write_container(path, INDEX_MAGIC, INDEX_VERSION, meta, arrays)

    @classmethod
    def load(cls, path: str | Path) -> "Index":
        meta, arrays = read_container(path, INDEX_MAGIC, INDEX_VERSION)
        doc_tokens: list[list[str]] = [[] for _ in meta["doc_ids"]]
        offsets, docs, tfs = arrays["offsets"], arrays["docs"], arrays["tfs"]
        for i, term in enumerate(meta["terms"]):
            for j in range(offsets[i], offsets[i + 1]):
                doc_tokens[int(docs[j])].extend([term] * int(tfs[j]))
        return cls(meta["user"], meta["doc_ids"], [int(t) for t in arrays["timestamps"]],
                   meta["thread_ids"], meta["doc_items"], doc_tokens)


def build_index(
    messages: Sequence[Message],
    message_items: Mapping[str, Sequence[str]],
    user: str = "",
    retained: set[str] | None = None,
) -> Index:
    """Index ``messages`` (one mailbox); items outside ``retained`` are ignored."""
    items = []
    for m in messages:
        its = message_items.get(m.message_id, ())
        items.append([i for i in its if retained is None or i in retained])
    return Index(
        user=user,
        doc_ids=[m.message_id for m in messages],
        timestamps=[m.timestamp for m in messages],
        thread_ids=[m.thread_id for m in messages],
        doc_items=items,
        doc_tokens=[m.tokens for m in messages],
    )


def build_mailbox_index(corpus: Corpus, user: str, retained: set[str] | None = None,
                        exclude: set[str] | None = None) -> Index:
    msgs = corpus.mailbox_messages(user)
    if exclude:
        msgs = [m for m in msgs if m.message_id not in exclude]
    return build_index(msgs, corpus.message_items, user=user, retained=retained)


def qlm_log_score(query: Iterable[str], message_id: str, index: Index) -> float:
    terms = index.answerable_terms(query)
    if not terms:
        raise UnanswerableQuery("query unanswerable: no term occurs in the collection")
    length = index.doc_len[index.doc_pos[message_id]]
    total = 0.0
    for term in terms:
        background = index.mu * index.cf[term] / index.total_tokens
        total += math.log((index.tf(term, message_id) + background) / (length + index.mu))
    return total


def search(index: Index, query: Iterable[str], t_prime: float,
           limit: int = DEFAULT_MESSAGE_LIMIT) -> list[tuple[str, float]]:
    """Rank messages older than ``t_prime``.

    The mailbox is scored as it stood at ``t_prime``: collection statistics
    exclude newer messages.  Returns ``(message_id, prob)`` with
    ``prob = exp(score - best score)``.
    """
    eligible = np.flatnonzero(index.timestamps < t_prime)
    if eligible.size == 0:
        return []
    scores = index.log_scores(query, t_prime)
    sub = scores[eligible]
    # doc positions follow message_id order, so position breaks ties
    order = np.lexsort((eligible, -sub))[:limit]
    top = sub[order]
    probs = np.exp(top - top[0])
    return [(index.doc_ids[eligible[j]], float(p)) for j, p in zip(order, probs)]


def _context_items(index: Index, t_prime: float) -> tuple[dict[str, set[str]], dict[str, int]]:
    items: dict[str, set[str]] = defaultdict(set)
    sizes: dict[str, int] = defaultdict(int)
    for pos in np.flatnonzero(index.timestamps < t_prime):
        tid = index.thread_ids[pos]
        sizes[tid] += 1
        items[tid].update(index.doc_items[pos])
    return items, sizes


def rank_items(index: Index, query: Iterable[str], t_prime: float,
               msg_limit: int = DEFAULT_MESSAGE_LIMIT,
               item_limit: int = DEFAULT_ITEM_LIMIT) -> ItemRanking:
    """Rank attachable items of the indexed mailbox for ``query`` at ``t_prime``."""
    retrieved = search(index, query, t_prime, limit=msg_limit)
    thread_items, thread_sizes = _context_items(index, t_prime)

    # messages whose context contains each item
    z1: dict[str, int] = defaultdict(int)
    for tid, items in thread_items.items():
        for iid in items:
            z1[iid] += thread_sizes[tid]

    mass: dict[str, float] = defaultdict(float)
    for mid, prob in retrieved:
        for iid in thread_items.get(index.thread_ids[index.doc_pos[mid]], ()):
            mass[iid] += prob
    scored = [(iid, m / z1[iid]) for iid, m in mass.items()]
    scored.sort(key=lambda x: (-x[1], x[0]))
    return ItemRanking(tuple(scored[:item_limit]), item_limit)
