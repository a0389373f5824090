"""Silver-standard query synthesis for request/item pairs.

Candidate terms are drawn from two sources (the request subject and the
"recallable" terms shared by the request and the item's earlier messages),
always taking the rarest remaining term of a randomly chosen source.  Every
non-empty subset of the selected terms is scored by the reciprocal rank of
the target item, then pruned towards specific-but-not-redundant queries.
"""

from __future__ import annotations

import itertools
import random
import zlib
from dataclasses import dataclass, field
from typing import Callable

from .corpus import Corpus, Instance, Message
from .retrieval import DEFAULT_ITEM_LIMIT, DEFAULT_MESSAGE_LIMIT, Index, UnanswerableQuery, rank_items
from .text import has_digit, has_punctuation, stopwords

DEFAULT_K = 10
MAX_K = 16
RECALL_FRACTION = 0.30
MAX_DF_RATIO = 0.01


@dataclass(frozen=True)
class SilverQuery:
    terms: frozenset[str]
    score: float

    def sorted_terms(self) -> list[str]:
        return sorted(self.terms)


@dataclass
class SilverQuerySet:
    instance_id: str
    item_id: str
    seed: int
    candidate_terms: list[str]
    queries: list[SilverQuery]
    scored_candidates: int = 0
    all_scores: dict[frozenset[str], float] = field(default_factory=dict, repr=False)

    def best_score(self) -> float:
        return max((q.score for q in self.queries), default=0.0)

    def to_record(self) -> dict:
        queries = sorted(self.queries, key=lambda q: (-q.score, len(q.terms), q.sorted_terms()))
        return {
            "instance_id": self.instance_id,
            "item_id": self.item_id,
            "seed": self.seed,
            "candidate_terms": list(self.candidate_terms),
            "scored_candidates": self.scored_candidates,
            "queries": [{"terms": q.sorted_terms(), "score": q.score} for q in queries],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SilverQuerySet":
        return cls(
            instance_id=rec["instance_id"], item_id=rec["item_id"], seed=int(rec["seed"]),
            candidate_terms=list(rec["candidate_terms"]),
            queries=[SilverQuery(frozenset(q["terms"]), float(q["score"])) for q in rec["queries"]],
            scored_candidates=int(rec.get("scored_candidates", 0)),
        )


def pair_seed(seed: int, instance_id: str, item_id: str) -> int:
    """Stable per-pair seed so results do not depend on processing order."""
    return zlib.crc32(f"{seed}\x1f{instance_id}\x1f{item_id}".encode("utf-8"))


def is_unwanted(token: str, request: Message) -> bool:
    return (
        token in stopwords()
        or has_digit(token)
        or has_punctuation(token)
        or token in request.name_tokens()
    )


def recallable_terms(item_id: str, index: Index, t_prime: float, request: Message,
                     min_fraction: float = RECALL_FRACTION,
                     max_df_ratio: float = MAX_DF_RATIO) -> set[str]:
    """Request terms that are common among the item's messages but rare overall."""
    holders = [pos for pos in range(index.n_docs)
               if index.timestamps[pos] < t_prime and item_id in index.doc_items[pos]]
    if not holders:
        return set()
    request_terms = set(request.tokens)
    holder_set = set(holders)
    out = set()
    for term in request_terms:
        post = index.postings.get(term)
        if post is None:
            continue
        docs = post[0]
        if index.df[term] / index.n_docs >= max_df_ratio:
            continue
        hits = sum(1 for d in docs.tolist() if d in holder_set)
        if hits / len(holders) >= min_fraction:
            out.add(term)
    return out


def select_candidate_terms(request: Message, recallable: set[str], index: Index,
                           k: int, seed: int) -> list[str]:
    """Pick up to ``k`` terms, alternating randomly between the two sources."""
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = random.Random(seed)
    sources = [set(request.subject_tokens), set(recallable)]
    selected: list[str] = []
    while any(sources) and len(selected) < k:
        src = sources[rng.randrange(2)]
        if not src:
            continue
        term = min(src, key=lambda t: (index.df.get(t, 0), t))
        for s in sources:
            s.discard(term)
        if not is_unwanted(term, request):
            selected.append(term)
    return selected


def score_query(query, index: Index, t_prime: float, item_id: str,
                msg_limit: int = DEFAULT_MESSAGE_LIMIT,
                item_limit: int = DEFAULT_ITEM_LIMIT) -> float:
    """Reciprocal rank of ``item_id``; 0.0 if unanswerable or not ranked."""
    try:
        ranking = rank_items(index, sorted(query), t_prime, msg_limit, item_limit)
    except UnanswerableQuery:
        return 0.0
    rank = ranking.rank_of(item_id)
    return 0.0 if rank is None else 1.0 / rank


def prune_queries(scores: dict[frozenset[str], float]) -> list[SilverQuery]:
    """Apply the zero-score, subset-union and superset rules.

    Within a group of equally scoring queries, two incomparable queries are
    dropped when their union is a third query of that group.  Afterwards a
    query is dropped if one of its strict subsets survived with a score at
    least as high.
    """
    groups: dict[float, set[frozenset[str]]] = {}
    for q, s in scores.items():
        if s > 0:
            groups.setdefault(s, set()).add(q)

    kept: list[SilverQuery] = []
    for s, members in groups.items():
        drop = set()
        ordered = sorted(members, key=lambda q: (len(q), sorted(q)))
        for a, b in itertools.combinations(ordered, 2):
            if a <= b or b <= a:
                continue
            if (a | b) in members:
                drop.add(a)
                drop.add(b)
        kept.extend(SilverQuery(q, s) for q in ordered if q not in drop)

    final = [
        q for q in kept
        if not any(o.terms < q.terms and o.score >= q.score for o in kept)
    ]
    final.sort(key=lambda q: (-q.score, len(q.terms), q.sorted_terms()))
    return final


def synthesize_silver(
    corpus: Corpus,
    instance: Instance,
    item_id: str,
    index: Index,
    k: int = DEFAULT_K,
    seed: int = 0,
    msg_limit: int = DEFAULT_MESSAGE_LIMIT,
    item_limit: int = DEFAULT_ITEM_LIMIT,
    keep_all_scores: bool = False,
) -> SilverQuerySet:
    """Build the pruned silver query set for one (instance, item) pair.

    ``index`` must be the replier's mailbox index.
    """
    if k > MAX_K:
        raise ValueError(f"k={k} exceeds the enumeration limit {MAX_K}")
    request = corpus[instance.request]
    pseed = pair_seed(seed, instance.instance_id, item_id)
    recallable = recallable_terms(item_id, index, instance.t_prime, request)
    terms = select_candidate_terms(request, recallable, index, k, pseed)

    scores: dict[frozenset[str], float] = {}
    for size in range(1, len(terms) + 1):
        for combo in itertools.combinations(terms, size):
            q = frozenset(combo)
            scores[q] = score_query(q, index, instance.t_prime, item_id, msg_limit, item_limit)

    return SilverQuerySet(
        instance_id=instance.instance_id,
        item_id=item_id,
        seed=pseed,
        candidate_terms=terms,
        queries=prune_queries(scores),
        scored_candidates=len(scores),
        all_scores=scores if keep_all_scores else {},
    )


def synthesize_all(corpus: Corpus, instances: list[Instance],
                   index_for: Callable[[str], Index], k: int = DEFAULT_K,
                   seed: int = 0, **kwargs) -> list[SilverQuerySet]:
    out = []
    for inst in instances:
        index = index_for(inst.replier)
        for item_id in inst.relevant_items:
            out.append(synthesize_silver(corpus, inst, item_id, index, k=k, seed=seed, **kwargs))
    return out


def check_pruning(qset: SilverQuerySet, scores: dict[frozenset[str], float]) -> list[str]:
    """Violations of the pruning invariants given the full pre-pruning scores."""
    problems = []
    kept = qset.queries
    for q in kept:
        if q.score <= 0:
            problems.append(f"zero-score query kept: {q.sorted_terms()}")
        for o in kept:
            if o.terms < q.terms and o.score >= q.score:
                problems.append(f"superset {q.sorted_terms()} kept over {o.sorted_terms()}")
    for a, b in itertools.combinations(kept, 2):
        if a.score != b.score or a.terms <= b.terms or b.terms <= a.terms:
            continue
        if scores.get(a.terms | b.terms) == a.score:
            problems.append(f"subset-union rule violated by {a.sorted_terms()}, {b.sorted_terms()}")
    return problems
