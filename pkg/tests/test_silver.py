import itertools
import math

import pytest
from hypothesis import given, settings, strategies as st

from attachrec.corpus import Corpus, Instance
from attachrec.retrieval import Index, build_mailbox_index
from attachrec.silver import (
    SilverQuery, SilverQuerySet, check_pruning, is_unwanted, prune_queries, recallable_terms,
    score_query, select_candidate_terms, synthesize_silver,
)

from conftest import msg

REQUEST = msg("req", "t", 1000, sender="anand@x", sender_name="Anand Rao",
              subject="zeta plan", body="please send zeta and omega and kappa")


def big_index():
    """200 messages; e is attached to three of them."""
    ids, ts, threads, items, tokens = [], [], [], [], []
    for i in range(200):
        ids.append(f"m{i:03d}")
        ts.append(i)
        threads.append(f"t{i}")
        items.append(["e"] if i < 3 else [])
        toks = ["filler"]
        if i == 0:
            toks += ["zeta", "omega"]
        if i in (0, 1, 2, 50):  # df 4 / 200 = 2%
            toks.append("kappa")
        if i == 1:
            toks.append("sigma")  # absent from the request
        tokens.append(toks)
    return Index("u", ids, ts, threads, items, tokens)


def test_recallable_threshold():
    terms = recallable_terms("e", big_index(), 500, REQUEST)
    assert "zeta" in terms and "omega" in terms
    assert "sigma" not in terms
    assert "kappa" not in terms


def test_recallable_without_item():
    assert recallable_terms("missing", big_index(), 500, REQUEST) == set()


@pytest.mark.parametrize("token, expected", [
    ("the", True), ("q3", True), ("anand", True), ("rao", True), ("a-b", True), ("transition", False),
])
def test_is_unwanted(token, expected):
    assert is_unwanted(token, REQUEST) is expected


def test_select_from_recallable_only():
    idx = Index("u", ["a", "b", "c"], [1, 2, 3], ["t", "t", "t"], [[], [], []],
                [["rare", "mid", "common"], ["mid", "common"], ["common"]])
    req = msg("r", "t", 9, subject="", body="rare mid common")
    pool = {"rare", "mid", "common"}
    assert select_candidate_terms(req, pool, idx, 10, seed=3) == ["rare", "mid", "common"]
    assert select_candidate_terms(req, pool, idx, 2, seed=3) == ["rare", "mid"]


def test_select_no_duplicates():
    idx = Index("u", ["a"], [1], ["t"], [[]], [["x"]])
    req = msg("r", "t", 9, subject="x", body="x")
    for seed in range(10):
        assert select_candidate_terms(req, {"x"}, idx, 10, seed) == ["x"]


def test_select_skips_unwanted():
    idx = Index("u", ["a"], [1], ["t"], [[]], [["the", "initech"]])
    req = msg("r", "t", 9, subject="the", body="initech")
    for seed in range(10):
        assert select_candidate_terms(req, {"initech"}, idx, 10, seed) == ["initech"]


def test_select_rejects_bad_k():
    with pytest.raises(ValueError):
        select_candidate_terms(REQUEST, set(), big_index(), 0, 0)


def rank_fixture():
    # four items in four threads; query term "q" appears with decreasing frequency
    tokens = [["q"] * 4, ["q"] * 3, ["q"] * 2, ["q", "r"]]
    return Index("u", ["m1", "m2", "m3", "m4"], [1, 2, 3, 4], ["t1", "t2", "t3", "t4"],
                 [["e1"], ["e2"], ["e3"], ["e4"]], tokens)


def test_score_query_reciprocal_rank():
    idx = rank_fixture()
    assert score_query({"q"}, idx, 10, "e1") == 1.0
    assert score_query({"q"}, idx, 10, "e4") == 0.25
    assert score_query({"q"}, idx, 10, "e4", item_limit=3) == 0.0
    assert score_query({"nothing"}, idx, 10, "e1") == 0.0


def fs(*terms):
    return frozenset(terms)


def test_prune_subset_union():
    scores = {fs("barack", "obama"): 0.5, fs("obama", "family"): 0.5, fs("barack", "obama", "family"): 0.5}
    assert [q.terms for q in prune_queries(scores)] == [fs("barack", "obama", "family")]


def test_prune_superset_without_gain():
    scores = {fs("barack", "obama"): 0.5, fs("barack", "obama", "president"): 0.5}
    assert [q.terms for q in prune_queries(scores)] == [fs("barack", "obama")]


def test_prune_keeps_superset_with_gain():
    scores = {fs("a"): 0.25, fs("a", "b"): 1.0}
    assert {q.terms for q in prune_queries(scores)} == {fs("a"), fs("a", "b")}


def test_prune_singleton_and_zero():
    assert prune_queries({fs("a"): 0.5}) == [SilverQuery(fs("a"), 0.5)]
    assert prune_queries({fs("a"): 0.0}) == []


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0]), min_size=15, max_size=15))
def test_prune_invariants_on_random_scores(values):
    terms = "abcd"
    subsets = [frozenset(c) for n in range(1, 5) for c in itertools.combinations(terms, n)]
    scores = dict(zip(subsets, values))
    kept = prune_queries(scores)
    qset = SilverQuerySet("i", "e", 0, list(terms), kept, len(scores))
    assert check_pruning(qset, scores) == []
    for q in kept:
        assert scores[q.terms] == q.score > 0


def tiny_instance(subject_words):
    """A mailbox where item e sits in an earlier thread; the request subject has the given words."""
    corpus = Corpus([
        msg("m0", "old", 1, sender="w@x", to=("u@x",), subject=" ".join(subject_words),
            body="file attached", attachments=["e"]),
        msg("m1", "t", 10, sender="v@x", to=("u@x",), subject=" ".join(subject_words), body="send it"),
        msg("m2", "t", 11, sender="u@x", to=("v@x",), body="here", attachments=["e"]),
    ])
    inst = Instance("m2", "t", "m1", "m2", "u@x", 11, ("e",))
    return corpus, inst, build_mailbox_index(corpus, "u@x")


def test_ten_candidates_enumerate_full_powerset():
    words = [f"w{c}ord" for c in "abcdefghij"]
    corpus, inst, idx = tiny_instance(words)
    qset = synthesize_silver(corpus, inst, "e", idx, k=10, seed=1, keep_all_scores=True)
    assert len(qset.candidate_terms) == 10
    assert qset.scored_candidates == 1023 == 2 ** 10 - 1
    assert check_pruning(qset, qset.all_scores) == []


def test_single_candidate_set():
    corpus, inst, idx = tiny_instance(["budget"])
    qset = synthesize_silver(corpus, inst, "e", idx, k=10, seed=0)
    assert qset.candidate_terms == ["budget"]
    assert [(q.sorted_terms(), q.score) for q in qset.queries] == [(["budget"], 1.0)]


def test_k_over_limit():
    corpus, inst, idx = tiny_instance(["budget"])
    with pytest.raises(ValueError):
        synthesize_silver(corpus, inst, "e", idx, k=17)


def test_record_roundtrip(planted_silver):
    for qs in planted_silver[:10]:
        again = SilverQuerySet.from_record(qs.to_record())
        assert again.to_record() == qs.to_record()


def test_synthesis_is_order_independent(planted):
    forward = planted.silver(planted.instances[:6], k=10, seed=4)
    backward = planted.silver(list(reversed(planted.instances[:6])), k=10, seed=4)
    key = lambda s: (s.instance_id, s.item_id)
    assert [s.to_record() for s in sorted(forward, key=key)] == [s.to_record() for s in sorted(backward, key=key)]


def test_silver_scores_reproduce(planted, planted_silver):
    by_id = {i.instance_id: i for i in planted.instances}
    for qs in planted_silver:
        inst = by_id[qs.instance_id]
        assert 1 <= qs.scored_candidates == 2 ** len(qs.candidate_terms) - 1
        for q in qs.queries:
            assert score_query(q.terms, planted.index_for(inst), inst.t_prime, qs.item_id) == q.score
            assert math.isclose(1 / q.score, round(1 / q.score))
