from __future__ import annotations

import itertools
import math

import pytest

from cascadeclone import communities as cm
from cascadeclone.netgraph import Network, Post


def two_cliques(n=20):
    a = [f"a{i:02d}" for i in range(n)]
    b = [f"b{i:02d}" for i in range(n)]
    edges = {(x, y): 1 for grp in (a, b) for x, y in itertools.permutations(grp, 2)}
    edges[(a[0], b[0])] = 1
    return Network(tuple(a + b), edges), set(a), set(b)


def test_edgeless_graph_gives_singletons():
    net = Network(tuple("ABCDE"), {})
    assign = cm.detect_communities(net)
    assert assign.community_count == 5
    assert assign.sizes() == [1] * 5


def test_two_cliques_recovered():
    net, a, b = two_cliques()
    assign = cm.detect_communities(net, seed=1)
    assert assign.community_count == 2
    groups = {frozenset(assign.members(c)) for c in range(2)}
    assert groups == {frozenset(a), frozenset(b)}
    # the clique split beats every other balanced split drawn from the same halves
    q = cm.modularity(net, assign)
    alt = dict(assign.membership)
    alt["a00"], alt["b00"] = alt["b00"], alt["a00"]
    assert q > cm.modularity(net, cm.CommunityAssignment(alt, 2))
    singletons = cm.CommunityAssignment({u: i for i, u in enumerate(net.users)}, len(net.users))
    assert q >= cm.modularity(net, singletons)


def test_detection_is_deterministic():
    net, _, _ = two_cliques(8)
    assert cm.detect_communities(net, seed=4) == cm.detect_communities(net, seed=4)


def test_assignment_invariants():
    with pytest.raises(ValueError):
        cm.CommunityAssignment({"A": 0, "B": 2}, 2)


def test_ctfidf_disjoint_vocabulary_by_hand():
    posts = [Post("1", "A", 0, "cat cat"), Post("2", "A", 0, "cat"), Post("3", "B", 0, "dog"), Post("4", "B", 0, "dog")]
    assign = cm.CommunityAssignment({"A": 0, "B": 1}, 2)
    scores = cm.ctfidf_scores({0: ["cat cat", "cat"], 1: ["dog", "dog"]})
    # A = (3 + 2) / 2; tf = 1 in each class
    assert scores[0]["cat"] == pytest.approx(math.log(1 + 2.5 / 3))
    assert scores[1]["dog"] == pytest.approx(math.log(1 + 2.5 / 2))
    labels = cm.label_communities(assign, posts, top_n=1)
    assert labels == {0: ["cat"], 1: ["dog"]}


def test_shared_document_ties_alphabetical():
    doc = "zebra apple mango"
    posts = [Post("1", "A", 0, doc), Post("2", "B", 0, doc)]
    assign = cm.CommunityAssignment({"A": 0, "B": 1}, 2)
    scores = cm.ctfidf_scores({0: [doc], 1: [doc]})
    assert len(set(scores[0].values())) == 1
    labels = cm.label_communities(assign, posts, top_n=3)
    assert labels[0] == labels[1] == ["apple", "mango", "zebra"]


def test_community_without_posts_labelled_other():
    assign = cm.CommunityAssignment({"A": 0, "B": 1}, 2)
    labels = cm.label_communities(assign, [Post("1", "A", 0, "hello world")])
    assert labels[1] == ["Other"]


def test_tokenizer_drops_short_and_stopwords():
    assert cm.tokenize("The cat & a DOG, with https://x.com") == ["cat", "dog"]


def test_assignment_roundtrip(tmp_path):
    assign = cm.CommunityAssignment({"A": 0, "B": 1, "C": 0}, 2, {0: ["cat"], 1: ["dog"]})
    cm.write_assignment(assign, tmp_path / "c.csv", tmp_path / "l.json")
    back = cm.read_assignment(tmp_path / "c.csv", tmp_path / "l.json")
    assert back == assign
