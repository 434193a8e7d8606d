from __future__ import annotations

import json

import numpy as np
import pytest

from cascadeclone import datagen as dg
from cascadeclone.embeddings import read_embeddings
from cascadeclone.netgraph import read_posts, read_retweets

from conftest import make_net

SMALL = dg.SynthSpec(block_sizes=(60, 60), p_in=0.1, p_out=0.01, seed=3)


def test_spec_validation_and_json_roundtrip():
    with pytest.raises(ValueError):
        dg.SynthSpec(p_in=1.5)
    with pytest.raises(ValueError):
        dg.SynthSpec(block_sizes=())
    back = dg.SynthSpec.from_json(json.loads(json.dumps(SMALL.to_json())))
    assert back == SMALL


def test_default_periods_are_consecutive():
    a, b, c = dg.default_periods()
    assert a.end == b.start and b.end == c.start
    assert a.days == 60


def test_network_is_deterministic_and_block_structured():
    net = dg.generate_network(SMALL)
    assert net == dg.generate_network(SMALL)
    assert len(net) == 120
    labels = dg.block_labels(SMALL)
    inside = sum(labels[a] == labels[b] for a, b in net.edges)
    outside = len(net.edges) - inside
    # expected 2*60*59*0.1 = 708 inside, 2*60*60*0.01 = 72 outside
    assert 600 < inside < 820 and 40 < outside < 110
    assert all(a != b and c >= 1 for (a, b), c in net.edges.items())


def test_sample_pairs_full_probability():
    rng = np.random.default_rng(0)
    r, c = dg._sample_pairs(rng, 4, 4, 1.0, True)
    assert len(r) == 12 and not np.any(r == c)


def test_truth_scorer_prefers_home_topic():
    net = dg.generate_network(SMALL)
    corpus = dg.generate_histories(SMALL, net)
    vocab = dg.topic_vocabulary(SMALL)
    home0 = " ".join(vocab[0][:6])
    home1 = " ".join(vocab[1][:6])
    u0, u1 = "u00000", "u00119"
    t = corpus.truth
    assert t.probability(u0, home0) > t.probability(u0, home1)
    assert t.probability(u1, home1) > t.probability(u1, home0)
    np.testing.assert_allclose(t.mixture("nothing here"), 0.0)
    assert t.probability(u0, "nothing here") == pytest.approx(1 / (1 + np.exp(8.0)))


def test_histories_consistent():
    net = dg.generate_network(SMALL)
    corpus = dg.generate_histories(SMALL, net)
    post = {p.post_id: p for p in corpus.posts}
    assert corpus.posts and corpus.retweets
    for r in corpus.retweets:
        p = post[r.post_id]
        assert (p.author, r.retweeter) in net.edges
        assert r.timestamp > p.timestamp
    assert any(r.is_quote for r in corpus.retweets)
    assert all(r.retweeter in corpus.quoters for r in corpus.retweets if r.is_quote)
    spans = [sum(p.timestamp in per for p in corpus.posts) for per in SMALL.periods]
    assert all(s > 0 for s in spans)


def test_brute_force_simple_cases():
    net = make_net([("A", "B"), ("B", "C")])
    got = dg.brute_force_cascade(net, {("A", "B"): 0.5, ("B", "C"): 0.4}, "A")
    assert got == pytest.approx({"A": 1.0, "B": 0.5, "C": 0.2})
    diamond = make_net([("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")])
    p = dict.fromkeys(diamond.edges, 0.5)
    assert dg.brute_force_cascade(diamond, p, "A")["D"] == pytest.approx(1 - (1 - 0.25) ** 2)
    assert dg.brute_force_cascade(diamond, {}, "A") == {"A": 1.0, "B": 0.0, "C": 0.0, "D": 0.0}


def test_brute_force_limits():
    edges = [(f"n{i}", f"n{i + 1}") for i in range(17)]
    net = make_net(edges)
    with pytest.raises(ValueError, match="Monte Carlo"):
        dg.brute_force_cascade(net, dict.fromkeys(net.edges, 0.5), "n0")
    with pytest.raises(ValueError):
        dg.brute_force_cascade(net, {edges[0]: 1.5}, "n0")
    with pytest.raises(KeyError):
        dg.brute_force_cascade(net, {}, "zz")


def test_write_corpus_roundtrip(tmp_path):
    net = dg.generate_network(SMALL)
    corpus = dg.generate_histories(SMALL, net)
    paths = dg.write_corpus(tmp_path, SMALL, net, corpus, embed_dim=16)
    assert read_posts(paths["posts"]) == corpus.posts
    assert read_retweets(paths["retweets"]) == corpus.retweets
    vecs, dim = read_embeddings(paths["embeddings"])
    assert dim == 16 and all(p.text in vecs for p in corpus.posts)
    truth = json.loads(paths["truth"].read_text())
    assert truth["synth_spec"] == SMALL.to_json()
    before = {k: v.read_bytes() for k, v in paths.items()}
    dg.write_corpus(tmp_path, SMALL, net, dg.generate_histories(SMALL, net), embed_dim=16)
    assert before == {k: v.read_bytes() for k, v in paths.items()}
