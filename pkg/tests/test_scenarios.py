from __future__ import annotations

import csv

import numpy as np
import pytest

from cascadeclone import scenarios as sc
from cascadeclone import sei
from cascadeclone.communities import CommunityAssignment
from cascadeclone.netgraph import Network, Post, RetweetRecord

from conftest import TableScorer, make_net


def star_chain():
    # S feeds hub H, which feeds ten leaves; S also reaches leaf X directly
    leaves = [f"L{i}" for i in range(10)]
    edges = [("S", "H"), ("S", "X")] + [("H", l) for l in leaves]
    return make_net(edges)


def test_minmax():
    np.testing.assert_allclose(sc.minmax([2, 4, 3]), [0, 1, 0.5])
    np.testing.assert_array_equal(sc.minmax([5, 5, 5]), [0, 0, 0])


def test_constant_scorer_and_static_baseline():
    net = make_net([("A", "B"), ("A", "C")])
    posts = [Post("p", "A", 0, "x"), Post("q", "A", 1, "y")]
    rts = [RetweetRecord("p", "B", 2)]
    s = sc.static_baseline_model(net, posts, rts)
    assert s.rate == pytest.approx(0.25)
    np.testing.assert_array_equal(s.probabilities(["B", "C", "D"], "A", "t"), [0.25] * 3)
    with pytest.raises(ValueError):
        sc.ConstantScorer(1.5)
    with pytest.raises(ValueError):
        sc.static_baseline_model(net, [], rts)


def test_rank_influencers_orders_by_caused(post):
    net = star_chain()
    s = sei.run_ensemble(net, TableScorer({}, 1.0), "S", Post("p", "S", 0, "t"), sei.SimConfig(alpha=1, trials=5))
    ranked = sc.rank_influencers(s)
    assert ranked[0] == ("H", 10.0)
    assert ranked[1] == ("S", 2.0)


def test_quarantine_sweep_blocks_top_influencer_but_not_source():
    net = star_chain()
    p = Post("p", "S", 0, "t")
    curve = sc.quarantine_sweep(net, TableScorer({}, 1.0), "S", p, sei.SimConfig(alpha=1, trials=5), [0, 1, 2, 20])
    # H goes first; S itself is never blocked, so S, H, and X stay infected
    np.testing.assert_array_equal(curve.mean_totals, [13, 3, 3, 3])
    with pytest.raises(ValueError):
        sc.quarantine_sweep(net, TableScorer({}), "S", p, sei.SimConfig(), [2, 1])


def test_quarantine_sweep_monotone_per_trial(random_graph):
    g, _ = random_graph
    rng = np.random.default_rng(3)
    table = dict(zip(g.users, rng.uniform(0, 0.25, g.n)))
    p = Post("p", g.users[0], 0, "t")
    curve = sc.quarantine_sweep(g, TableScorer(table), g.users[0], p,
                                sei.SimConfig(alpha=1, trials=200), [0, 5, 10, 20])
    for a, b in zip(curve.summaries, curve.summaries[1:]):
        assert np.all(b.totals <= a.totals)


def test_inoculation_plan_nested_and_in_range():
    members = [f"m{i}" for i in range(40)]
    plan = sc.plan_inoculation(members, seed=4, reduction=0.2, jitter=0.02)
    assert sorted(plan.order) == sorted(members)
    assert all(0.18 <= d <= 0.22 for d in plan.reductions.values())
    f25, f50 = plan.factors(0.25), plan.factors(0.5)
    assert len(f25) == 10 and len(f50) == 20 and set(f25) <= set(f50)
    assert plan.factors(0.0) == {}
    assert plan == sc.plan_inoculation(list(reversed(members)), seed=4)
    with pytest.raises(ValueError):
        sc.plan_inoculation(members, 0, reduction=0.01, jitter=0.02)


def test_inoculation_sweep_monotone(random_graph):
    g, _ = random_graph
    rng = np.random.default_rng(5)
    table = dict(zip(g.users, rng.uniform(0, 0.3, g.n)))
    p = Post("p", g.users[0], 0, "t")
    members = list(g.users[: g.n // 2])
    curve, plan = sc.inoculation_sweep(g, TableScorer(table), g.users[0], p, sei.SimConfig(alpha=1, trials=200),
                                       members, [0, 0.5, 1.0])
    for a, b in zip(curve.summaries, curve.summaries[1:]):
        assert np.all(b.totals <= a.totals)
    assert curve.mean_totals[2] < curve.mean_totals[0]
    with pytest.raises(ValueError):
        sc.inoculation_sweep(g, TableScorer(table), g.users[0], p, sei.SimConfig(), members, [1.5])


class WordScorer:
    """Probability rises with the count of the word 'hot' in the text."""

    def probabilities(self, victims, originator, text):
        return np.full(len(victims), min(1.0, 0.1 * text.split().count("hot")))


def test_topic_sweep_normalized(random_graph):
    g, _ = random_graph
    posts = [Post(f"t{k}", g.users[0], 0, " ".join(["hot"] * k + ["cold"])) for k in (0, 1, 3)]
    curve = sc.topic_sweep(g, WordScorer(), g.users[0], sei.SimConfig(alpha=1, trials=100), posts)
    norm = curve.normalized()
    assert norm.min() == 0.0 and norm.max() == 1.0
    assert norm[0] == 0.0 and norm[2] == 1.0
    flat = sc.topic_sweep(g, sc.ConstantScorer(0.2), g.users[0], sei.SimConfig(trials=20), posts)
    np.testing.assert_array_equal(flat.normalized(), [0, 0, 0])


def test_bundled_topic_posts():
    tp = sc.load_topic_posts("u1")
    assert len(tp) == 10
    assert len({p.post_id for _, p in tp}) == 10
    assert all(p.author == "u1" and p.text and p.post_id.startswith("topic-") for _, p in tp)


def test_topic_posts_from_file(tmp_path):
    f = tmp_path / "t.jsonl"
    f.write_text('{"topic": "Space Travel!", "text": "to the moon"}\n\n')
    (topic, p), = sc.load_topic_posts("a", f)
    assert topic == "Space Travel!" and p.post_id == "topic-space-travel"


def test_fit_line():
    slope, icpt, r, deg = sc.fit_line([0, 1, 2, 3], [1, 3, 5, 7])
    assert (slope, icpt, r, deg) == pytest.approx((2.0, 1.0, 1.0, False))
    assert sc.fit_line([1, 1, 1], [0, 1, 2])[2:] == (0.0, True)


def test_virality_eval_all_users_and_fixed_author():
    # authors with different follower pools; followers reshare at author-specific rates
    users = ["a1", "a2", "a3", "a4"] + [f"f{i}" for i in range(40)]
    edges = {}
    for k, a in enumerate(("a1", "a2", "a3", "a4")):
        for i in range(10 * k, 10 * k + 10):
            edges[(a, f"f{i}")] = 1
    net = Network(tuple(users), edges)
    rates = {f"f{i}": 0.1 * (i // 10 + 1) for i in range(40)}
    posts = [(Post(f"p{k}", a, 0, "t"), k + 1) for k, a in enumerate(("a1", "a2", "a3", "a4"))]
    posts.append((Post("orphan", "nobody", 0, "t"), 3))
    cfg = sei.SimConfig(alpha=1, trials=400)
    res = sc.virality_eval(net, TableScorer(rates), posts, cfg)
    assert len(res.pairs) == 4
    assert res.pearson_r > 0.95
    fixed = sc.virality_eval(net, sc.ConstantScorer(0.3), posts, cfg, mode="fixed_author", fixed_author="a1")
    sims = {p.simulated_rate for p in fixed.pairs}
    assert len(sims) == 1 and fixed.degenerate and fixed.pearson_r == 0.0
    with pytest.raises(ValueError):
        sc.virality_eval(net, TableScorer(rates), posts[:2], cfg)
    with pytest.raises(ValueError):
        sc.virality_eval(net, TableScorer(rates), posts, cfg, mode="fixed_author")


def test_community_rate_mae():
    assert sc.community_rate_mae({0: 0.5, 1: 0.1}, {0: 0.3, 1: 0.2}) == pytest.approx(0.15)
    with pytest.raises(ValueError):
        sc.community_rate_mae({0: 0.5}, {1: 0.5})
    assign = CommunityAssignment({"a": 0, "b": 0, "c": 1}, 2)
    assert sc.observed_community_rates(assign, {"a", "c"}) == {0: 0.5, 1: 1.0}


def test_sweep_writers(tmp_path):
    net = star_chain()
    p = Post("p", "S", 0, "t")
    curve = sc.quarantine_sweep(net, TableScorer({}, 1.0), "S", p, sei.SimConfig(alpha=1, trials=3), [0, 1])
    sc.write_sweep_csv(tmp_path / "q.csv", curve)
    rows = list(csv.DictReader(open(tmp_path / "q.csv")))
    assert [(r["parameter"], float(r["mean_total"])) for r in rows] == [("0", 13.0), ("1", 3.0)]
    sc.write_topic_csv(tmp_path / "t.csv", curve, ["x", "y"])
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert [float(r["normalized"]) for r in rows] == [1.0, 0.0]
