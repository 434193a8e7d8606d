"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats
from scipy.special import comb

from cascadeclone import communities as cm
from cascadeclone import datagen as dg
from cascadeclone import gbtlearn as gl
from cascadeclone import infectmodel as im
from cascadeclone import mutate as mu
from cascadeclone import scenarios as sc
from cascadeclone import sei
from cascadeclone.embeddings import HashEmbedder
from cascadeclone.netgraph import Post, network_from_json, read_posts, read_retweets

from conftest import criterion, make_net, run_pipeline, small_run_config


def _oracle_networks():
    rng = np.random.default_rng(11)
    nets = {}
    chain = [(f"c{i}", f"c{i + 1}") for i in range(5)]
    nets["chain"] = (chain, dict(zip(chain, [0.9, 0.7, 0.5, 0.8, 0.6])))
    diamond = [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")]
    nets["diamond"] = (diamond, dict(zip(diamond, [0.5, 0.3, 0.6, 0.7])))
    # two reciprocal triangles joined by a two-way bridge
    tri = lambda p: [(f"{p}{a}", f"{p}{b}") for a in range(3) for b in range(3) if a != b]
    two = tri("x") + tri("y") + [("x0", "y0"), ("y0", "x0")]
    nets["two_community"] = (two, {e: (0.6 if e[0][0] == e[1][0] else 0.25) for e in two})
    ring = [(f"r{i}", f"r{(i + 1) % 5}") for i in range(5)] + [(f"r{(i + 1) % 5}", f"r{i}") for i in range(5)]
    nets["reciprocal_ring"] = (ring, dict(zip(ring, rng.uniform(0.1, 0.9, len(ring)).tolist())))
    star = [("h", f"l{i}") for i in range(6)] + [("l0", "h"), ("l1", "l2"), ("l3", "m"), ("m", "l4")]
    nets["star"] = (star, dict(zip(star, [1.0, 0.4, 0.0, 0.55, 0.3, 0.8, 0.9, 0.5, 0.45, 0.35])))
    users = [f"d{i}" for i in range(8)]
    pairs = [(users[a], users[b]) for a in range(8) for b in range(a + 1, 8)]
    dag = [pairs[k] for k in sorted(rng.choice(len(pairs), 16, replace=False))]
    nets["random_dag"] = (dag, dict(zip(dag, rng.uniform(0.05, 0.95, 16).tolist())))
    return nets


def test_criterion_1_oracle_equivalence():
    with criterion(1, "cascade oracle equivalence") as c:
        trials = 100_000
        t0 = time.perf_counter()
        worst = 0.0
        nets = _oracle_networks()
        for name, (edges, probs) in nets.items():
            assert len(edges) <= 16, name
            net = make_net(edges)
            source = sorted(net.users)[0] if name != "star" else "h"
            exact = dg.brute_force_cascade(net, probs, source)
            g = sei.CascadeGraph(net)
            ep = np.array([probs[(g.users[s], g.users[d])] for s, d in zip(g.src, g.indices)])
            summ = sei.simulate_fixed(g, ep, g.index(source), sei.SimConfig(trials=trials, base_seed=1))
            freq = dict(zip(summ.users, summ.infection_frequency))
            for u, p in exact.items():
                sigma = np.sqrt(p * (1 - p) / trials)
                if sigma == 0:
                    assert freq[u] == p, (name, u, freq[u], p)
                else:
                    z = abs(freq[u] - p) / sigma
                    worst = max(worst, z)
                    assert z <= 3, (name, u, freq[u], p, z)
        elapsed = time.perf_counter() - t0
        c.note(f"{len(nets)} networks, worst |z| = {worst:.2f}, {elapsed:.1f} s")
        assert elapsed <= 60


def test_criterion_2_pseudocode_conformance(random_graph):
    with criterion(2, "pseudocode conformance") as c:
        g, probs = random_graph
        post = Post("p", g.users[0], 0, "text")
        # alpha = 0: compiled ensemble and the general (mutating) path
        zero = sei.run_ensemble(g, sc.ConstantScorer(1.0), g.users[0], post, sei.SimConfig(alpha=0.0, trials=1000))
        assert np.all(zero.totals == 1) and zero.node_hits[0] == 1000 and zero.node_hits.sum() == 1000
        profiles = {u: mu.UserQtProfile(u, [mu.QuoteEvent("x", "y")], 1, 0, mutation_enabled=True) for u in g.users}
        with mu.MutationContext(profiles, mu.StubClient("echo")) as ctx:
            for seed in range(50):
                r = sei.run_trial(g, sc.ConstantScorer(1.0), ctx, g.users[0], post,
                                  sei.SimConfig(alpha=0.0, mutation_enabled=True), seed)
                assert list(r.infected) == [g.users[0]]
        # all-IP-1 chain: everyone infected, layer = distance from the source
        chain = make_net([(f"n{i:02d}", f"n{i + 1:02d}") for i in range(20)])
        res = sei.run_trial(chain, sc.ConstantScorer(1.0), None, "n00", Post("q", "n00", 0, "t"),
                            sei.SimConfig(alpha=1.0), 5)
        assert res.total == 21
        assert all(inf.layer == int(u[1:]) for u, inf in res.infected.items())
        with mu.MutationContext(profiles, mu.StubClient("echo")) as ctx:
            res_m = sei.run_trial(chain, sc.ConstantScorer(1.0), ctx, "n00", Post("q", "n00", 0, "t"),
                                  sei.SimConfig(alpha=1.0, mutation_enabled=True), 5)
        assert {u: i.layer for u, i in res_m.infected.items()} == {u: i.layer for u, i in res.infected.items()}
        # dequeue times never decrease
        cfg = sei.SimConfig(alpha=1.0)
        n_trials = 10_000
        for seed in range(n_trials):
            r = sei.trace_fixed(g, probs, seed % g.n, seed, cfg)
            t = r.dequeue_times
            assert all(a <= b for a, b in zip(t, t[1:])), seed
        c.note(f"alpha=0 over 1000+50 trials, chain of 21, monotone over {n_trials} trials")


def test_criterion_3_calibration_fidelity():
    with criterion(3, "calibration fidelity") as c:
        t0 = time.perf_counter()
        rng = np.random.default_rng(3)
        s = rng.random(100_000)
        y = rng.random(100_000) < s
        curve = gl.fit_calibration(s, y, n_bins=100, degree=11)
        grid = np.linspace(0.05, 0.95, 91)
        err = float(np.abs(gl.apply_calibration(curve, grid) - grid).max())
        fine = gl.apply_calibration(curve, np.linspace(0, 1, 1001))
        elapsed = time.perf_counter() - t0
        c.note(f"max |f(x) - x| = {err:.4f}, {elapsed:.2f} s")
        assert all(k >= 0 for k in curve.coefficients) and len(curve.coefficients) == 12
        assert err <= 0.05
        assert np.all(np.diff(fine) >= 0)
        assert elapsed <= 10


@pytest.mark.slow
def test_criterion_4_learner_competence(tmp_path):
    with criterion(4, "learner competence") as c:
        t0 = time.perf_counter()
        cfg = {
            "seed": 1,
            "output_dir": "run",
            "data": {"posts": "run/synthetic/posts.jsonl", "retweets": "run/synthetic/retweets.jsonl"},
            "synthetic": {"block_sizes": [500, 500, 500, 500], "p_in": 0.06, "p_out": 0.002,
                          "posts_per_user": 4.4},
            "simulation": {"trials": 200},
        }
        run_pipeline(tmp_path, cfg, ("generate-synthetic", "ingest", "build-network", "extract-features",
                                     "train-infection", "calibrate"))
        out = tmp_path / "run"
        training = json.loads((out / "training.json").read_text())
        rows = training["train_rows"] + training["heldout_rows"]
        auc = training["test_auc"]

        net = network_from_json(json.loads((out / "network.json").read_text()))
        posts = read_posts(out / "posts.jsonl")
        rts = read_retweets(out / "retweets.jsonl")
        static = sc.static_baseline_model(net, posts, rts)
        source = max(net.users, key=lambda u: (len(net.out_neighbors(u)), u))
        sim = sei.SimConfig(trials=200, base_seed=1)
        topics = [p for _, p in sc.load_topic_posts(source)]
        flat = sc.topic_sweep(net, static, source, sim, topics)
        topic_var = float(np.var(flat.mean_totals))

        model = im.InfectionModel.from_json(json.loads((out / "model.json").read_text()))
        feats = {u: _features(v) for u, v in json.loads((out / "user_features.json").read_text())["users"].items()}
        trained = im.ModelScorer(model, feats, HashEmbedder(384, 1))
        varied = sc.topic_sweep(net, trained, source, sim, topics)

        counts = {}
        for r in rts:
            counts[r.post_id] = counts.get(r.post_id, 0) + 1
        p3 = [p for p in posts if p.timestamp >= dg.default_periods()[2].start and net.out_neighbors(p.author)
              if p.author in net][:40]
        obs = [(p, counts.get(p.post_id, 0)) for p in p3]
        vir = sc.virality_eval(net, static, obs, replace(sim, trials=100), mode="fixed_author", fixed_author=source)
        elapsed = time.perf_counter() - t0
        c.note(f"test AUC {auc:.3f} on {rows} rows; static topic variance {topic_var:.3g}, "
               f"trained topic variance {np.var(varied.mean_totals):.3g}; static virality r = {vir.pearson_r:.3f}; "
               f"{elapsed:.0f} s")
        assert auc >= 0.80
        assert topic_var == 0.0
        assert np.var(varied.mean_totals) > 0
        assert abs(vir.pearson_r) < 1e-9
        assert elapsed <= 300


def _features(o):
    return im.UserFeatures(o["followers"], o["followees"], o["ratio"], o["retweeted_rate"], o["retweet_rate"],
                           np.asarray(o["authored_embedding"], np.float32),
                           np.asarray(o["reshared_embedding"], np.float32))


def _synthetic_500():
    spec = dg.SynthSpec(block_sizes=(250, 250), seed=5)
    net = dg.generate_network(spec)
    corpus = dg.generate_histories(spec, net)
    source = max(net.users, key=lambda u: (len(net.out_neighbors(u)), u))
    home = int(np.argmax(corpus.preferences[source]))
    words = " ".join(dg.topic_vocabulary(spec)[home][:8])
    return net, corpus, source, Post("seed", source, 0, words)


def test_criterion_5_countermeasure_monotonicity():
    with criterion(5, "countermeasure monotonicity") as c:
        net, corpus, source, post = _synthetic_500()
        cfg = sei.SimConfig(alpha=3.0, trials=1000, base_seed=2)
        counts = [0, 5, 10, 20, 35, 50]
        q = sc.quarantine_sweep(net, corpus.truth, source, post, cfg, counts)
        for a, b in zip(q.summaries, q.summaries[1:]):
            assert np.all(b.totals <= a.totals)
        assign = cm.detect_communities(net, seed=2)
        members = assign.members(assign.membership[source])
        curve, plan = sc.inoculation_sweep(net, corpus.truth, source, post, cfg, members, [0.0, 1.0])
        before, after = curve.summaries[0].totals, curve.summaries[1].totals
        test = stats.ttest_ind(before, after, equal_var=False)
        draws = np.array(list(plan.reductions.values()))
        c.note(f"quarantine means {np.round(q.mean_totals, 1).tolist()}; inoculation {before.mean():.1f} -> "
               f"{after.mean():.1f}, Welch p = {test.pvalue:.2g}; draws in [{draws.min():.4f}, {draws.max():.4f}]")
        assert after.mean() < before.mean() and test.pvalue < 0.01
        assert draws.min() >= 0.18 and draws.max() <= 0.22 and len(draws) == len(members)


def test_criterion_6_mutation_contract(tmp_path):
    with criterion(6, "mutation contract") as c:
        emb = HashEmbedder(128)
        hist = [mu.QuoteEvent(f"story {i} on the budget", f"unbelievable take {i}") for i in range(30)]
        prof = mu.UserQtProfile("q", hist, 30, 10, 20)
        assert mu.check_eligibility(prof)
        evs = [mu.QuoteEvent(f"report {i} about rates", f"not again {i}") for i in range(20)]
        g = mu.evaluate_and_gate(prof, evs, emb, mu.StubClient("echo"))
        assert g.mean_cos_pred == pytest.approx(1.0, abs=1e-9) and g.mutation_enabled
        ac = "First climate scientists, now vaccine scientists... #NoTrust"
        pt = "Climate scientists lie AGAIN about impact of fossil fuels on sea levels"
        assert mu.compose_quote(ac, pt) == f"{ac}: {pt}"

        # every user quotes, the endpoint always fails: must equal the plain run draw for draw
        net, corpus, source, post = _synthetic_500()
        profiles = {u: mu.UserQtProfile(u, [mu.QuoteEvent("x", "y")], 9, 1, mutation_enabled=True)
                    for u in net.users}
        cfg = sei.SimConfig(alpha=3.0, trials=300, base_seed=4, mutation_enabled=True)
        with mu.MutationContext(profiles, mu.StubClient("fail")) as ctx:
            failed = sei.run_ensemble(net, corpus.truth, source, post, cfg, mutate_ctx=ctx)
        plain = sei.run_ensemble(net, corpus.truth, source, post, replace(cfg, mutation_enabled=False))
        for f in ("totals", "layer_counts", "node_hits", "edge_hits"):
            np.testing.assert_array_equal(getattr(failed, f), getattr(plain, f))

        # the same through the command line: failing endpoint vs --no-mutation
        from cascadeclone.cli import main
        cfgd = small_run_config(mutation={"client": "fail"})
        run_pipeline(tmp_path, cfgd, ("generate-synthetic", "ingest", "build-network", "detect-communities",
                                      "extract-features", "train-infection", "calibrate", "simulate"))
        out = tmp_path / "run"
        a = {n: (out / n).read_bytes() for n in ("layers.csv", "heatmap.csv")}
        sa = json.loads((out / "summary.json").read_text())
        assert main(["simulate", "--config", str(tmp_path / "cfg.json"), "--no-mutation"]) == 0
        b = {n: (out / n).read_bytes() for n in ("layers.csv", "heatmap.csv")}
        sb = json.loads((out / "summary.json").read_text())
        assert a == b
        assert {k: v for k, v in sa.items() if k != "mutation_enabled"} == \
               {k: v for k, v in sb.items() if k != "mutation_enabled"}
        c.note(f"echo gate cos {g.mean_cos_pred:.3f}; fallback identical over {cfg.trials} trials and via the CLI")


def test_criterion_7_performance_envelope():
    with criterion(7, "performance envelope") as c:
        spec = dg.SynthSpec(block_sizes=(2500,) * 4, p_in=0.0076, p_out=0.0001, seed=7)
        net = dg.generate_network(spec)
        g = sei.CascadeGraph(net)
        assert g.n == 10_000 and 180_000 <= g.m <= 220_000
        cfg = sei.SimConfig(alpha=3.0, trials=1000, base_seed=9)
        # precomputed probabilities high enough that most trials reach most of the network
        ep = np.random.default_rng(0).uniform(0.1, 0.3, g.m)
        t0 = time.perf_counter()
        one = sei.simulate_fixed(g, ep, 0, cfg, threads=1)
        elapsed = time.perf_counter() - t0
        for threads in (2, 8):
            other = sei.simulate_fixed(g, ep, 0, cfg, threads=threads)
            for f in ("totals", "layer_counts", "node_hits", "edge_hits"):
                np.testing.assert_array_equal(getattr(one, f), getattr(other, f))
        c.note(f"{g.n} nodes, {g.m} edges, mean cascade {one.totals.mean():.0f}, 1000 trials in {elapsed:.1f} s "
               f"on one thread; identical for 1/2/8 threads")
        assert elapsed <= 60


def adjusted_rand_index(a, b) -> float:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    pairs = comb(table, 2).sum()
    rows = comb(table.sum(axis=1), 2).sum()
    cols = comb(table.sum(axis=0), 2).sum()
    expected = rows * cols / comb(len(a), 2)
    top = (rows + cols) / 2
    return float((pairs - expected) / (top - expected)) if top != expected else 1.0


def test_criterion_8_community_pipeline():
    with criterion(8, "community pipeline") as c:
        spec = dg.SynthSpec(block_sizes=(250, 250), p_in=0.05, p_out=0.005, seed=0)
        net = dg.generate_network(spec)
        truth = dg.block_labels(spec)
        assign = cm.detect_communities(net, seed=0)
        ari = adjusted_rand_index([truth[u] for u in net.users], [assign.membership[u] for u in net.users])
        assert adjusted_rand_index([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
        # disjoint vocabularies: community 0 writes about cats and birds, community 1 about dogs
        posts = [Post("1", "a", 0, "cats cats birds"), Post("2", "b", 0, "cats"),
                 Post("3", "c", 0, "dogs dogs"), Post("4", "d", 0, "dogs leash")]
        fixture = cm.CommunityAssignment({"a": 0, "b": 0, "c": 1, "d": 1}, 2)
        scores = cm.ctfidf_scores({0: ["cats cats birds", "cats"], 1: ["dogs dogs", "dogs leash"]})
        # average words per class A = (4 + 4) / 2 = 4; each term appears in a single class
        assert scores[0]["cats"] == pytest.approx(0.75 * np.log(1 + 4 / 3))
        assert scores[0]["birds"] == pytest.approx(0.25 * np.log(1 + 4 / 1))
        assert scores[1]["dogs"] == pytest.approx(0.75 * np.log(1 + 4 / 3))
        labels = cm.label_communities(fixture, posts, top_n=2)
        c.note(f"ARI = {ari:.4f} with {assign.community_count} communities; labels {labels}")
        assert ari >= 0.95
        assert labels == {0: ["cats", "birds"], 1: ["dogs", "leash"]}


def test_criterion_9_end_to_end_reproducibility(tmp_path):
    with criterion(9, "end-to-end reproducibility") as c:
        a = run_pipeline(tmp_path / "first", small_run_config())
        b = run_pipeline(tmp_path / "second", small_run_config())
        assert a == b
        rows = list(csv.DictReader(open(tmp_path / "first" / "run" / "topic_sweep.csv")))
        norm = np.array([float(r["normalized"]) for r in rows])
        c.note(f"{len(a['commands'])} stages with identical manifests; {len(rows)} topic posts, "
               f"normalized range [{norm.min():.2f}, {norm.max():.2f}]")
        assert len(rows) == 10
        assert np.all((norm >= 0) & (norm <= 1)) and norm.min() == 0.0 and norm.max() == 1.0
