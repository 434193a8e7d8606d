"""Command-line pipeline: each subcommand reads earlier artifacts from the output directory."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import random
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import communities as cm
from . import datagen, gbtlearn, infectmodel as im, mutate, scenarios, sei
from .atomicio import atomic_open, file_digest, write_json
from .config import ConfigError, RunConfig, parse_config, validate_config
from .embeddings import make_provider
from .netgraph import (
    Network,
    build_edges,
    degree_distribution,
    filter_top_active,
    network_from_json,
    network_to_json,
    post_to_json,
    read_posts,
    read_retweets,
    retweet_to_json,
)

log = logging.getLogger("cascadeclone")

MANIFEST_VERSION = 1
COMMANDS = (
    "ingest", "build-network", "detect-communities", "extract-features", "train-infection", "calibrate",
    "simulate", "quarantine", "inoculate", "topic-sweep", "virality-eval", "mutation-eval", "generate-synthetic",
)


class MissingInput(FileNotFoundError):
    pass


class Run:
    def __init__(self, command: str, cfg: RunConfig, out: Path, threads: int, no_mutation: bool):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.no_mutation = no_mutation
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.seeds: dict[str, int] = {"seed": cfg.seed}

    # -- paths -------------------------------------------------------------
    def need(self, path: Path | None, what: str) -> Path:
        if path is None:
            raise MissingInput(f"no path configured for {what}")
        path = Path(path)
        if not path.exists():
            raise MissingInput(f"missing input file: {path}")
        self.inputs.append(path)
        return path

    def art(self, name: str) -> Path:
        return self.out / name

    def need_art(self, name: str, stage: str) -> Path:
        p = self.art(name)
        if not p.exists():
            raise MissingInput(f"missing input file: {p} (run `{stage}` first)")
        self.inputs.append(p)
        return p

    def wrote(self, *paths: Path) -> None:
        self.outputs.extend(paths)

    # -- shared loaders ----------------------------------------------------
    def posts(self):
        return read_posts(self.need_art("posts.jsonl", "ingest"))

    def retweets(self):
        return read_retweets(self.need_art("retweets.jsonl", "ingest"))

    def network(self) -> Network:
        with open(self.need_art("network.json", "build-network"), encoding="utf-8") as fh:
            return network_from_json(json.load(fh))

    def embedder(self):
        e = self.cfg.embeddings
        if e.provider == "file":
            return make_provider("file", path=self.need(self.cfg.resolve(e.path), "embeddings.path"))
        return make_provider(e.provider, dim=e.dim, seed=self.cfg.seed, url=e.url)

    def model(self) -> im.InfectionModel:
        with open(self.need_art("model.json", "calibrate"), encoding="utf-8") as fh:
            return im.InfectionModel.from_json(json.load(fh))

    def user_features(self) -> dict:
        with open(self.need_art("user_features.json", "extract-features"), encoding="utf-8") as fh:
            obj = json.load(fh)
        return {u: _features_from_json(v) for u, v in obj["users"].items()}

    def assignment(self):
        csv_path = self.art("communities.csv")
        if not csv_path.exists():
            return None
        self.inputs.append(csv_path)
        return cm.read_assignment(csv_path)

    def sim_config(self, **kw) -> sei.SimConfig:
        if self.no_mutation:
            kw.setdefault("mutation_enabled", False)
        return self.cfg.sim_config(**kw)

    def llm_client(self):
        m = self.cfg.mutation
        if m.client == "http":
            return mutate.make_client("http", mutate.LlmEndpointConfig(
                m.base_url, m.model, m.temperature, m.max_in_flight, m.timeout, m.retries))
        if m.client == "canned":
            return mutate.make_client("canned", fixtures_path=self.need(self.cfg.resolve(m.fixtures), "mutation.fixtures"))
        return mutate.make_client(m.client)

    # -- manifest ----------------------------------------------------------
    def write_manifest(self) -> None:
        path = self.out / "manifest.json"
        manifest = {"schema_version": MANIFEST_VERSION, "commands": {}}
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                old = json.load(fh)
            if old.get("schema_version") == MANIFEST_VERSION:
                manifest["commands"] = old.get("commands", {})

        def rel(p: Path) -> str:
            try:
                return str(p.resolve().relative_to(self.out.resolve()))
            except ValueError:
                return str(p)

        manifest["commands"][self.command] = {
            "config_hash": self.cfg.digest(),
            "seeds": self.seeds,
            "no_mutation": self.no_mutation,
            "inputs": {rel(p): file_digest(p) for p in sorted(set(self.inputs)) if p.is_file()},
            "artifacts": {rel(p): file_digest(p) for p in sorted(set(self.outputs))},
        }
        write_json(path, manifest)


def _features_to_json(f: im.UserFeatures) -> dict:
    return {
        "followers": f.followers, "followees": f.followees, "ratio": f.ratio,
        "retweeted_rate": f.retweeted_rate, "retweet_rate": f.retweet_rate,
        "authored_embedding": f.authored_embedding.tolist(), "reshared_embedding": f.reshared_embedding.tolist(),
    }


def _features_from_json(o: dict) -> im.UserFeatures:
    return im.UserFeatures(
        followers=o["followers"], followees=o["followees"], ratio=o["ratio"],
        retweeted_rate=o["retweeted_rate"], retweet_rate=o["retweet_rate"],
        authored_embedding=np.asarray(o["authored_embedding"], dtype=np.float32),
        reshared_embedding=np.asarray(o["reshared_embedding"], dtype=np.float32),
    )


def _write_jsonl(path: Path, rows) -> None:
    with atomic_open(path) as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _period_name(cfg: RunConfig, ts: int) -> str | None:
    for n in ("I", "II", "III"):
        if ts in cfg.period(n):
            return n
    return None


# -- stages -------------------------------------------------------------------

def cmd_ingest(run: Run) -> None:
    cfg = run.cfg
    posts = read_posts(run.need(cfg.resolve(cfg.data.posts), "data.posts"))
    rts = read_retweets(run.need(cfg.resolve(cfg.data.retweets), "data.retweets"))
    build_edges(posts, rts)  # rejects dangling references
    posts.sort(key=lambda p: (p.timestamp, p.post_id))
    rts.sort(key=lambda r: (r.timestamp, r.post_id, r.retweeter))
    _write_jsonl(run.art("posts.jsonl"), (post_to_json(p) for p in posts))
    _write_jsonl(run.art("retweets.jsonl"), (retweet_to_json(r) for r in rts))
    pc = Counter(_period_name(cfg, p.timestamp) for p in posts)
    rc = Counter(_period_name(cfg, r.timestamp) for r in rts)
    summary = {
        "schema_version": 1,
        "posts": len(posts),
        "retweets": len(rts),
        "quote_retweets": sum(r.is_quote for r in rts),
        "posts_by_period": {str(k): v for k, v in sorted(pc.items(), key=lambda kv: str(kv[0]))},
        "retweets_by_period": {str(k): v for k, v in sorted(rc.items(), key=lambda kv: str(kv[0]))},
    }
    write_json(run.art("ingest.json"), summary)
    run.wrote(run.art("posts.jsonl"), run.art("retweets.jsonl"), run.art("ingest.json"))


def cmd_build_network(run: Run) -> None:
    cfg = run.cfg
    posts, rts = run.posts(), run.retweets()
    p1, p2 = cfg.period("I"), cfg.period("II")
    window = [r for r in rts if r.timestamp in p1 or r.timestamp in p2]
    net = build_edges(posts, window)
    if cfg.network.top_k is not None:
        net = filter_top_active(net, cfg.network.top_k)
    write_json(run.art("network.json"), network_to_json(net))
    with atomic_open(run.art("degrees.csv")) as fh:
        w = csv.writer(fh)
        w.writerow(["degree", "users"])
        for d, c in degree_distribution(net).items():
            w.writerow([d, c])
    run.wrote(run.art("network.json"), run.art("degrees.csv"))


def cmd_detect_communities(run: Run) -> None:
    cfg = run.cfg
    net = run.network()
    posts = run.posts()
    c = cfg.communities
    assign = cm.detect_communities(net, c.resolution, cfg.seed)
    window = [p for p in posts if (p.timestamp in cfg.period("I") or p.timestamp in cfg.period("II"))
              and p.author in assign.membership]
    assign = replace(assign, labels=cm.label_communities(assign, window, c.top_n, c.sample_size, cfg.seed))
    cm.write_assignment(assign, run.art("communities.csv"), run.art("labels.json"))
    run.wrote(run.art("communities.csv"), run.art("labels.json"))


def _feature_state(run: Run):
    cfg = run.cfg
    net = run.network()
    posts, rts = run.posts(), run.retweets()
    emb = run.embedder()
    vecs = im.embed_posts(emb, posts)
    return net, posts, rts, emb, vecs


def cmd_extract_features(run: Run) -> None:
    cfg = run.cfg
    net, posts, rts, emb, vecs = _feature_state(run)
    p1 = cfg.period("I")
    ur, tr = im.fit_reducers(emb, posts, p1, cfg.model.user_dim, cfg.model.tweet_dim, post_vectors=vecs)
    hist = im.History(posts, rts)
    table = im.feature_table(net, hist, p1, ur, vecs)
    rows = im.build_training_set(net, hist, p1, table, tr, vecs)
    write_json(run.art("reducers.json"), {"schema_version": 1, "user": ur.to_json(), "tweet": tr.to_json()})
    write_json(run.art("user_features.json"),
               {"schema_version": 1, "users": {u: _features_to_json(f) for u, f in table.items()}})
    with atomic_open(run.art("exposures_X.npy"), "wb") as fh:
        np.save(fh, rows.X)
    with atomic_open(run.art("exposures_y.npy"), "wb") as fh:
        np.save(fh, rows.y)
    run.wrote(run.art("reducers.json"), run.art("user_features.json"),
              run.art("exposures_X.npy"), run.art("exposures_y.npy"))
    if cfg.model.write_features_csv:
        im.write_features_csv(run.art("features.csv"), rows, im.feature_schema(ur.dim_out, tr.dim_out))
        run.wrote(run.art("features.csv"))


def _load_reducers(run: Run):
    from .embeddings import Reducer

    with open(run.need_art("reducers.json", "extract-features"), encoding="utf-8") as fh:
        obj = json.load(fh)
    return Reducer.from_json(obj["user"]), Reducer.from_json(obj["tweet"])


def cmd_train_infection(run: Run) -> None:
    cfg = run.cfg
    m = cfg.model
    X = np.load(run.need_art("exposures_X.npy", "extract-features"))
    y = np.load(run.need_art("exposures_y.npy", "extract-features"))
    ur, tr = _load_reducers(run)
    tcfg = gbtlearn.TrainConfig(m.rounds, m.max_depth, m.learning_rate, m.min_child_weight, m.lam,
                                m.subsample, cfg.seed, run.threads)
    train_idx, test_idx = gbtlearn.train_test_split(len(y), m.train_fraction, cfg.seed)
    train_set = gbtlearn.Dataset(X[train_idx], y[train_idx])
    if m.negative_keep_rate is not None:
        train_set = gbtlearn.downsample_negatives(train_set, m.negative_keep_rate, cfg.seed)
    report = {"schema_version": 1, "train_rows": len(train_set), "heldout_rows": int(test_idx.size)}
    if m.tune_budget > 0:
        res = gbtlearn.tune(train_set, budget=m.tune_budget, seed=cfg.seed, base=tcfg)
        tcfg = replace(res.best_config, threads=run.threads)
        report["tuning"] = {"best_auc": res.best_auc, "best_config": gbtlearn.config_to_json(tcfg)}
    ens = gbtlearn.train(train_set, tcfg)
    schema = im.feature_schema(ur.dim_out, tr.dim_out)
    raw = im.InfectionModel(ens, gbtlearn.CalibrationCurve((0.0, 1.0)), ur, tr, schema)
    scores = raw.raw_scores(X[test_idx])
    report["config"] = gbtlearn.config_to_json(tcfg)
    report["train_auc"] = gbtlearn.auc(raw.raw_scores(train_set.rows), train_set.labels)
    report["test_auc"] = gbtlearn.auc(scores, y[test_idx])

    # month-by-month AUC on later periods, features frozen at Period I
    net, posts, rts, emb, vecs = _feature_state(run)
    hist = im.History(posts, rts)
    table = run.user_features()
    monthly = {}
    for name in ("II", "III"):
        for month, period in im.month_periods(cfg.period(name)).items():
            rows = im.build_training_set(net, hist, period, table, tr, vecs)
            monthly[month] = (rows.X, rows.y)
    report["monthly_auc"] = im.evaluate_monthly(raw, monthly)

    write_json(run.art("model_raw.json"), raw.to_json())
    with atomic_open(run.art("heldout.csv")) as fh:
        w = csv.writer(fh)
        w.writerow(["score", "label"])
        for s, lab in zip(scores, y[test_idx]):
            w.writerow([repr(float(s)), int(lab)])
    write_json(run.art("training.json"), report)
    run.wrote(run.art("model_raw.json"), run.art("heldout.csv"), run.art("training.json"))


def cmd_calibrate(run: Run) -> None:
    cfg = run.cfg
    with open(run.need_art("model_raw.json", "train-infection"), encoding="utf-8") as fh:
        raw = im.InfectionModel.from_json(json.load(fh))
    scores, labels = [], []
    with open(run.need_art("heldout.csv", "train-infection"), encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            scores.append(float(row["score"]))
            labels.append(int(row["label"]))
    scores = np.array(scores)
    labels = np.array(labels, dtype=bool)
    n_bins, degree = cfg.model.calibration_bins, cfg.model.calibration_degree
    curve = gbtlearn.fit_calibration(scores, labels, n_bins, degree)
    model = replace(raw, calibration=curve)
    write_json(run.art("model.json"), model.to_json())
    xs, ys = gbtlearn.calibration_points(scores, labels, n_bins)
    fitted = gbtlearn.apply_calibration(curve, xs)
    with atomic_open(run.art("calibration.csv")) as fh:
        w = csv.writer(fh)
        w.writerow(["bin_mean_score", "bin_positive_rate", "calibrated"])
        for a, b, c in zip(xs, ys, fitted):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(c))])
    run.wrote(run.art("model.json"), run.art("calibration.csv"))


def _simulation_inputs(run: Run):
    cfg = run.cfg
    net = run.network()
    posts = run.posts()
    model = run.model()
    scorer = im.ModelScorer(model, run.user_features(), run.embedder())
    if cfg.simulation.source_post is not None:
        match = [p for p in posts if p.post_id == cfg.simulation.source_post]
        if not match:
            raise ValueError(f"simulation.source_post {cfg.simulation.source_post!r} not found")
        post = match[0]
        if post.author not in net:
            raise ValueError(f"author of {post.post_id!r} is not in the network")
    else:
        post = default_source_post(net, posts, run.retweets(), cfg)
    return sei.CascadeGraph(net), scorer, post


def default_source_post(net: Network, posts, retweets, cfg: RunConfig):
    """The most-reshared Period III post whose author has followers in the network."""
    counts = Counter(r.post_id for r in retweets)
    p3 = cfg.period("III")
    pool = [p for p in posts if p.timestamp in p3 and p.author in net and net.out_neighbors(p.author)]
    if not pool:
        raise ValueError("no Period III post by a network user with followers; set simulation.source_post")
    return min(pool, key=lambda p: (-counts.get(p.post_id, 0), p.post_id))


def _gated_profiles(run: Run, emb) -> tuple[dict, list[tuple]]:
    cfg = run.cfg
    profiles, eval_events = mutate.build_profiles(run.posts(), run.retweets(), cfg.period("I"), cfg.period("II"))
    client = run.llm_client()
    rows = []
    for u in sorted(profiles):
        prof = profiles[u]
        if not mutate.check_eligibility(prof) or not prof.history:
            continue
        g = mutate.evaluate_and_gate(prof, eval_events[u], emb, client, k=cfg.mutation.k, seed=cfg.seed,
                                     max_in_flight=cfg.mutation.max_in_flight)
        rows.append((u, prof.qp, g))
    return profiles, rows


def cmd_simulate(run: Run) -> None:
    cfg = run.cfg
    graph, scorer, post = _simulation_inputs(run)
    sim = run.sim_config()
    run.seeds.update(base_seed=sim.base_seed, trials=sim.trials)
    ctx = None
    if sim.mutation_enabled:
        profiles, _ = _gated_profiles(run, scorer.embedder)
        m = cfg.mutation
        ctx = mutate.MutationContext(profiles, run.llm_client(), m.k, cfg.seed, m.max_in_flight)
    try:
        summary = sei.run_ensemble(graph, scorer, post.author, post, sim, mutate_ctx=ctx, threads=run.threads)
    finally:
        if ctx is not None:
            ctx.close()
    sei.write_layers_csv(run.art("layers.csv"), summary)
    extra = {"source_post": post.post_id, "source_user": post.author, "mutation_enabled": sim.mutation_enabled}
    assign = run.assignment()
    if assign is not None:
        sei.write_heatmap_csv(run.art("heatmap.csv"), sei.community_heatmap(summary, assign))
        extra["community_rates"] = {str(k): v for k, v in sei.community_rates(summary, assign).items()}
        run.wrote(run.art("heatmap.csv"))
    sei.write_summary_json(run.art("summary.json"), summary, extra)
    run.wrote(run.art("layers.csv"), run.art("summary.json"))


def cmd_quarantine(run: Run) -> None:
    graph, scorer, post = _simulation_inputs(run)
    sim = run.sim_config(mutation_enabled=False)
    run.seeds.update(base_seed=sim.base_seed, trials=sim.trials)
    curve = scenarios.quarantine_sweep(graph, scorer, post.author, post, sim, run.cfg.scenarios.block_counts,
                                       threads=run.threads)
    scenarios.write_sweep_csv(run.art("quarantine_sweep.csv"), curve)
    run.wrote(run.art("quarantine_sweep.csv"))


def cmd_inoculate(run: Run) -> None:
    cfg = run.cfg
    graph, scorer, post = _simulation_inputs(run)
    assign = run.assignment()
    if assign is None:
        raise MissingInput(f"missing input file: {run.art('communities.csv')} (run `detect-communities` first)")
    community = 0 if cfg.scenarios.community is None else cfg.scenarios.community
    if not 0 <= community < assign.community_count:
        raise ValueError(f"scenarios.community {community} does not exist ({assign.community_count} communities)")
    sim = run.sim_config(mutation_enabled=False)
    run.seeds.update(base_seed=sim.base_seed, trials=sim.trials, community=community)
    sc = cfg.scenarios
    curve, plan = scenarios.inoculation_sweep(graph, scorer, post.author, post, sim, assign.members(community),
                                              sc.fractions, sc.reduction, sc.jitter, threads=run.threads)
    scenarios.write_sweep_csv(run.art("inoculation_sweep.csv"), curve)
    with atomic_open(run.art("inoculation_draws.csv")) as fh:
        w = csv.writer(fh)
        w.writerow(["order", "user_id", "reduction"])
        for i, u in enumerate(plan.order):
            w.writerow([i, u, repr(plan.reductions[u])])
    run.wrote(run.art("inoculation_sweep.csv"), run.art("inoculation_draws.csv"))


def cmd_topic_sweep(run: Run) -> None:
    cfg = run.cfg
    graph, scorer, post = _simulation_inputs(run)
    path = cfg.resolve(cfg.scenarios.topics)
    if path is not None:
        run.need(path, "scenarios.topics")
    pairs = scenarios.load_topic_posts(post.author, path)
    sim = run.sim_config(mutation_enabled=False)
    run.seeds.update(base_seed=sim.base_seed, trials=sim.trials)
    curve = scenarios.topic_sweep(graph, scorer, post.author, sim, [p for _, p in pairs], threads=run.threads)
    scenarios.write_topic_csv(run.art("topic_sweep.csv"), curve, [t for t, _ in pairs])
    run.wrote(run.art("topic_sweep.csv"))


def cmd_virality_eval(run: Run) -> None:
    cfg = run.cfg
    graph, scorer, _ = _simulation_inputs(run)
    posts, rts = run.posts(), run.retweets()
    counts = Counter(r.post_id for r in rts)
    p3 = cfg.period("III")
    pool = sorted(p.post_id for p in posts
                  if p.timestamp in p3 and p.author in graph.net and graph.net.out_neighbors(p.author))
    n = min(cfg.scenarios.virality_posts, len(pool))
    chosen = set(random.Random(cfg.seed).sample(pool, n))
    by_id = {p.post_id: p for p in posts}
    obs = [(by_id[pid], counts.get(pid, 0)) for pid in sorted(chosen)]
    fixed = None
    if cfg.scenarios.virality_mode == "fixed_author":
        fixed = default_source_post(graph.net, posts, rts, cfg).author
    sim = run.sim_config(mutation_enabled=False)
    run.seeds.update(base_seed=sim.base_seed, trials=sim.trials)
    res = scenarios.virality_eval(graph, scorer, obs, sim, cfg.scenarios.virality_mode, fixed)
    scenarios.write_virality_csv(run.art("virality.csv"), res)
    write_json(run.art("virality.json"), {
        "schema_version": 1, "mode": cfg.scenarios.virality_mode, "slope": res.slope,
        "intercept": res.intercept, "pearson_r": res.pearson_r, "degenerate": res.degenerate,
        "observations": len(res.pairs),
    })
    run.wrote(run.art("virality.csv"), run.art("virality.json"))


def cmd_mutation_eval(run: Run) -> None:
    _, rows = _gated_profiles(run, run.embedder())
    with atomic_open(run.art("mutation_gate.csv")) as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "qp", "events", "mean_cos_pred", "mean_cos_baseline", "mean_cos_ac", "enabled"])
        for u, qp, g in rows:
            w.writerow([u, repr(qp), g.n_events, repr(g.mean_cos_pred), repr(g.mean_cos_baseline),
                        repr(g.mean_cos_ac), int(g.mutation_enabled)])
    run.wrote(run.art("mutation_gate.csv"))


def cmd_generate_synthetic(run: Run) -> None:
    spec = run.cfg.synth_spec()
    run.seeds["synthetic_seed"] = spec.seed
    net = datagen.generate_network(spec)
    corpus = datagen.generate_histories(spec, net)
    paths = datagen.write_corpus(run.art("synthetic"), spec, net, corpus, run.cfg.embeddings.dim)
    write_json(run.art("synthetic") / "network_true.json", network_to_json(net))
    run.wrote(*paths.values(), run.art("synthetic") / "network_true.json")


HANDLERS = {
    "ingest": cmd_ingest,
    "build-network": cmd_build_network,
    "detect-communities": cmd_detect_communities,
    "extract-features": cmd_extract_features,
    "train-infection": cmd_train_infection,
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "quarantine": cmd_quarantine,
    "inoculate": cmd_inoculate,
    "topic-sweep": cmd_topic_sweep,
    "virality-eval": cmd_virality_eval,
    "mutation-eval": cmd_mutation_eval,
    "generate-synthetic": cmd_generate_synthetic,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cascadeclone", description="Reshare-network cascade simulation pipeline.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
    ap.add_argument("--seed", type=int, help="override the configured seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads; 0 = one per CPU")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    ap.add_argument("--no-mutation", action="store_true", help="disable quote-tweet mutation")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _error(kind: str, message: str, command: str) -> None:
    print(json.dumps({"error": kind, "message": message, "command": command}), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            if not Path(args.config).exists():
                raise MissingInput(f"missing input file: {args.config}")
            cfg = validate_config(args.config)
        else:
            cfg = parse_config({})
        if args.seed is not None:
            cfg.seed = args.seed
        out = Path(args.out) if args.out else cfg.resolve(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        threads = args.threads if args.threads > 0 else (os.cpu_count() or 1)
        run = Run(args.command, cfg, out, threads, args.no_mutation)
        HANDLERS[args.command](run)
        run.write_manifest()
    except MissingInput as exc:
        _error("missing_input", str(exc), args.command)
        return 2
    except ConfigError as exc:
        _error("config", str(exc), args.command)
        return 2
    except Exception as exc:  # any stage failure becomes a structured error
        log.debug("stage failure", exc_info=True)
        _error(type(exc).__name__, str(exc), args.command)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
