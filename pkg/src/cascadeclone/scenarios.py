"""Countermeasure sweeps, topic red-teaming, and simulated-vs-observed fidelity metrics."""
from __future__ import annotations

import csv
import json
import logging
import re
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .atomicio import atomic_open
from .netgraph import Network, Post, RetweetRecord, UserId
from .sei import CascadeGraph, EnsembleSummary, SimConfig, run_ensemble, source_probabilities

log = logging.getLogger(__name__)


@dataclass
class ScenarioCurve:
    parameter: str
    values: list
    summaries: list[EnsembleSummary] = field(repr=False)
    normalization: str = "none"  # or "minmax"

    @property
    def mean_totals(self) -> np.ndarray:
        return np.array([s.totals.mean() for s in self.summaries])

    @property
    def bands(self) -> tuple[np.ndarray, np.ndarray]:
        p = np.array([np.percentile(s.totals, [16, 84]) for s in self.summaries])
        return p[:, 0], p[:, 1]

    def normalized(self) -> np.ndarray:
        return minmax(self.mean_totals)


def minmax(x) -> np.ndarray:
    """Scale to [0, 1]; an all-equal input maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


class ConstantScorer:
    """Assigns one probability to every exposure, whatever the text or users."""

    def __init__(self, rate: float):
        if not 0.0 <= rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")
        self.rate = float(rate)

    def probabilities(self, victims: Sequence[UserId], originator: UserId, text: str) -> np.ndarray:
        return np.full(len(victims), self.rate)


def static_baseline_model(net: Network, posts: Sequence[Post], retweets: Sequence[RetweetRecord]) -> ConstantScorer:
    """Average reshare rate over every (post, follower of its author) exposure."""
    sharers: dict[str, set] = {}
    for r in retweets:
        sharers.setdefault(r.post_id, set()).add(r.retweeter)
    exposures = hits = 0
    for p in posts:
        if p.author not in net:
            continue
        fs = net.out_neighbors(p.author)
        exposures += len(fs)
        got = sharers.get(p.post_id, ())
        hits += sum(1 for f in fs if f in got)
    if exposures == 0:
        raise ValueError("corpus has no exposures to estimate a reshare rate from")
    return ConstantScorer(hits / exposures)


def rank_influencers(summary: EnsembleSummary) -> list[tuple[UserId, float]]:
    caused = summary.caused_mean
    order = sorted(range(len(summary.users)), key=lambda i: (-caused[i], summary.users[i]))
    return [(summary.users[i], float(caused[i])) for i in order]


def _run_points(graph, scorer, source, post, cfgs, node_probs, threads, point_threads=1):
    def one(c):
        return run_ensemble(graph, scorer, source, post, c, threads=point_threads, node_probs=node_probs)

    if threads > 1 and len(cfgs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, cfgs))
    return [one(c) for c in cfgs]


def quarantine_sweep(net: Network | CascadeGraph, scorer, source: UserId, source_post: Post, cfg: SimConfig,
                     block_counts: Sequence[int], threads: int = 1,
                     base: EnsembleSummary | None = None) -> ScenarioCurve:
    """Block the top-X influencers of the base ensemble for each X.

    The source user is never a candidate: its post is already out, and blocking
    it would end every cascade at once.
    """
    if list(block_counts) != sorted(block_counts) or any(x < 0 for x in block_counts):
        raise ValueError("block_counts must be non-negative and ascending")
    graph = net if isinstance(net, CascadeGraph) else CascadeGraph(net)
    probs = source_probabilities(graph, scorer, source, source_post.text)
    if base is None:
        base = run_ensemble(graph, scorer, source, source_post, cfg, threads=threads, node_probs=probs)
    ranked = [u for u, _ in rank_influencers(base) if u != source]
    cfgs = []
    for x in block_counts:
        if x > len(ranked):
            log.warning("block count %d exceeds %d users; blocking everyone", x, len(ranked))
        cfgs.append(replace(cfg, blocked_users=cfg.blocked_users | frozenset(ranked[:x])))
    return ScenarioCurve("blocked_count", list(block_counts),
                         _run_points(graph, scorer, source, source_post, cfgs, probs, threads))


@dataclass
class InoculationPlan:
    order: list[UserId]  # members in inoculation order; fraction f takes a prefix
    reductions: dict[UserId, float]

    def factors(self, fraction: float) -> dict[UserId, float]:
        k = math.ceil(fraction * len(self.order) - 1e-9)
        return {u: 1.0 - self.reductions[u] for u in self.order[:k]}


def plan_inoculation(members: Sequence[UserId], seed: int, reduction: float = 0.20,
                     jitter: float = 0.02) -> InoculationPlan:
    """Seeded member order and one reduction draw per member, shared by all sweep points.

    Nesting the subsets keeps the sweep monotone trial by trial.
    """
    if not 0 <= reduction - jitter <= reduction + jitter <= 1:
        raise ValueError("reduction range must lie within [0, 1]")
    members = sorted(members)
    rng = np.random.default_rng(seed)
    order = [members[i] for i in rng.permutation(len(members))]
    d = rng.uniform(reduction - jitter, reduction + jitter, size=len(members))
    return InoculationPlan(order, dict(zip(order, d.tolist())))


def inoculation_sweep(net: Network | CascadeGraph, scorer, source: UserId, source_post: Post, cfg: SimConfig,
                      members: Sequence[UserId], fractions: Sequence[float], reduction: float = 0.20,
                      jitter: float = 0.02, threads: int = 1) -> tuple[ScenarioCurve, InoculationPlan]:
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValueError("fractions must lie in [0, 1]")
    if not members:
        raise ValueError("community has no members")
    graph = net if isinstance(net, CascadeGraph) else CascadeGraph(net)
    plan = plan_inoculation(members, cfg.base_seed, reduction, jitter)
    probs = source_probabilities(graph, scorer, source, source_post.text)
    cfgs = []
    for f in fractions:
        factors = dict(cfg.inoculation_factors)
        for u, m in plan.factors(f).items():
            factors[u] = factors.get(u, 1.0) * m
        cfgs.append(replace(cfg, inoculation_factors=factors))
    curve = ScenarioCurve("inoculated_fraction", list(fractions),
                          _run_points(graph, scorer, source, source_post, cfgs, probs, threads))
    return curve, plan


def topic_sweep(net: Network | CascadeGraph, scorer, source: UserId, cfg: SimConfig, seed_posts: Sequence[Post],
                threads: int = 1) -> ScenarioCurve:
    """One ensemble per post from the same source user with the same seeds."""
    if not seed_posts:
        raise ValueError("need at least one seed post")
    graph = net if isinstance(net, CascadeGraph) else CascadeGraph(net)

    def one(p):
        return run_ensemble(graph, scorer, source, p, cfg)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            sums = list(pool.map(one, seed_posts))
    else:
        sums = [one(p) for p in seed_posts]
    return ScenarioCurve("post_id", [p.post_id for p in seed_posts], sums, "minmax")


def load_topic_posts(author: UserId, path=None) -> list[tuple[str, Post]]:
    """(topic, post) pairs from a jsonl of {"topic", "text"}; defaults to the bundled ten-topic set."""
    if path is None:
        raw = resources.files("cascadeclone").joinpath("data/topics.jsonl").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    out = []
    for line in raw.splitlines():
        if line.strip():
            obj = json.loads(line)
            slug = re.sub(r"[^0-9a-z]+", "-", obj["topic"].lower()).strip("-")
            out.append((obj["topic"], Post(f"topic-{slug}", author, 0, obj["text"])))
    return out


@dataclass
class ViralityObservation:
    post_id: str
    observed_rate: float
    simulated_rate: float


@dataclass
class ViralityResult:
    pairs: list[ViralityObservation]
    slope: float
    intercept: float
    pearson_r: float
    degenerate: bool = False


def fit_line(x, y) -> tuple[float, float, float, bool]:
    """OLS slope, intercept, and Pearson r; constant inputs give r = 0 flagged degenerate."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        slope = 0.0
        return slope, float(y.mean()), 0.0, True
    res = stats.linregress(x, y)
    return float(res.slope), float(res.intercept), float(res.rvalue), False


def virality_eval(net: Network | CascadeGraph, scorer, observations: Sequence[tuple[Post, int]], cfg: SimConfig,
                  mode: str = "all_users", fixed_author: UserId | None = None) -> ViralityResult:
    """Simulated first-layer infection rate against observed reshare rate, per post.

    ``fixed_author`` mode seeds every post from one user so only the text varies.
    """
    if mode not in ("all_users", "fixed_author"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "fixed_author" and fixed_author is None:
        raise ValueError("fixed_author mode needs an author")
    graph = net if isinstance(net, CascadeGraph) else CascadeGraph(net)
    trunc = replace(cfg, max_layer=1)
    pairs = []
    for post, observed in observations:
        src = fixed_author if mode == "fixed_author" else post.author
        if src not in graph.net:
            log.warning("post %s: author %s not in network; skipped", post.post_id, src)
            continue
        n_fol = len(graph.net.out_neighbors(src))
        if n_fol == 0:
            log.warning("post %s: author %s has no followers; skipped", post.post_id, src)
            continue
        summ = run_ensemble(graph, scorer, src, post, trunc)
        first = summ.layer_counts[:, 1] if summ.layer_counts.shape[1] > 1 else np.zeros(summ.trials)
        pairs.append(ViralityObservation(post.post_id, observed / n_fol, float(first.mean()) / n_fol))
    if len(pairs) < 3:
        raise ValueError(f"need at least 3 usable observations, got {len(pairs)}")
    slope, intercept, r, degenerate = fit_line([p.simulated_rate for p in pairs], [p.observed_rate for p in pairs])
    return ViralityResult(pairs, slope, intercept, r, degenerate)


def community_rate_mae(sim_rates: Mapping, observed_rates: Mapping) -> float:
    if set(sim_rates) != set(observed_rates):
        raise ValueError("simulated and observed rates cover different communities")
    if not sim_rates:
        raise ValueError("no communities to compare")
    return float(np.mean([abs(sim_rates[k] - observed_rates[k]) for k in sim_rates]))


def observed_community_rates(assign, resharers: set) -> dict[int, float]:
    """Share of each community that reshared a post (the observed analogue of community_rates)."""
    return {c: sum(u in resharers for u in assign.members(c)) / size for c, size in enumerate(assign.sizes())}


# -- outputs -------------------------------------------------------------------

def write_sweep_csv(path, curve: ScenarioCurve) -> None:
    means = curve.mean_totals
    p16, p84 = curve.bands
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "mean_total", "p16", "p84"])
        for v, m, lo, hi in zip(curve.values, means, p16, p84):
            w.writerow([v, repr(float(m)), repr(float(lo)), repr(float(hi))])


def write_topic_csv(path, curve: ScenarioCurve, topics: Sequence[str] | None = None) -> None:
    """Raw and min-max normalised mean totals per seed post."""
    topics = list(topics) if topics is not None else [""] * len(curve.values)
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(["post_id", "topic", "mean_total", "normalized"])
        for v, t, m, n in zip(curve.values, topics, curve.mean_totals, curve.normalized()):
            w.writerow([v, t, repr(float(m)), repr(float(n))])


def write_virality_csv(path, result: ViralityResult) -> None:
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(["post_id", "observed_rate", "simulated_rate"])
        for p in result.pairs:
            w.writerow([p.post_id, repr(p.observed_rate), repr(p.simulated_rate)])
