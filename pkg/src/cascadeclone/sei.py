"""Event-driven susceptible-exposed-infective cascades over a reshare network.

Each trial pops the exposed user with the smallest exposure time (ties by
user id), marks them infective, and gives every susceptible follower one
Bernoulli draw.  All randomness is a hash of (trial seed, infector, victim,
draw kind), so trials are reproducible regardless of scheduling and runs
with more users blocked are coupled draw-for-draw with the base run.
"""
from __future__ import annotations

import csv
import heapq
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from ._pykernels import GOLDEN, MASK, mix64
from ._pykernels import delay as _delay
from .atomicio import atomic_open, write_json
from .infectmodel import scale_probability
from .mutate import compose_quote
from .netgraph import Network, Post, UserId

CHUNK = 32
SUMMARY_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Delay:
    kind: str = "exponential"  # or "constant"
    value: float = 1.0  # mean for exponential

    def __post_init__(self):
        if self.kind not in ("exponential", "constant"):
            raise ValueError(f"unknown delay distribution {self.kind!r}")
        if self.value < 0:
            raise ValueError("delay parameter must be >= 0")

    @property
    def code(self) -> int:
        return kernels.DELAY_CONSTANT if self.kind == "constant" else kernels.DELAY_EXPONENTIAL


@dataclass(frozen=True)
class SimConfig:
    alpha: float = 3.0
    delay: Delay = Delay()
    trials: int = 1000
    base_seed: int = 0
    mutation_enabled: bool = False
    max_layer: int | None = None
    blocked_users: frozenset = frozenset()
    inoculation_factors: Mapping[UserId, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if any(not 0.0 <= f <= 1.0 for f in self.inoculation_factors.values()):
            raise ValueError("inoculation multipliers must lie in [0, 1]")
        object.__setattr__(self, "blocked_users", frozenset(self.blocked_users))


class CascadeGraph:
    """CSR view of a Network; node i is the i-th user in sorted order."""

    def __init__(self, net: Network):
        self.net = net
        self.users = net.users
        self.indptr, self.indices, self.counts = net.csr()
        self.src = np.repeat(np.arange(len(self.users), dtype=np.int64), np.diff(self.indptr))

    @property
    def n(self) -> int:
        return len(self.users)

    @property
    def m(self) -> int:
        return self.indices.shape[0]

    def index(self, u: UserId) -> int:
        return self.net.index(u)


def infector_multipliers(graph: CascadeGraph, cfg: SimConfig) -> np.ndarray:
    mult = np.ones(graph.n)
    for u, f in cfg.inoculation_factors.items():
        if u in graph.net:
            mult[graph.index(u)] = f
    for u in cfg.blocked_users:
        if u in graph.net:
            mult[graph.index(u)] = 0.0
    return mult


def edge_probabilities(graph: CascadeGraph, node_probs, cfg: SimConfig) -> np.ndarray:
    """Per-edge IP: min(1, alpha * p(victim)) scaled by the infector's multiplier."""
    node_probs = np.asarray(node_probs, dtype=np.float64)
    return scale_probability(node_probs[graph.indices], cfg.alpha) * infector_multipliers(graph, cfg)[graph.src]


def source_probabilities(graph: CascadeGraph, scorer, originator: UserId, text: str) -> np.ndarray:
    """Calibrated pre-alpha probability for every user seeing ``text`` from ``originator``."""
    return np.asarray(scorer.probabilities(list(graph.users), originator, text), dtype=np.float64)


# -- single trials -----------------------------------------------------------

@dataclass(frozen=True)
class Infection:
    time: float
    layer: int
    infector: UserId | None
    tweet_text: str
    mutated: bool = False


@dataclass
class TrialResult:
    infected: dict[UserId, Infection]  # in dequeue order
    per_layer_counts: list[int]
    total: int
    parent_edges: np.ndarray = field(repr=False, default=None)
    nodes: np.ndarray = field(repr=False, default=None)

    @property
    def dequeue_times(self) -> list[float]:
        return [inf.time for inf in self.infected.values()]


def _layer_counts(layers) -> list[int]:
    if len(layers) == 0:
        return []
    return np.bincount(np.asarray(layers, dtype=np.int64)).tolist()


def _max_layer(cfg: SimConfig) -> int:
    return -1 if cfg.max_layer is None else int(cfg.max_layer)


def trace_fixed(graph: CascadeGraph, edge_probs, source: int, seed: int, cfg: SimConfig, text: str = "") -> TrialResult:
    nodes, times, layers, parents = kernels.cascade_trace(
        graph.indptr, graph.indices, edge_probs, source, seed, cfg.delay.code, cfg.delay.value, _max_layer(cfg)
    )
    infected = {}
    for node, t, l, e in zip(nodes.tolist(), times.tolist(), layers.tolist(), parents.tolist()):
        infector = graph.users[graph.src[e]] if e >= 0 else None
        infected[graph.users[node]] = Infection(t, l, infector, text)
    return TrialResult(infected, _layer_counts(layers), len(nodes), parents, nodes)


def _trace_mutating(graph: CascadeGraph, scorer, base_edge_probs, mult, source: int, originator: UserId,
                    text: str, seed: int, cfg: SimConfig, ctx) -> TrialResult:
    """The general path: per-exposure QT draws and lazily scored mutated text."""
    users = graph.users
    indptr, indices = graph.indptr, graph.indices
    max_layer = _max_layer(cfg)
    dkind, dval = cfg.delay.code, cfg.delay.value
    exposed = {source: 0.0}
    layer = {source: 0}
    parent_edge = {source: -1}
    carried: dict[int, tuple] = {source: (text, None, False)}  # (parent text, future, mutated)
    heap = [(0.0, source)]
    infected = {}
    order, parents = [], []
    scored: dict[str, dict[int, float]] = {}
    while heap:
        t_i, i = heapq.heappop(heap)
        parent_text, fut, mutated = carried.pop(i)
        my_text = parent_text
        if fut is not None:
            ac = fut.result()
            if ac is None:
                mutated = False
            else:
                my_text = compose_quote(ac, parent_text)
        e_in = parent_edge[i]
        infected[users[i]] = Infection(t_i, layer[i], users[graph.src[e_in]] if e_in >= 0 else None, my_text, mutated)
        order.append(i)
        parents.append(e_in)
        if max_layer >= 0 and layer[i] >= max_layer:
            continue
        lo, hi = int(indptr[i]), int(indptr[i + 1])
        if my_text == text:
            probs = base_edge_probs[lo:hi]
        else:
            cache = scored.setdefault(my_text, {})
            todo = [int(j) for j in indices[lo:hi] if int(j) not in cache]
            if todo:
                fresh = scorer.probabilities([users[j] for j in todo], originator, my_text)
                cache.update(zip(todo, np.asarray(fresh, dtype=np.float64).tolist()))
            probs = [min(1.0, cfg.alpha * cache[int(j)]) * mult[i] for j in indices[lo:hi]]
        for off, e in enumerate(range(lo, hi)):
            j = int(indices[e])
            if j in exposed:
                continue
            if kernels.draw_uniform(seed, i, j, kernels.DRAW_INFECT) < probs[off]:
                t_j = t_i + _delay(kernels.draw_uniform(seed, i, j, kernels.DRAW_DELAY), dkind, dval)
                exposed[j] = t_j
                layer[j] = layer[i] + 1
                parent_edge[j] = e
                qp = ctx.quote_probability(users[j])
                if qp > 0 and kernels.draw_uniform(seed, i, j, kernels.DRAW_QUOTE) < qp:
                    key = mix64((seed * GOLDEN + j) & MASK)
                    carried[j] = (my_text, ctx.request(users[j], my_text, key), True)
                else:
                    carried[j] = (my_text, None, False)
                heapq.heappush(heap, (t_j, j))
    layers = [layer[i] for i in order]
    return TrialResult(infected, _layer_counts(layers), len(order),
                       np.array(parents, dtype=np.int64), np.array(order, dtype=np.int64))


def run_trial(net: Network | CascadeGraph, scorer, mutate_ctx, source: UserId, source_post: Post,
              cfg: SimConfig, trial_seed: int) -> TrialResult:
    graph = net if isinstance(net, CascadeGraph) else CascadeGraph(net)
    if source not in graph.net:
        raise KeyError(f"source {source!r} is not in the network")
    s = graph.index(source)
    node_probs = source_probabilities(graph, scorer, source, source_post.text)
    eprobs = edge_probabilities(graph, node_probs, cfg)
    if mutate_ctx is None or not cfg.mutation_enabled:
        return trace_fixed(graph, eprobs, s, trial_seed, cfg, source_post.text)
    mult = infector_multipliers(graph, cfg)
    return _trace_mutating(graph, scorer, eprobs, mult, s, source, source_post.text, trial_seed, cfg, mutate_ctx)


# -- ensembles ----------------------------------------------------------------

@dataclass
class EnsembleSummary:
    users: tuple[UserId, ...]
    totals: np.ndarray  # per trial, source included
    layer_counts: np.ndarray  # trials x layers
    node_hits: np.ndarray  # trials in which each user was infected
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_hits: np.ndarray  # infections transmitted along each edge

    @property
    def trials(self) -> int:
        return self.totals.shape[0]

    def layer_bands(self) -> dict[str, np.ndarray]:
        p16, med, p84 = np.percentile(self.layer_counts, [16, 50, 84], axis=0)
        return {"median": med, "p16": p16, "p84": p84}

    @property
    def infection_frequency(self) -> np.ndarray:
        return self.node_hits / self.trials

    @property
    def caused_mean(self) -> np.ndarray:
        caused = np.bincount(self.edge_src, weights=self.edge_hits, minlength=len(self.users))
        return caused / self.trials

    def to_json(self) -> dict:
        bands = self.layer_bands()
        caused = self.caused_mean
        return {
            "schema_version": SUMMARY_SCHEMA_VERSION,
            "trials": self.trials,
            "source_counted_in_totals": True,
            "totals": self.totals.tolist(),
            "mean_total": float(self.totals.mean()),
            "layer_bands": {k: v.tolist() for k, v in bands.items()},
            "infections_caused": {u: float(c) for u, c in zip(self.users, caused) if c > 0},
            "infection_frequency": {u: float(f) for u, f in zip(self.users, self.infection_frequency) if f > 0},
        }


def _pad_cat(blocks: list[np.ndarray]) -> np.ndarray:
    width = max((b.shape[1] for b in blocks), default=1)
    return np.concatenate([np.pad(b, ((0, 0), (0, width - b.shape[1]))) for b in blocks])


def _trim(lc: np.ndarray) -> np.ndarray:
    nz = np.nonzero(lc.any(axis=0))[0]
    return lc[:, : (nz[-1] + 1 if nz.size else 1)]


def simulate_fixed(graph: CascadeGraph, edge_probs, source: int, cfg: SimConfig, threads: int = 1) -> EnsembleSummary:
    """Monte Carlo ensemble with precomputed per-edge probabilities (compiled kernel path)."""
    edge_probs = np.ascontiguousarray(edge_probs, dtype=np.float64)
    if edge_probs.shape != (graph.m,):
        raise ValueError("need one probability per edge")
    seeds = (np.arange(cfg.trials, dtype=np.uint64) + np.uint64(cfg.base_seed & 0xFFFFFFFFFFFFFFFF))
    cap = graph.n if cfg.max_layer is None else min(graph.n, cfg.max_layer + 1)
    cap = max(cap, 1)
    chunks = [(a, min(a + CHUNK, cfg.trials)) for a in range(0, cfg.trials, CHUNK)]
    ml = _max_layer(cfg)

    def work(bounds):
        a, b = bounds
        totals = np.zeros(b - a, dtype=np.int64)
        lc = np.zeros((b - a, cap), dtype=np.int32)
        nh = np.zeros(graph.n, dtype=np.int64)
        eh = np.zeros(graph.m, dtype=np.int64)
        kernels.cascade_accumulate(graph.indptr, graph.indices, edge_probs, source, seeds[a:b],
                                   cfg.delay.code, cfg.delay.value, ml, totals, lc, nh, eh)
        return totals, _trim(lc), nh, eh

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return EnsembleSummary(
        graph.users,
        np.concatenate([p[0] for p in parts]),
        _pad_cat([p[1] for p in parts]),
        np.sum([p[2] for p in parts], axis=0),
        graph.src,
        graph.indices,
        np.sum([p[3] for p in parts], axis=0),
    )


def summarize_trials(graph: CascadeGraph, results: Sequence[TrialResult]) -> EnsembleSummary:
    n, m = graph.n, graph.m
    totals = np.array([r.total for r in results], dtype=np.int64)
    width = max(len(r.per_layer_counts) for r in results)
    lc = np.zeros((len(results), width), dtype=np.int32)
    nh = np.zeros(n, dtype=np.int64)
    eh = np.zeros(m, dtype=np.int64)
    for t, r in enumerate(results):
        lc[t, : len(r.per_layer_counts)] = r.per_layer_counts
        np.add.at(nh, r.nodes, 1)
        pe = r.parent_edges[r.parent_edges >= 0]
        np.add.at(eh, pe, 1)
    return EnsembleSummary(graph.users, totals, lc, nh, graph.src, graph.indices, eh)


def run_ensemble(net: Network | CascadeGraph, scorer, source: UserId, source_post: Post, cfg: SimConfig,
                 mutate_ctx=None, threads: int = 1, node_probs=None) -> EnsembleSummary:
    """``cfg.trials`` trials seeded ``base_seed + index``.

    Without mutation every probability is scored once up front; ``node_probs``
    may supply those scores directly to skip the scorer.
    """
    graph = net if isinstance(net, CascadeGraph) else CascadeGraph(net)
    if source not in graph.net:
        raise KeyError(f"source {source!r} is not in the network")
    s = graph.index(source)
    if node_probs is None:
        node_probs = source_probabilities(graph, scorer, source, source_post.text)
    eprobs = edge_probabilities(graph, node_probs, cfg)
    if mutate_ctx is None or not cfg.mutation_enabled:
        return simulate_fixed(graph, eprobs, s, cfg, threads)
    mult = infector_multipliers(graph, cfg)

    def one(t):
        return _trace_mutating(graph, scorer, eprobs, mult, s, source, source_post.text,
                               cfg.base_seed + t, cfg, mutate_ctx)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, range(cfg.trials)))
    else:
        results = [one(t) for t in range(cfg.trials)]
    return summarize_trials(graph, results)


# -- community views -------------------------------------------------------------

def community_rates(summary: EnsembleSummary, assign) -> dict[int, float]:
    """Mean over trials of infections in each community divided by its population."""
    hits = dict(zip(summary.users, summary.node_hits.tolist()))
    rates = {}
    for c, size in enumerate(assign.sizes()):
        infected = sum(hits.get(u, 0) for u in assign.members(c))
        rates[c] = infected / summary.trials / size
    return rates


def community_heatmap(summary: EnsembleSummary, assign) -> np.ndarray:
    """Entry (a, b): share of all transmissions from community a into community b."""
    k = assign.community_count
    mat = np.zeros((k, k))
    comm = np.array([assign.membership[u] for u in summary.users], dtype=np.int64)
    if summary.edge_hits.size:
        np.add.at(mat, (comm[summary.edge_src], comm[summary.edge_dst]), summary.edge_hits)
    total = mat.sum()
    return mat / total if total > 0 else mat


# -- outputs -------------------------------------------------------------------

def write_layers_csv(path, summary: EnsembleSummary) -> None:
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(["trial_id", "layer", "infections"])
        for t in range(summary.trials):
            row = summary.layer_counts[t]
            for l in range(row.shape[0]):
                if row[l]:
                    w.writerow([t, l, int(row[l])])


def write_heatmap_csv(path, heat: np.ndarray) -> None:
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(["community_from", "community_to", "fraction"])
        for a in range(heat.shape[0]):
            for b in range(heat.shape[1]):
                w.writerow([a, b, repr(float(heat[a, b]))])


def write_summary_json(path, summary: EnsembleSummary, extra: Mapping | None = None) -> None:
    obj = summary.to_json()
    if extra:
        obj.update(extra)
    write_json(path, obj)
