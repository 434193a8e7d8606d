"""Synthetic corpora with planted ground truth, and an exact live-edge cascade oracle."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .atomicio import atomic_open
from .embeddings import HashEmbedder, write_embeddings
from .netgraph import Network, Period, Post, RetweetRecord, UserId, post_to_json, retweet_to_json

DAY = 86400
# 2024-01-01T00:00:00Z
EPOCH = 1704067200

MAX_ORACLE_EDGES = 16

FILLER = ("today", "really", "people", "think", "news", "look", "story", "thing", "share", "read")


def default_periods() -> tuple[Period, Period, Period]:
    """Three consecutive 60-day periods starting at EPOCH."""
    return tuple(Period(EPOCH + k * 60 * DAY, EPOCH + (k + 1) * 60 * DAY) for k in range(3))


@dataclass(frozen=True)
class SynthSpec:
    block_sizes: tuple[int, ...] = (250, 250)
    p_in: float = 0.05
    p_out: float = 0.005
    n_topics: int = 4
    words_per_topic: int = 12
    words_per_post: int = 8
    preference_focus: float = 0.5  # weight on the block's own topic
    posts_per_user: float = 3.0  # mean posts per user per period
    link_a: float = 12.0
    link_b: float = -8.0
    quoter_fraction: float = 0.05
    quote_rate: float = 0.5  # quoters quote instead of plain resharing this often
    periods: tuple[Period, ...] = field(default_factory=default_periods)
    seed: int = 0

    def __post_init__(self):
        for name in ("p_in", "p_out", "preference_focus", "quoter_fraction", "quote_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not self.block_sizes or any(b < 1 for b in self.block_sizes):
            raise ValueError("block sizes must be positive")
        if self.n_topics < 1 or self.words_per_topic < 1 or self.words_per_post < 1:
            raise ValueError("topic vocabulary sizes must be positive")
        object.__setattr__(self, "block_sizes", tuple(self.block_sizes))
        object.__setattr__(self, "periods", tuple(self.periods))

    @property
    def n_users(self) -> int:
        return sum(self.block_sizes)

    def to_json(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "periods"}
        d["block_sizes"] = list(self.block_sizes)
        d["periods"] = [[p.start, p.end] for p in self.periods]
        return d

    @classmethod
    def from_json(cls, obj: Mapping) -> "SynthSpec":
        obj = dict(obj)
        if "periods" in obj:
            obj["periods"] = tuple(Period(int(a), int(b)) for a, b in obj["periods"])
        if "block_sizes" in obj:
            obj["block_sizes"] = tuple(obj["block_sizes"])
        return cls(**obj)


def user_ids(n: int) -> list[UserId]:
    width = max(5, len(str(n)))
    return [f"u{i:0{width}d}" for i in range(n)]


def block_labels(spec: SynthSpec) -> dict[UserId, int]:
    ids = user_ids(spec.n_users)
    labels = np.repeat(np.arange(len(spec.block_sizes)), spec.block_sizes)
    return dict(zip(ids, labels.tolist()))


def _sample_pairs(rng, n_rows: int, n_cols: int, p: float, same: bool) -> tuple[np.ndarray, np.ndarray]:
    """Distinct (row, col) cells, each kept with probability p; the diagonal is excluded when ``same``."""
    width = n_cols - 1 if same else n_cols
    total = n_rows * width
    if total <= 0 or p <= 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    k = rng.binomial(total, p)
    cells = np.sort(rng.choice(total, size=k, replace=False)) if k < total else np.arange(total)
    rows, cols = np.divmod(cells, width)
    if same:
        cols = cols + (cols >= rows)
    return rows, cols


def generate_network(spec: SynthSpec) -> Network:
    """Directed stochastic block model; every sampled edge gets a reshare count >= 1."""
    rng = np.random.default_rng([spec.seed, 1])
    ids = user_ids(spec.n_users)
    offsets = np.concatenate([[0], np.cumsum(spec.block_sizes)])
    srcs, dsts = [], []
    for a, na in enumerate(spec.block_sizes):
        for b, nb in enumerate(spec.block_sizes):
            r, c = _sample_pairs(rng, na, nb, spec.p_in if a == b else spec.p_out, a == b)
            srcs.append(r + offsets[a])
            dsts.append(c + offsets[b])
    src = np.concatenate(srcs)
    dst = np.concatenate(dsts)
    counts = 1 + rng.poisson(1.0, size=src.shape[0])
    edges = {(ids[s], ids[d]): int(k) for s, d, k in zip(src.tolist(), dst.tolist(), counts.tolist())}
    return Network(tuple(ids), edges)


# -- histories ---------------------------------------------------------------

def topic_vocabulary(spec: SynthSpec) -> list[list[str]]:
    syllables = ("ka", "lo", "mi", "ru", "te", "zo", "bi", "ne", "sa", "fu", "go", "pe")
    out = []
    for t in range(spec.n_topics):
        words = []
        for w in range(spec.words_per_topic):
            a, b = divmod(t * spec.words_per_topic + w, len(syllables))
            words.append(f"{syllables[a % len(syllables)]}{syllables[b]}{t}x{w}")
        out.append(words)
    return out


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class TruthScorer:
    """The generative reshare probability, usable wherever a simulator scorer is expected.

    A text's topic mixture is the share of its topic-vocabulary tokens per topic;
    affinity is the follower's preference vector dotted with that mixture.
    """

    def __init__(self, spec: SynthSpec, preferences: Mapping[UserId, np.ndarray]):
        self.a = spec.link_a
        self.b = spec.link_b
        self.n_topics = spec.n_topics
        self.preferences = preferences
        self._word_topic = {w: t for t, ws in enumerate(topic_vocabulary(spec)) for w in ws}
        self._zero = np.zeros(spec.n_topics)

    def mixture(self, text: str) -> np.ndarray:
        counts = np.zeros(self.n_topics)
        for tok in text.lower().split():
            t = self._word_topic.get(tok.strip(".,!?:;'\"#"))
            if t is not None:
                counts[t] += 1
        total = counts.sum()
        return counts / total if total else counts

    def probability(self, victim: UserId, text: str) -> float:
        return float(_sigmoid(self.a * float(self.preferences.get(victim, self._zero) @ self.mixture(text)) + self.b))

    def probabilities(self, victims: Sequence[UserId], originator: UserId, text: str) -> np.ndarray:
        mix = self.mixture(text)
        aff = np.array([self.preferences.get(v, self._zero) @ mix for v in victims], dtype=np.float64)
        return _sigmoid(self.a * aff + self.b)


@dataclass
class SyntheticCorpus:
    posts: list[Post]
    retweets: list[RetweetRecord]
    truth: TruthScorer
    preferences: dict[UserId, np.ndarray]
    post_topics: dict[str, int]
    quoters: list[UserId]


def generate_histories(spec: SynthSpec, net: Network) -> SyntheticCorpus:
    """Posts and reshares over all periods; reshares follow sigmoid(a * affinity + b)."""
    rng = np.random.default_rng([spec.seed, 2])
    vocab = topic_vocabulary(spec)
    labels = block_labels(spec)
    ids = list(net.users)
    prefs = {}
    for u in ids:
        noise = rng.dirichlet(np.ones(spec.n_topics))
        home = np.zeros(spec.n_topics)
        home[labels.get(u, 0) % spec.n_topics] = 1.0
        prefs[u] = spec.preference_focus * home + (1 - spec.preference_focus) * noise
    truth = TruthScorer(spec, prefs)
    n_quoters = int(round(spec.quoter_fraction * len(ids)))
    quoters = sorted(ids[i] for i in rng.choice(len(ids), size=n_quoters, replace=False)) if n_quoters else []
    quoter_set = set(quoters)

    posts, retweets, post_topics = [], [], {}
    serial = 0
    for period in spec.periods:
        span = period.end - period.start
        for u in ids:
            for _ in range(rng.poisson(spec.posts_per_user)):
                topic = int(rng.choice(spec.n_topics, p=prefs[u]))
                words = list(rng.choice(vocab[topic], size=spec.words_per_post))
                words.insert(int(rng.integers(len(words) + 1)), str(rng.choice(FILLER)))
                ts = period.start + int(rng.integers(max(span - DAY, 1)))
                pid = f"p{serial:07d}"
                serial += 1
                post = Post(pid, u, ts, " ".join(words))
                posts.append(post)
                post_topics[pid] = topic
                fs = net.out_neighbors(u)
                if not fs:
                    continue
                p = truth.probabilities(fs, u, post.text)
                hit = rng.random(len(fs)) < p
                lag = rng.integers(60, DAY, size=len(fs))
                qdraw = rng.random(len(fs))
                for f, h, dt, q in zip(fs, hit, lag, qdraw):
                    if not h:
                        continue
                    if f in quoter_set and q < spec.quote_rate:
                        pref_topic = int(np.argmax(prefs[f]))
                        comment = f"{f} says " + " ".join(rng.choice(vocab[pref_topic], size=3))
                        retweets.append(RetweetRecord(pid, f, ts + int(dt), True, comment))
                    else:
                        retweets.append(RetweetRecord(pid, f, ts + int(dt)))
    posts.sort(key=lambda p: (p.timestamp, p.post_id))
    retweets.sort(key=lambda r: (r.timestamp, r.post_id, r.retweeter))
    return SyntheticCorpus(posts, retweets, truth, prefs, post_topics, quoters)


# -- oracle ---------------------------------------------------------------------

def brute_force_cascade(net: Network, edge_probabilities: Mapping[tuple[UserId, UserId], float],
                        source: UserId) -> dict[UserId, float]:
    """Exact P(infected) per user by enumerating every live/dead pattern of the uncertain edges.

    Edges missing from ``edge_probabilities`` count as probability 0.
    """
    if source not in net:
        raise KeyError(f"source {source!r} is not in the network")
    sure, uncertain = [], []
    for e in net.edges:
        p = float(edge_probabilities.get(e, 0.0))
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"edge {e} probability {p} outside [0, 1]")
        if p >= 1.0:
            sure.append(e)
        elif p > 0.0:
            uncertain.append((e, p))
    if len(uncertain) > MAX_ORACLE_EDGES:
        raise ValueError(
            f"{len(uncertain)} probabilistic edges exceed the enumeration limit of {MAX_ORACLE_EDGES}; "
            "compare against a Monte Carlo ensemble instead"
        )
    idx = net.index
    n = len(net.users)
    s = idx(source)
    prob = np.zeros(n)
    for pattern in itertools.product((False, True), repeat=len(uncertain)):
        w = 1.0
        adj = [[] for _ in range(n)]
        for (a, b) in sure:
            adj[idx(a)].append(idx(b))
        for live, ((a, b), p) in zip(pattern, uncertain):
            if live:
                w *= p
                adj[idx(a)].append(idx(b))
            else:
                w *= 1.0 - p
        if w == 0.0:
            continue
        seen = {s}
        stack = [s]
        while stack:
            for j in adj[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        prob[list(seen)] += w
    return {u: float(min(1.0, prob[i])) for i, u in enumerate(net.users)}


# -- files --------------------------------------------------------------------

def write_corpus(out_dir, spec: SynthSpec, net: Network, corpus: SyntheticCorpus,
                 embed_dim: int = 384) -> dict[str, Path]:
    """posts.jsonl, retweets.jsonl, embeddings.bin (keyed by text), and the planted truth."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "posts": out / "posts.jsonl",
        "retweets": out / "retweets.jsonl",
        "embeddings": out / "embeddings.bin",
        "truth": out / "truth.json",
    }
    with atomic_open(paths["posts"]) as fh:
        for p in corpus.posts:
            fh.write(json.dumps(post_to_json(p), sort_keys=True) + "\n")
    with atomic_open(paths["retweets"]) as fh:
        for r in corpus.retweets:
            fh.write(json.dumps(retweet_to_json(r), sort_keys=True) + "\n")
    embedder = HashEmbedder(embed_dim, spec.seed)
    texts = sorted({p.text for p in corpus.posts} | {r.quote_text for r in corpus.retweets if r.is_quote})
    write_embeddings(paths["embeddings"], {t: embedder.embed(t) for t in texts}, embed_dim)
    truth = {
        "synth_spec": spec.to_json(),
        "blocks": block_labels(spec),
        "preferences": {u: v.tolist() for u, v in corpus.preferences.items()},
        "quoters": corpus.quoters,
        "post_topics": corpus.post_topics,
    }
    with atomic_open(paths["truth"]) as fh:
        json.dump(truth, fh, sort_keys=True)
    return paths
