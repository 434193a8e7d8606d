"""Leiden community detection and class-based TF-IDF community labels."""
from __future__ import annotations

import csv
import json
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import igraph as ig
import leidenalg

from .atomicio import atomic_open
from .netgraph import Network, Post, UserId

STOPWORDS = frozenset(
    """
    the and for are but not you all any can had her was one our out his has
    how its may new now old see two who did get got let put say she too use
    that with this from have they will your what when were been than then them
    there their these those would could should about into just like more most
    some such only also very over after before being here which while where
    because does doing dont cant wont https http www com amp
    """.split()
)

_TOKEN = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class CommunityAssignment:
    membership: Mapping[UserId, int]
    community_count: int
    labels: Mapping[int, list[str]] | None = field(default=None)

    def __post_init__(self):
        seen = set(self.membership.values())
        if seen != set(range(self.community_count)):
            raise ValueError("community indices must be contiguous and every community non-empty")

    def members(self, c: int) -> list[UserId]:
        return sorted(u for u, k in self.membership.items() if k == c)

    def sizes(self) -> list[int]:
        counts = Counter(self.membership.values())
        return [counts[c] for c in range(self.community_count)]


def _relabel(groups: list[list[UserId]]) -> dict[UserId, int]:
    # larger communities first, then by smallest member id
    groups = sorted((sorted(g) for g in groups if g), key=lambda g: (-len(g), g[0]))
    return {u: c for c, g in enumerate(groups) for u in g}


def undirected_graph(net: Network) -> ig.Graph:
    """Weighted undirected projection; reciprocal edges have their counts summed."""
    weights: Counter = Counter()
    for (a, b), c in net.edges.items():
        i, j = net.index(a), net.index(b)
        weights[(min(i, j), max(i, j))] += c
    g = ig.Graph(n=len(net.users), edges=list(weights.keys()), directed=False)
    g.es["weight"] = [float(w) for w in weights.values()]
    return g


def detect_communities(net: Network, resolution: float = 1.0, seed: int = 0) -> CommunityAssignment:
    if not net.users:
        raise ValueError("cannot partition an empty network")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    g = undirected_graph(net)
    part = leidenalg.find_partition(
        g,
        leidenalg.RBConfigurationVertexPartition,
        weights="weight" if g.ecount() else None,
        resolution_parameter=resolution,
        n_iterations=-1,
        seed=seed,
    )
    groups = [[net.users[v] for v in comm] for comm in part]
    membership = _relabel(groups)
    return CommunityAssignment(membership, len(set(membership.values())))


def modularity(net: Network, assign: CommunityAssignment, resolution: float = 1.0) -> float:
    """Weighted modularity of the undirected projection (Q = 0 for an edgeless graph)."""
    g = undirected_graph(net)
    if g.ecount() == 0:
        return 0.0
    memb = [assign.membership[u] for u in net.users]
    return g.modularity(memb, weights="weight", resolution=resolution)


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN.split(text.lower()) if len(t) >= 3 and t not in STOPWORDS]


def ctfidf_scores(docs_by_class: Mapping[int, Sequence[str]]) -> dict[int, dict[str, float]]:
    """Class-based TF-IDF: W(t, c) = tf(t, c) * log(1 + A / f(t)).

    tf is L1-normalised within the class, f(t) is the term's total count over
    all classes and A the mean number of tokens per class.
    """
    counts = {c: Counter(t for d in docs for t in tokenize(d)) for c, docs in docs_by_class.items()}
    totals = Counter()
    for cnt in counts.values():
        totals.update(cnt)
    nonempty = [c for c, cnt in counts.items() if cnt]
    if not nonempty:
        return {c: {} for c in counts}
    avg_words = sum(sum(counts[c].values()) for c in nonempty) / len(nonempty)
    scores = {}
    for c, cnt in counts.items():
        n = sum(cnt.values())
        scores[c] = {t: (k / n) * math.log(1.0 + avg_words / totals[t]) for t, k in cnt.items()}
    return scores


def label_communities(
    assign: CommunityAssignment,
    posts: Sequence[Post],
    top_n: int = 5,
    sample_size: int | None = None,
    seed: int = 0,
) -> dict[int, list[str]]:
    """Top ``top_n`` c-TF-IDF terms per community; ``["Other"]`` when it has no text."""
    docs: dict[int, list[str]] = {c: [] for c in range(assign.community_count)}
    for p in posts:
        if p.author not in assign.membership:
            raise KeyError(f"post author {p.author!r} has no community")
        docs[assign.membership[p.author]].append(p.text)
    if sample_size is not None:
        rng = random.Random(seed)
        docs = {c: (rng.sample(d, sample_size) if len(d) > sample_size else d) for c, d in docs.items()}
    scores = ctfidf_scores(docs)
    labels = {}
    for c in range(assign.community_count):
        ranked = sorted(scores[c].items(), key=lambda kv: (-kv[1], kv[0]))
        labels[c] = [t for t, _ in ranked[:top_n]] or ["Other"]
    return labels


def write_assignment(assign: CommunityAssignment, csv_path, labels_path=None) -> None:
    with atomic_open(csv_path) as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "community_index"])
        for u in sorted(assign.membership):
            w.writerow([u, assign.membership[u]])
    if labels_path is not None and assign.labels is not None:
        with atomic_open(labels_path) as fh:
            json.dump({str(k): v for k, v in sorted(assign.labels.items())}, fh, indent=2)


def read_assignment(csv_path, labels_path=None) -> CommunityAssignment:
    with open(csv_path, newline="", encoding="utf-8") as fh:
        membership = {row["user_id"]: int(row["community_index"]) for row in csv.DictReader(fh)}
    labels = None
    if labels_path is not None:
        with open(labels_path, encoding="utf-8") as fh:
            labels = {int(k): v for k, v in json.load(fh).items()}
    return CommunityAssignment(membership, len(set(membership.values())), labels)
