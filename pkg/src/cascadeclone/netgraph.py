"""Directed reshare network built from post and retweet records.

An edge ``(a, b)`` means ``b`` reshared at least one post authored by ``a``;
in simulation terms ``b`` is a follower of ``a`` and exposure flows a -> b.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

UserId = str


class IngestError(ValueError):
    """A malformed or dangling input record."""


@dataclass(frozen=True)
class Post:
    post_id: str
    author: UserId
    timestamp: int
    text: str


@dataclass(frozen=True)
class RetweetRecord:
    post_id: str
    retweeter: UserId
    timestamp: int
    is_quote: bool = False
    quote_text: str | None = None

    def __post_init__(self):
        if self.is_quote != (self.quote_text is not None):
            raise IngestError(
                f"retweet of {self.post_id!r} by {self.retweeter!r}: "
                "quote_text must be present iff is_quote"
            )


@dataclass(frozen=True)
class Period:
    """Half-open time range [start, end) in UTC seconds."""

    start: int
    end: int

    def __contains__(self, ts: int) -> bool:
        return self.start <= ts < self.end

    @property
    def days(self) -> float:
        return (self.end - self.start) / 86400.0


@dataclass(frozen=True)
class Network:
    users: tuple[UserId, ...]
    edges: Mapping[tuple[UserId, UserId], int]
    _index: Mapping[UserId, int] = field(default=None, repr=False, compare=False)
    _out: Mapping[UserId, tuple[UserId, ...]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        users = tuple(sorted(set(self.users)))
        if any(not u for u in users):
            raise ValueError("user ids must be non-empty")
        edges = {}
        members = set(users)
        for (a, b), c in self.edges.items():
            if a not in members or b not in members:
                raise ValueError(f"edge ({a!r}, {b!r}) has an endpoint outside users")
            if c < 1:
                raise ValueError(f"edge ({a!r}, {b!r}) has non-positive count {c}")
            edges[(a, b)] = int(c)
        edges = dict(sorted(edges.items()))
        out: dict[UserId, list[UserId]] = {u: [] for u in users}
        for a, b in edges:
            out[a].append(b)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "edges", MappingProxyType(edges))
        object.__setattr__(self, "_index", MappingProxyType({u: i for i, u in enumerate(users)}))
        object.__setattr__(self, "_out", MappingProxyType({u: tuple(v) for u, v in out.items()}))

    def __len__(self) -> int:
        return len(self.users)

    def index(self, u: UserId) -> int:
        try:
            return self._index[u]
        except KeyError:
            raise KeyError(f"unknown user {u!r}") from None

    def __contains__(self, u: UserId) -> bool:
        return u in self._index

    def out_neighbors(self, u: UserId) -> tuple[UserId, ...]:
        if u not in self._index:
            raise KeyError(f"unknown user {u!r}")
        return self._out[u]

    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(indptr, indices, counts) with rows and columns in sorted-user order."""
        n = len(self.users)
        m = len(self.edges)
        src = np.empty(m, dtype=np.int64)
        dst = np.empty(m, dtype=np.int64)
        cnt = np.empty(m, dtype=np.int64)
        for k, ((a, b), c) in enumerate(self.edges.items()):
            src[k] = self._index[a]
            dst[k] = self._index[b]
            cnt[k] = c
        # edges are sorted by (a, b) and ids are sorted, so rows are already grouped
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return np.cumsum(indptr), dst, cnt

    def subgraph(self, keep: Iterable[UserId]) -> "Network":
        keep = set(keep)
        edges = {(a, b): c for (a, b), c in self.edges.items() if a in keep and b in keep}
        return Network(tuple(keep), edges)


def build_edges(posts: Sequence[Post], retweets: Sequence[RetweetRecord]) -> Network:
    """Infer the reshare network: one edge per (author, resharer) pair."""
    author = {p.post_id: p.author for p in posts}
    users = set(author.values())
    counts: Counter = Counter()
    for r in retweets:
        if r.post_id not in author:
            raise IngestError(f"retweet by {r.retweeter!r} references unknown post {r.post_id!r}")
        a = author[r.post_id]
        users.add(r.retweeter)
        if a == r.retweeter:
            continue
        counts[(a, r.retweeter)] += 1
    return Network(tuple(users), dict(counts))


def activity(net: Network) -> dict[UserId, int]:
    """Total reshares made by each user, sum_i |R_ij|."""
    act = {u: 0 for u in net.users}
    for (_, b), c in net.edges.items():
        act[b] += c
    return act


def filter_top_active(net: Network, k: int) -> Network:
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= len(net.users):
        return net
    act = activity(net)
    ranked = sorted(net.users, key=lambda u: (-act[u], u))
    return net.subgraph(ranked[:k])


def followers_of(net: Network, u: UserId) -> set[UserId]:
    return set(net.out_neighbors(u))


def followees_of(net: Network, u: UserId) -> set[UserId]:
    if u not in net:
        raise KeyError(f"unknown user {u!r}")
    return {a for (a, b) in net.edges if b == u}


def degree_distribution(net: Network) -> dict[int, int]:
    """Histogram of total degree (in + out) over users."""
    deg = {u: 0 for u in net.users}
    for a, b in net.edges:
        deg[a] += 1
        deg[b] += 1
    return dict(sorted(Counter(deg.values()).items()))


# -- jsonl ingest ----------------------------------------------------------

def _records(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def read_posts(path, period: Period | None = None) -> list[Post]:
    out = []
    seen = set()
    for lineno, obj in _records(Path(path)):
        try:
            p = Post(str(obj["post_id"]), str(obj["author_id"]), int(obj["timestamp"]), str(obj.get("text", "")))
        except KeyError as exc:
            raise IngestError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
        if p.post_id in seen:
            raise IngestError(f"{path}:{lineno}: duplicate post_id {p.post_id!r}")
        seen.add(p.post_id)
        if period is not None and p.timestamp not in period:
            continue
        out.append(p)
    return out


def read_retweets(path, period: Period | None = None) -> list[RetweetRecord]:
    out = []
    for lineno, obj in _records(Path(path)):
        try:
            r = RetweetRecord(
                str(obj["post_id"]),
                str(obj["retweeter_id"]),
                int(obj["timestamp"]),
                bool(obj.get("is_quote", False)),
                obj.get("quote_text"),
            )
        except KeyError as exc:
            raise IngestError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
        except IngestError as exc:
            raise IngestError(f"{path}:{lineno}: {exc}") from None
        if period is not None and r.timestamp not in period:
            continue
        out.append(r)
    return out


def post_to_json(p: Post) -> dict:
    return {"post_id": p.post_id, "author_id": p.author, "timestamp": p.timestamp, "text": p.text}


def retweet_to_json(r: RetweetRecord) -> dict:
    obj = {"post_id": r.post_id, "retweeter_id": r.retweeter, "timestamp": r.timestamp, "is_quote": r.is_quote}
    if r.is_quote:
        obj["quote_text"] = r.quote_text
    return obj


def network_to_json(net: Network) -> dict:
    return {
        "schema_version": 1,
        "users": list(net.users),
        "edges": [[a, b, c] for (a, b), c in net.edges.items()],
    }


def network_from_json(obj: dict) -> Network:
    if obj.get("schema_version") != 1:
        raise ValueError(f"unsupported network schema {obj.get('schema_version')!r}")
    return Network(tuple(obj["users"]), {(a, b): int(c) for a, b, c in obj["edges"]})
