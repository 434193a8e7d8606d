"""Infection model: features from user histories and tweets, training, and scoring.

A feature row describes one exposure: follower ``f`` seeing tweet ``T``
whose originator is ``u``.  The layout is fixed::

    5 originator scalars | 5 follower scalars |
    24 originator authored-post embedding | 24 follower reshared-post embedding |
    96 tweet embedding
"""
from __future__ import annotations

import csv
import hashlib
import logging
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Mapping, Sequence

import numpy as np

from . import gbtlearn
from .atomicio import atomic_open
from .embeddings import TWEET_DIM, USER_DIM, Reducer, fit_reducer, reduce
from .gbtlearn import CalibrationCurve, Dataset, Ensemble, TrainConfig
from .netgraph import Network, Period, Post, RetweetRecord, UserId

log = logging.getLogger(__name__)

SCALAR_NAMES = ("followers", "followees", "ratio", "retweeted_rate", "retweet_rate")
MODEL_SCHEMA_VERSION = 1


def feature_schema(user_dim: int = USER_DIM, tweet_dim: int = TWEET_DIM) -> tuple[str, ...]:
    names = [f"orig_{s}" for s in SCALAR_NAMES]
    names += [f"fol_{s}" for s in SCALAR_NAMES]
    names += [f"orig_auth_emb_{i}" for i in range(user_dim)]
    names += [f"fol_rt_emb_{i}" for i in range(user_dim)]
    names += [f"tweet_emb_{i}" for i in range(tweet_dim)]
    return tuple(names)


def schema_hash(schema: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(schema).encode()).hexdigest()[:16]


class SchemaMismatch(ValueError):
    pass


@dataclass(frozen=True)
class UserFeatures:
    followers: int
    followees: int
    ratio: float
    retweeted_rate: float
    retweet_rate: float
    authored_embedding: np.ndarray
    reshared_embedding: np.ndarray

    @classmethod
    def empty(cls, user_dim: int = USER_DIM) -> "UserFeatures":
        z = np.zeros(user_dim, dtype=np.float32)
        return cls(0, 0, 0.0, 0.0, 0.0, z, z)

    def scalars(self) -> np.ndarray:
        return np.array(
            [self.followers, self.followees, self.ratio, self.retweeted_rate, self.retweet_rate],
            dtype=np.float32,
        )


class History:
    """Indexes over posts and retweets used by feature extraction."""

    def __init__(self, posts: Sequence[Post], retweets: Sequence[RetweetRecord]):
        self.posts = list(posts)
        self.post = {p.post_id: p for p in self.posts}
        self.by_author: dict[UserId, list[Post]] = defaultdict(list)
        for p in self.posts:
            self.by_author[p.author].append(p)
        self.retweets = list(retweets)
        self.resharers: dict[str, set[UserId]] = defaultdict(set)
        self.by_retweeter: dict[UserId, list[RetweetRecord]] = defaultdict(list)
        for r in self.retweets:
            self.resharers[r.post_id].add(r.retweeter)
            self.by_retweeter[r.retweeter].append(r)


def embed_posts(embedder, posts: Sequence[Post]) -> dict[str, np.ndarray]:
    vecs = embedder.embed_many([p.text for p in posts])
    return {p.post_id: v for p, v in zip(posts, vecs)}


def fit_reducers(embedder, posts: Sequence[Post], period: Period,
                 user_dim: int = USER_DIM, tweet_dim: int = TWEET_DIM,
                 post_vectors: Mapping[str, np.ndarray] | None = None) -> tuple[Reducer, Reducer]:
    """Fit user-level and tweet-level reducers on the period's post corpus."""
    corpus = [p for p in posts if p.timestamp in period]
    if post_vectors is None:
        post_vectors = embed_posts(embedder, corpus)
    X = np.stack([post_vectors[p.post_id] for p in corpus])
    return fit_reducer(X, user_dim), fit_reducer(X, tweet_dim)


def feature_table(net: Network, hist: History, period: Period, user_reducer: Reducer,
                  post_vectors: Mapping[str, np.ndarray],
                  users: Sequence[UserId] | None = None) -> dict[UserId, UserFeatures]:
    """UserFeatures for every network user (or ``users``) from activity inside ``period``.

    ``post_vectors`` holds raw embeddings for at least the period's posts.
    """
    users = list(net.users if users is None else users)
    days = period.days
    dim = user_reducer.dim_out
    followers = {u: 0 for u in net.users}
    followees = {u: 0 for u in net.users}
    for a, b in net.edges:
        followers[a] += 1
        followees[b] += 1
    received: dict[UserId, int] = defaultdict(int)
    made: dict[UserId, int] = defaultdict(int)
    reshared_posts: dict[UserId, list[str]] = defaultdict(list)
    for r in hist.retweets:
        if r.timestamp not in period:
            continue
        p = hist.post.get(r.post_id)
        if p is None or p.author == r.retweeter:
            continue
        received[p.author] += 1
        made[r.retweeter] += 1
        reshared_posts[r.retweeter].append(r.post_id)

    needed = {p.post_id for u in users for p in hist.by_author.get(u, ()) if p.timestamp in period}
    needed.update(pid for u in users for pid in reshared_posts.get(u, ()))
    needed = sorted(pid for pid in needed if pid in post_vectors)
    reduced = {}
    if needed:
        R = reduce(user_reducer, np.stack([post_vectors[pid] for pid in needed]))
        reduced = dict(zip(needed, R))

    def mean_of(ids):
        vs = [reduced[i] for i in ids if i in reduced]
        if not vs:
            return np.zeros(dim, dtype=np.float32)
        return np.mean(np.stack(vs), axis=0, dtype=np.float64).astype(np.float32)

    table = {}
    for u in users:
        fo = followers.get(u, 0)
        fe = followees.get(u, 0)
        authored = [p.post_id for p in hist.by_author.get(u, ()) if p.timestamp in period]
        table[u] = UserFeatures(
            followers=fo,
            followees=fe,
            ratio=fo / max(fe, 1),
            retweeted_rate=received.get(u, 0) / days,
            retweet_rate=made.get(u, 0) / days,
            authored_embedding=mean_of(authored),
            reshared_embedding=mean_of(reshared_posts.get(u, ())),
        )
    return table


def extract_user_features(net: Network, posts: Sequence[Post], retweets: Sequence[RetweetRecord],
                          u: UserId, period: Period, embedder, user_reducer: Reducer) -> UserFeatures:
    if u not in net:
        raise KeyError(f"unknown user {u!r}")
    hist = History(posts, retweets)
    vecs = embed_posts(embedder, [p for p in posts if p.timestamp in period])
    return feature_table(net, hist, period, user_reducer, vecs, users=[u])[u]


def feature_vector(follower: UserFeatures, originator: UserFeatures, tweet_vec) -> np.ndarray:
    return np.concatenate([
        originator.scalars(),
        follower.scalars(),
        originator.authored_embedding,
        follower.reshared_embedding,
        np.asarray(tweet_vec, dtype=np.float32),
    ]).astype(np.float32)


def feature_matrix(followers: Sequence[UserFeatures], originator: UserFeatures, tweet_vec) -> np.ndarray:
    n = len(followers)
    tweet_vec = np.asarray(tweet_vec, dtype=np.float32)
    ud = originator.authored_embedding.shape[0]
    X = np.empty((n, 10 + 2 * ud + tweet_vec.shape[0]), dtype=np.float32)
    X[:, 0:5] = originator.scalars()
    X[:, 10:10 + ud] = originator.authored_embedding
    X[:, 10 + 2 * ud:] = tweet_vec
    for k, f in enumerate(followers):
        X[k, 5:10] = f.scalars()
        X[k, 10 + ud:10 + 2 * ud] = f.reshared_embedding
    return X


@dataclass
class ExposureRows:
    X: np.ndarray
    y: np.ndarray
    post_ids: list[str]
    followers: list[UserId]
    timestamps: np.ndarray

    def __len__(self) -> int:
        return self.y.shape[0]

    def select(self, mask) -> "ExposureRows":
        idx = np.nonzero(mask)[0]
        return ExposureRows(self.X[idx], self.y[idx], [self.post_ids[i] for i in idx],
                            [self.followers[i] for i in idx], self.timestamps[idx])


def build_training_set(net: Network, hist: History, period: Period, table: Mapping[UserId, UserFeatures],
                       tweet_reducer: Reducer, post_vectors: Mapping[str, np.ndarray]) -> ExposureRows:
    """One row per (post in period, follower of its author); label = follower reshared it."""
    posts = sorted((p for p in hist.posts if p.timestamp in period and p.author in net),
                   key=lambda p: (p.timestamp, p.post_id))
    ud = next(iter(table.values())).authored_embedding.shape[0] if table else USER_DIM
    empty = UserFeatures.empty(ud)
    blocks, labels, pids, fols, ts = [], [], [], [], []
    for p in posts:
        fs = net.out_neighbors(p.author)
        if not fs:
            continue
        tv = reduce(tweet_reducer, post_vectors[p.post_id])
        X = feature_matrix([table.get(f, empty) for f in fs], table.get(p.author, empty), tv)
        blocks.append(X)
        sharers = hist.resharers.get(p.post_id, set())
        labels.extend(f in sharers for f in fs)
        pids.extend([p.post_id] * len(fs))
        fols.extend(fs)
        ts.extend([p.timestamp] * len(fs))
    width = len(feature_schema(ud, tweet_reducer.dim_out))
    X = np.concatenate(blocks) if blocks else np.zeros((0, width), dtype=np.float32)
    return ExposureRows(X, np.array(labels, dtype=bool), pids, fols, np.array(ts, dtype=np.int64))


def write_features_csv(path, rows: ExposureRows, schema: Sequence[str]) -> None:
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(["post_id", "follower_id", *schema, "label"])
        for k in range(len(rows)):
            w.writerow([rows.post_ids[k], rows.followers[k],
                        *(repr(float(v)) for v in rows.X[k]), int(rows.y[k])])


# -- the model ----------------------------------------------------------------

@dataclass(frozen=True)
class InfectionModel:
    ensemble: Ensemble
    calibration: CalibrationCurve
    user_reducer: Reducer
    tweet_reducer: Reducer
    schema: tuple[str, ...]

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.schema)

    def check(self, X: np.ndarray) -> None:
        if X.shape[-1] != len(self.schema) or self.ensemble.n_features != len(self.schema):
            raise SchemaMismatch(
                f"feature width {X.shape[-1]} does not match model schema of {len(self.schema)} "
                f"(hash {self.schema_hash})"
            )

    def raw_scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        self.check(X)
        out = np.empty(X.shape[0])
        for s in range(0, X.shape[0], 65536):
            out[s:s + 65536] = self.ensemble.predict_proba(X[s:s + 65536])
        return out

    def calibrated(self, X) -> np.ndarray:
        return np.asarray(gbtlearn.apply_calibration(self.calibration, self.raw_scores(X)), dtype=np.float64)

    def tweet_vector(self, embedder, text: str) -> np.ndarray:
        return reduce(self.tweet_reducer, embedder.embed(text))

    def to_json(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "feature_schema": list(self.schema),
            "feature_schema_hash": self.schema_hash,
            "ensemble": self.ensemble.to_json(),
            "calibration": self.calibration.to_json(),
            "user_reducer": self.user_reducer.to_json(),
            "tweet_reducer": self.tweet_reducer.to_json(),
        }

    @classmethod
    def from_json(cls, obj) -> "InfectionModel":
        if obj.get("schema_version") != MODEL_SCHEMA_VERSION:
            raise SchemaMismatch(f"unsupported model file version {obj.get('schema_version')!r}")
        schema = tuple(obj["feature_schema"])
        if schema_hash(schema) != obj["feature_schema_hash"]:
            raise SchemaMismatch("feature schema hash does not match the stored schema")
        return cls(
            Ensemble.from_json(obj["ensemble"]),
            CalibrationCurve.from_json(obj["calibration"]),
            Reducer.from_json(obj["user_reducer"]),
            Reducer.from_json(obj["tweet_reducer"]),
            schema,
        )


def infection_probability(m: InfectionModel, f_j: UserFeatures, u_k: UserFeatures, tweet_vec,
                          alpha: float = 3.0) -> float:
    """clamp(alpha * calibrated score) for a single exposure; ``tweet_vec`` is already reduced."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    x = feature_vector(f_j, u_k, tweet_vec)[None, :]
    return scale_probability(float(m.calibrated(x)[0]), alpha)


def scale_probability(p, alpha: float):
    """The alpha-scaled, clamped infection probability used by the simulator."""
    return np.minimum(1.0, alpha * np.asarray(p, dtype=np.float64)) if np.ndim(p) else min(1.0, alpha * p)


@dataclass
class TrainedModel:
    model: InfectionModel
    train_auc: float
    test_auc: float
    test_scores: np.ndarray
    test_labels: np.ndarray


def train_infection_model(rows: ExposureRows, user_reducer: Reducer, tweet_reducer: Reducer,
                          config: TrainConfig | None = None, train_fraction: float = 0.2,
                          seed: int = 0, negative_keep_rate: float | None = None,
                          n_bins: int = 100, degree: int = 11) -> TrainedModel:
    """Train on a ``train_fraction`` split and calibrate on the remaining rows."""
    cfg = config or TrainConfig(seed=seed)
    tr, te = gbtlearn.train_test_split(len(rows), train_fraction, seed)
    train_set = Dataset(rows.X[tr], rows.y[tr])
    if negative_keep_rate is not None:
        train_set = gbtlearn.downsample_negatives(train_set, negative_keep_rate, seed)
    ens = gbtlearn.train(train_set, cfg)
    schema = feature_schema(user_reducer.dim_out, tweet_reducer.dim_out)
    provisional = InfectionModel(ens, CalibrationCurve((0.0, 1.0)), user_reducer, tweet_reducer, schema)
    train_scores = provisional.raw_scores(rows.X[tr])
    test_scores = provisional.raw_scores(rows.X[te])
    cal = gbtlearn.fit_calibration(test_scores, rows.y[te], n_bins=n_bins, degree=degree)
    model = InfectionModel(ens, cal, user_reducer, tweet_reducer, schema)
    return TrainedModel(
        model,
        gbtlearn.auc(train_scores, rows.y[tr]),
        gbtlearn.auc(test_scores, rows.y[te]),
        test_scores,
        rows.y[te],
    )


def month_periods(period: Period) -> dict[str, Period]:
    """Split a period at calendar-month (UTC) boundaries, keyed 'YYYY-MM'."""
    out = {}
    t = period.start
    while t < period.end:
        d = datetime.fromtimestamp(t, tz=timezone.utc)
        nxt = datetime(d.year + (d.month == 12), d.month % 12 + 1, 1, tzinfo=timezone.utc)
        end = min(int(nxt.timestamp()), period.end)
        out[f"{d.year:04d}-{d.month:02d}"] = Period(t, end)
        t = end
    return out


def evaluate_monthly(m: InfectionModel, test_sets: Mapping[str, tuple]) -> dict[str, float | None]:
    """AUC per month; months with a single class (or no rows) map to None."""
    out = {}
    for month in sorted(test_sets):
        X, y = test_sets[month]
        y = np.asarray(y).astype(bool)
        if y.size == 0 or y.all() or not y.any():
            log.warning("month %s has a single class; AUC undefined", month)
            out[month] = None
            continue
        out[month] = gbtlearn.auc(m.raw_scores(X), y)
    return out


# -- scorers used by the simulator -------------------------------------------

class ModelScorer:
    """Calibrated (pre-alpha) infection probabilities from a trained model."""

    def __init__(self, model: InfectionModel, features: Mapping[UserId, UserFeatures], embedder):
        self.model = model
        self.features = features
        self.embedder = embedder
        self._empty = UserFeatures.empty(model.user_reducer.dim_out)

    def probabilities(self, victims: Sequence[UserId], originator: UserId, text: str) -> np.ndarray:
        if not victims:
            return np.zeros(0)
        tv = self.model.tweet_vector(self.embedder, text)
        X = feature_matrix([self.features.get(v, self._empty) for v in victims],
                           self.features.get(originator, self._empty), tv)
        return self.model.calibrated(X)
