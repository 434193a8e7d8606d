"""Gradient-boosted trees for binary classification, with polynomial recalibration.

Trees are grown depth-wise on second-order (gradient/hessian) statistics of
the logistic loss.  Feature values are bucketed once up front: every distinct
value gets its own bucket for small data (exact splits), otherwise at most
256 quantile buckets per feature.
"""
from __future__ import annotations

import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import nnls
from scipy.stats import rankdata

from . import kernels

EXACT_SPLIT_ROWS = 1024
MAX_BINS = 256


class TrainingError(ValueError):
    pass


@dataclass
class Dataset:
    rows: np.ndarray
    labels: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim == 1:
            self.rows = self.rows[:, None]
        self.labels = np.asarray(self.labels).astype(bool)
        if self.rows.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        if self.labels.shape != (self.rows.shape[0],):
            raise ValueError("labels must have one entry per row")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("features must be finite")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != self.labels.shape or np.any(self.weights < 0):
                raise ValueError("weights must be non-negative, one per row")

    def __len__(self) -> int:
        return self.rows.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.rows[idx], self.labels[idx], None if self.weights is None else self.weights[idx])


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    lam: float = 1.0
    subsample: float = 1.0
    seed: int = 0
    threads: int = 1


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            idx = np.nonzero(inner)[0]
            go_left = X[idx, f[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
        return self.value[node]


@dataclass(frozen=True)
class Ensemble:
    trees: tuple[Tree, ...]
    learning_rate: float
    base_score: float
    n_features: int

    def margin(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.margin(X))

    def to_json(self) -> dict:
        return {
            "kind": "gbt-ensemble",
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "n_features": self.n_features,
            "trees": [
                {k: getattr(t, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}
                for t in self.trees
            ],
        }

    @classmethod
    def from_json(cls, obj) -> "Ensemble":
        trees = tuple(
            Tree(
                np.asarray(t["feature"], dtype=np.int64),
                np.asarray(t["threshold"], dtype=np.float64),
                np.asarray(t["left"], dtype=np.int64),
                np.asarray(t["right"], dtype=np.int64),
                np.asarray(t["value"], dtype=np.float64),
            )
            for t in obj["trees"]
        )
        return cls(trees, float(obj["learning_rate"]), float(obj["base_score"]), int(obj["n_features"]))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def bin_features(X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Bucket codes (uint16, C-order) and per-feature upper bucket edges.

    Code ``k`` means ``edges[k-1] < x <= edges[k]``; a split at bucket ``b``
    sends ``x <= edges[b]`` left.
    """
    n, d = X.shape
    codes = np.empty((n, d), dtype=np.uint16)
    edges = []
    q = np.linspace(0.0, 1.0, MAX_BINS + 1)[1:-1]
    for f in range(d):
        col = X[:, f]
        uniq = np.unique(col)
        if n < EXACT_SPLIT_ROWS or uniq.size <= MAX_BINS:
            e = uniq
        else:
            e = np.unique(np.quantile(col, q, method="higher"))
        codes[:, f] = np.searchsorted(e, col, side="left")
        edges.append(e)
    return codes, edges


class _Grower:
    def __init__(self, codes, edges, cfg: TrainConfig, pool):
        self.codes = codes
        self.edges = edges
        self.cfg = cfg
        self.pool = pool
        self.n_features = codes.shape[1]
        self.n_bins = max(len(e) + 1 for e in edges)
        nb = np.array([len(e) for e in edges])
        # empty sides are rejected later through the hessian masks
        self.valid = np.arange(self.n_bins)[None, :] < nb[:, None]
        chunk = max(1, math.ceil(self.n_features / max(1, cfg.threads)))
        self.chunks = [(s, min(s + chunk, self.n_features)) for s in range(0, self.n_features, chunk)]

    def hist(self, rows, grad, hess):
        out = np.empty((self.n_features, self.n_bins, 2))
        if self.pool is None or len(self.chunks) == 1:
            kernels.histogram(self.codes, rows, grad, hess, self.n_bins, 0, self.n_features, out)
        else:
            futs = [
                self.pool.submit(kernels.histogram, self.codes, rows, grad, hess, self.n_bins, a, b, out)
                for a, b in self.chunks
            ]
            for f in futs:
                f.result()
        return out

    def best_split(self, hist, G, H):
        lam = self.cfg.lam
        GL = np.cumsum(hist[:, :, 0], axis=1)
        HL = np.cumsum(hist[:, :, 1], axis=1)
        GR = G - GL
        HR = H - HL
        mcw = self.cfg.min_child_weight
        floor = max(mcw, 1e-12)
        ok = self.valid & (HL >= floor) & (HR >= floor)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam))
        gain = np.where(ok, gain, -np.inf)
        k = int(np.argmax(gain))
        f, b = divmod(k, self.n_bins)
        g = gain[f, b]
        if not np.isfinite(g) or g <= 1e-12:
            return None
        return f, b

    def grow(self, rows, grad, hess) -> Tree:
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node():
            for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0)):
                lst.append(v)
            return len(feature) - 1

        root = new_node()
        stack = [(root, rows, self.hist(rows, grad, hess), 0)]
        lam = self.cfg.lam
        while stack:
            node, r, h, depth = stack.pop()
            G = float(grad[r].sum())
            H = float(hess[r].sum())
            split = self.best_split(h, G, H) if depth < self.cfg.max_depth and r.size >= 2 else None
            if split is None:
                value[node] = -G / (H + lam)
                continue
            f, b = split
            mask = self.codes[r, f] <= b
            rl, rr = r[mask], r[~mask]
            if rl.size <= rr.size:
                hl = self.hist(rl, grad, hess)
                hr = h - hl
            else:
                hr = self.hist(rr, grad, hess)
                hl = h - hr
            ln, rn = new_node(), new_node()
            feature[node] = f
            threshold[node] = float(self.edges[f][b])
            left[node], right[node] = ln, rn
            stack.append((rn, rr, hr, depth + 1))
            stack.append((ln, rl, hl, depth + 1))
        return Tree(
            np.array(feature, dtype=np.int64),
            np.array(threshold, dtype=np.float64),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(value, dtype=np.float64),
        )


def base_rate(data: Dataset) -> float:
    w = np.ones(len(data)) if data.weights is None else data.weights
    return float(np.sum(w * data.labels) / np.sum(w))


def train(data: Dataset, config: TrainConfig | None = None, *, trace: list | None = None) -> Ensemble:
    """Fit a boosted ensemble; ``trace`` (if given) receives the training logloss per round."""
    cfg = config or TrainConfig()
    y = data.labels.astype(np.float64)
    if y.min() == y.max():
        raise TrainingError("training labels contain a single class; check the label column")
    w = np.ones(len(data)) if data.weights is None else data.weights
    p0 = base_rate(data)
    base = math.log(p0 / (1.0 - p0))
    codes, edges = bin_features(data.rows)
    rng = np.random.default_rng(cfg.seed)
    margin = np.full(len(data), base)
    trees = []
    all_rows = np.arange(len(data), dtype=np.int64)
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        grower = _Grower(codes, edges, cfg, pool)
        if trace is not None:
            trace.append(logloss(margin, y, w))
        for _ in range(cfg.rounds):
            p = _sigmoid(margin)
            grad = w * (p - y)
            hess = np.maximum(w * p * (1.0 - p), 1e-16)
            if cfg.subsample < 1.0:
                size = max(1, int(round(cfg.subsample * len(data))))
                rows = np.sort(rng.choice(len(data), size=size, replace=False)).astype(np.int64)
            else:
                rows = all_rows
            tree = grower.grow(rows, grad, hess)
            trees.append(tree)
            margin += cfg.learning_rate * _predict_codes(tree, codes, edges)
            if trace is not None:
                trace.append(logloss(margin, y, w))
    finally:
        if pool is not None:
            pool.shutdown()
    return Ensemble(tuple(trees), cfg.learning_rate, base, data.rows.shape[1])


def _predict_codes(tree: Tree, codes, edges) -> np.ndarray:
    # map thresholds back to bucket indices so training rows need no re-binning
    bucket = np.array(
        [np.searchsorted(edges[f], t) if f >= 0 else 0 for f, t in zip(tree.feature, tree.threshold)],
        dtype=np.int64,
    )
    node = np.zeros(codes.shape[0], dtype=np.int64)
    while True:
        f = tree.feature[node]
        inner = f >= 0
        if not inner.any():
            break
        idx = np.nonzero(inner)[0]
        go_left = codes[idx, f[idx]] <= bucket[node[idx]]
        node[idx] = np.where(go_left, tree.left[node[idx]], tree.right[node[idx]])
    return tree.value[node]


def logloss(margin, y, w=None) -> float:
    margin = np.asarray(margin, dtype=np.float64)
    w = np.ones_like(margin) if w is None else w
    # log(1 + e^m) - y m, computed stably
    loss = np.logaddexp(0.0, margin) - y * margin
    return float(np.sum(w * loss) / np.sum(w))


def predict_prob(m: Ensemble, row) -> float:
    return float(m.predict_proba(np.asarray(row, dtype=np.float64)[None, :])[0])


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties count 1/2)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined without both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def train_test_split(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(train_fraction * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


def downsample_negatives(data: Dataset, keep_rate: float, seed: int) -> Dataset:
    """Keep every positive and a ``keep_rate`` fraction of negatives, reweighted by 1/keep_rate."""
    if not 0 < keep_rate <= 1:
        raise ValueError("keep_rate must be in (0, 1]")
    rng = np.random.default_rng(seed)
    keep = data.labels | (rng.random(len(data)) < keep_rate)
    w = np.ones(len(data)) if data.weights is None else data.weights.copy()
    w[~data.labels] /= keep_rate
    return Dataset(data.rows[keep], data.labels[keep], w[keep])


# -- hyper-parameter search ------------------------------------------------

DEFAULT_SEARCH_SPACE = {
    "rounds": [50, 100, 200, 400],
    "max_depth": [3, 4, 5, 6, 8],
    "learning_rate": (0.02, 0.3),
    "min_child_weight": [0.5, 1.0, 5.0, 20.0],
    "lam": (0.0, 10.0),
    "subsample": (0.5, 1.0),
}


@dataclass
class TuneResult:
    best_config: TrainConfig
    best_auc: float
    history: list[tuple[TrainConfig, float]] = field(default_factory=list)


def _sample(space: Mapping, rng: random.Random, base: TrainConfig) -> TrainConfig:
    params = {}
    for name in sorted(space):
        choice = space[name]
        if isinstance(choice, tuple):
            lo, hi = choice
            if isinstance(lo, int) and isinstance(hi, int):
                params[name] = rng.randint(lo, hi)
            else:
                params[name] = rng.uniform(lo, hi)
        else:
            params[name] = rng.choice(list(choice))
    return replace(base, **params)


def tune(data: Dataset, search_space: Mapping | None = None, budget: int = 10, seed: int = 0,
         valid_fraction: float = 0.25, base: TrainConfig | None = None) -> TuneResult:
    """Random search; the best held-out AUC wins, earliest sample on ties."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    space = DEFAULT_SEARCH_SPACE if search_space is None else search_space
    base = base or TrainConfig(seed=seed)
    tr, va = train_test_split(len(data), 1.0 - valid_fraction, seed)
    train_set, valid_set = data.subset(tr), data.subset(va)
    rng = random.Random(seed)
    result = None
    for _ in range(budget):
        cfg = _sample(space, rng, base)
        score = auc(train(train_set, cfg).predict_proba(valid_set.rows), valid_set.labels)
        if result is None:
            result = TuneResult(cfg, score)
        elif score > result.best_auc:
            result.best_config, result.best_auc = cfg, score
        result.history.append((cfg, score))
    return result


# -- calibration ------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationCurve:
    coefficients: tuple[float, ...]  # increasing powers, constant term first

    def __post_init__(self):
        if any(c < 0 for c in self.coefficients):
            raise ValueError("calibration coefficients must be non-negative")

    def __call__(self, score):
        return apply_calibration(self, score)

    def to_json(self) -> dict:
        return {"kind": "nonneg-polynomial", "coefficients": list(self.coefficients)}

    @classmethod
    def from_json(cls, obj) -> "CalibrationCurve":
        return cls(tuple(float(c) for c in obj["coefficients"]))


def calibration_points(scores, labels, n_bins: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Per equal-count quantile bin: (mean score, empirical positive rate)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    order = np.argsort(s, kind="stable")
    bins = np.array_split(order, n_bins)
    x = np.array([s[b].mean() for b in bins])
    r = np.array([y[b].mean() for b in bins])
    return x, r


def fit_calibration(scores, labels, n_bins: int = 100, degree: int = 11) -> CalibrationCurve:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if np.any((s < 0) | (s > 1)):
        raise ValueError("scores must lie in [0, 1]")
    if s.size < n_bins:
        raise ValueError(f"need at least n_bins={n_bins} samples, got {s.size}")
    if s.min() == s.max():
        return CalibrationCurve((float(y.mean()),) + (0.0,) * degree)
    x, r = calibration_points(s, y, n_bins)
    A = np.vander(x, degree + 1, increasing=True)
    coef, _ = nnls(A, r, maxiter=50 * A.shape[1])
    return CalibrationCurve(tuple(float(c) for c in coef))


def apply_calibration(c: CalibrationCurve, score):
    s = np.asarray(score, dtype=np.float64)
    out = np.zeros_like(s)
    for coef in reversed(c.coefficients):
        out = out * s + coef
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def config_to_json(cfg: TrainConfig) -> dict:
    return asdict(cfg)
