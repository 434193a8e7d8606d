"""Text embedding providers, linear (PCA) reduction, and vector similarity."""
from __future__ import annotations

import hashlib
import logging
import os
import re
import struct
import threading
import time
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import httpx
import numpy as np

from .atomicio import atomic_open

log = logging.getLogger(__name__)

DEFAULT_DIM = 384
USER_DIM = 24
TWEET_DIM = 96

MAGIC = b"EMB1"

_WORD = re.compile(r"[0-9a-z#@']+")


class EmbeddingError(RuntimeError):
    pass


class HashEmbedder:
    """Deterministic bag-of-tokens embedder for offline runs and tests.

    Each token maps to a seeded Gaussian direction; a text embeds to the
    count-weighted sum of its token directions, normalised to unit length.
    Texts sharing vocabulary therefore land close together.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._token_vec = lru_cache(maxsize=1 << 16)(self._make_token_vec)

    def _make_token_vec(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=str(self.seed).encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return rng.standard_normal(self.dim)

    def embed(self, text: str) -> np.ndarray:
        counts = Counter(_WORD.findall(text.lower()))
        v = np.zeros(self.dim)
        for tok in sorted(counts):
            v += counts[tok] * self._token_vec(tok)
        norm = np.linalg.norm(v)
        if norm > 0:
            v /= norm
        return v.astype(np.float32)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([self.embed(t) for t in texts])


class FileEmbeddingStore:
    """Key -> vector lookups backed by an ``embeddings.bin`` file.

    Keys are usually post ids; ``embed`` looks up the text itself as a key.
    """

    def __init__(self, vectors: Mapping[str, np.ndarray], dim: int):
        self.dim = dim
        self._vectors = dict(vectors)

    @classmethod
    def load(cls, path) -> "FileEmbeddingStore":
        vectors, dim = read_embeddings(path)
        return cls(vectors, dim)

    def lookup(self, key: str) -> np.ndarray:
        try:
            return self._vectors[key]
        except KeyError:
            raise EmbeddingError(f"no stored embedding for key {key!r}") from None

    def embed(self, text: str) -> np.ndarray:
        return self.lookup(text)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([self.lookup(t) for t in texts])


class HttpEmbedder:
    """POST {"texts": [...]} -> {"vectors": [[...], ...]} against a remote service."""

    def __init__(self, url: str, dim: int = DEFAULT_DIM, token: str | None = None,
                 retries: int = 2, timeout: float = 30.0, batch_size: int = 64,
                 transport: httpx.BaseTransport | None = None):
        self.url = url
        self.dim = dim
        self.retries = retries
        self.batch_size = batch_size
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self._lock = threading.Lock()

    def _post(self, texts: list[str]) -> np.ndarray:
        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.url, json={"texts": texts})
                resp.raise_for_status()
                vecs = np.asarray(resp.json()["vectors"], dtype=np.float32)
                if vecs.shape != (len(texts), self.dim) or not np.all(np.isfinite(vecs)):
                    raise EmbeddingError(f"endpoint returned vectors of shape {vecs.shape}")
                return vecs
            except (httpx.HTTPError, KeyError, ValueError, EmbeddingError) as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(min(0.1 * 2 ** attempt, 2.0))
        raise EmbeddingError(f"embedding endpoint failed after {self.retries + 1} attempts: {last}")

    def embed(self, text: str) -> np.ndarray:
        return self._post([text])[0]

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.concatenate([self._post(texts[i:i + self.batch_size]) for i in range(0, len(texts), self.batch_size)])


def make_provider(kind: str = "hash", *, dim: int = DEFAULT_DIM, seed: int = 0, path=None,
                  url: str | None = None, token_env: str = "CASCADE_EMBED_API_KEY"):
    if kind == "hash":
        return HashEmbedder(dim, seed)
    if kind == "file":
        return FileEmbeddingStore.load(path)
    if kind == "http":
        return HttpEmbedder(url, dim, token=os.environ.get(token_env))
    raise ValueError(f"unknown embedding provider {kind!r}")


def embed(provider, text: str) -> np.ndarray:
    v = provider.embed(text)
    if v.shape != (provider.dim,) or not np.all(np.isfinite(v)):
        raise EmbeddingError("provider returned a malformed vector")
    return v


# -- embeddings.bin ---------------------------------------------------------

def write_embeddings(path, vectors: Mapping[str, np.ndarray], dim: int) -> None:
    with atomic_open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", len(vectors), dim))
        for key, vec in vectors.items():
            kb = key.encode("utf-8")
            if len(kb) > 0xFFFF:
                raise ValueError(f"key too long: {key[:40]!r}...")
            arr = np.asarray(vec, dtype="<f4")
            if arr.shape != (dim,):
                raise ValueError(f"vector for {key!r} has shape {arr.shape}, expected ({dim},)")
            fh.write(struct.pack("<H", len(kb)))
            fh.write(kb)
            fh.write(arr.tobytes())


def read_embeddings(path) -> tuple[dict[str, np.ndarray], int]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise EmbeddingError(f"{path}: bad magic {data[:4]!r}")
    count, dim = struct.unpack_from("<II", data, 4)
    off = 12
    out = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", data, off)
        off += 2
        key = data[off:off + klen].decode("utf-8")
        off += klen
        out[key] = np.frombuffer(data, dtype="<f4", count=dim, offset=off).astype(np.float32)
        off += 4 * dim
    if off != len(data):
        raise EmbeddingError(f"{path}: {len(data) - off} trailing bytes")
    return out, dim


# -- reduction --------------------------------------------------------------

@dataclass(frozen=True)
class Reducer:
    projection: np.ndarray  # dim_in x dim_out, orthonormal columns
    mean: np.ndarray

    @property
    def dim_in(self) -> int:
        return self.projection.shape[0]

    @property
    def dim_out(self) -> int:
        return self.projection.shape[1]

    def to_json(self) -> dict:
        return {"projection": self.projection.tolist(), "mean": self.mean.tolist()}

    @classmethod
    def from_json(cls, obj) -> "Reducer":
        return cls(np.asarray(obj["projection"], dtype=np.float64), np.asarray(obj["mean"], dtype=np.float64))


def fit_reducer(samples, dim_out: int) -> Reducer:
    """Top ``dim_out`` principal directions of the centred samples."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("samples must be a 2-D array")
    n, d = X.shape
    if dim_out > d:
        raise ValueError(f"dim_out={dim_out} exceeds input dimension {d}")
    if n < dim_out:
        raise ValueError(f"need at least {dim_out} samples, got {n}")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    tol = (s[0] if s.size else 0.0) * max(n, d) * np.finfo(float).eps
    rank = int(np.sum(s > tol))
    if rank >= dim_out:
        P = vt[:dim_out].T
    else:
        log.warning("reducer input has rank %d < %d; completing basis arbitrarily", rank, dim_out)
        basis = vt[:rank].T
        # q[:, :rank] spans the basis, so the remaining columns complete it
        q, _ = np.linalg.qr(np.hstack([basis, np.eye(d)]))
        P = np.hstack([basis, q[:, rank:dim_out]])
    return Reducer(P, mean)


def reduce(r: Reducer, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != r.dim_in:
        raise ValueError(f"vector dim {v.shape[-1]} does not match reducer input {r.dim_in}")
    return ((v - r.mean) @ r.projection).astype(np.float32)


def mean_embedding(vs: Iterable) -> np.ndarray:
    arr = np.asarray(list(vs), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("mean of an empty set of embeddings")
    return arr.mean(axis=0).astype(np.float32)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
