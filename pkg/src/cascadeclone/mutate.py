"""Quote-tweet mutation: per-user QT profiles, LLM commentary prediction, and gating."""
from __future__ import annotations

import json
import logging
import os
import random
import re
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import httpx
import numpy as np

from .embeddings import cosine_similarity, reduce
from .netgraph import Period, Post, RetweetRecord, UserId

log = logging.getLogger(__name__)

MIN_TRAIN_QTS = 25
MIN_EVAL_QTS = 20
API_KEY_ENV = "CASCADE_LLM_API_KEY"


class LlmError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuoteEvent:
    parent_text: str
    added_commentary: str
    timestamp: int = 0

    def __post_init__(self):
        if not self.parent_text:
            raise ValueError("quote event needs a parent text")


@dataclass
class UserQtProfile:
    user: UserId
    history: list[QuoteEvent] = field(default_factory=list)
    qt_count_train: int = 0
    rt_count_train: int = 0
    qt_count_eval: int = 0
    mutation_enabled: bool = False

    @property
    def qp(self) -> float:
        return qt_probability(self)


def check_eligibility(profile: UserQtProfile) -> bool:
    return profile.qt_count_train >= MIN_TRAIN_QTS and profile.qt_count_eval >= MIN_EVAL_QTS


def qt_probability(profile: UserQtProfile) -> float:
    denom = profile.qt_count_train + profile.rt_count_train
    return profile.qt_count_train / denom if denom else 0.0


def build_profiles(posts: Sequence[Post], retweets: Sequence[RetweetRecord], train: Period,
                   evaluation: Period) -> tuple[dict[UserId, UserQtProfile], dict[UserId, list[QuoteEvent]]]:
    """QT/RT counts and QT histories per resharer; returns (profiles, evaluation events)."""
    text = {p.post_id: p.text for p in posts}
    profiles: dict[UserId, UserQtProfile] = {}
    eval_events: dict[UserId, list[QuoteEvent]] = {}
    for r in sorted(retweets, key=lambda r: (r.timestamp, r.post_id, r.retweeter)):
        pt = text.get(r.post_id)
        prof = profiles.setdefault(r.retweeter, UserQtProfile(r.retweeter))
        if r.timestamp in train:
            if r.is_quote:
                prof.qt_count_train += 1
                if pt:
                    prof.history.append(QuoteEvent(pt, r.quote_text or "", r.timestamp))
            else:
                prof.rt_count_train += 1
        elif r.timestamp in evaluation and r.is_quote:
            prof.qt_count_eval += 1
            if pt:
                eval_events.setdefault(r.retweeter, []).append(QuoteEvent(pt, r.quote_text or "", r.timestamp))
    return profiles, eval_events


def _oneline(s: str) -> str:
    return " ".join(s.split())


PROMPT_HEADER = (
    "You predict the commentary a specific social media user adds when they quote-share a post.\n"
    "Below are posts this user quoted, each followed by the commentary they added.\n"
)
PROMPT_FOOTER = "Reply with the commentary only, with no quotes or explanation."


def build_prompt(profile: UserQtProfile, pt: str, k: int = 10, seed: int = 0) -> str:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not profile.history:
        raise ValueError(f"user {profile.user!r} has no quote history to build a prompt from")
    hist = list(profile.history)
    if k < len(hist):
        picked = sorted(random.Random(seed).sample(range(len(hist)), k))
        hist = [hist[i] for i in picked]
    lines = [PROMPT_HEADER]
    for ev in hist:
        lines.append(f"Post: {_oneline(ev.parent_text)}")
        lines.append(f"Commentary: {_oneline(ev.added_commentary)}")
        lines.append("")
    lines.append(PROMPT_FOOTER)
    lines.append(f"Post: {_oneline(pt)}")
    lines.append("Commentary:")
    return "\n".join(lines)


_POST = re.compile(r"^Post: (.*)$", re.M)
_COMMENT = re.compile(r"^Commentary: (.*)$", re.M)


def prompt_target(prompt: str) -> str:
    posts = _POST.findall(prompt)
    return posts[-1] if posts else ""


# -- clients ------------------------------------------------------------------

@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str = "http://localhost:8000"
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.2
    max_in_flight: int = 4
    timeout: float = 30.0
    retries: int = 2
    api_key_env: str = API_KEY_ENV

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


class ChatCompletionClient:
    """OpenAI-compatible ``/v1/chat/completions`` client with bounded retries."""

    def __init__(self, cfg: LlmEndpointConfig, transport: httpx.BaseTransport | None = None):
        self.cfg = cfg
        headers = {}
        key = os.environ.get(cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(timeout=cfg.timeout, headers=headers, transport=transport)
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)
        self.url = cfg.base_url.rstrip("/") + "/v1/chat/completions"

    def complete(self, prompt: str, expected: str | None = None) -> str:
        body = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
        }
        last = None
        for attempt in range(self.cfg.retries + 1):
            try:
                with self._slots:
                    resp = self._http.post(self.url, json=body)
                resp.raise_for_status()
                content = resp.json()["choices"][0]["message"]["content"]
                if not isinstance(content, str):
                    raise LlmError("completion content is not a string")
                return content
            except (httpx.HTTPError, KeyError, IndexError, ValueError, LlmError) as exc:
                last = exc
                if attempt < self.cfg.retries:
                    time.sleep(min(0.2 * 2 ** attempt, 5.0))
        raise LlmError(f"chat completion failed after {self.cfg.retries + 1} attempts: {last}")


class StubClient:
    """Offline stand-in for an endpoint.

    ``echo`` returns ``expected`` when supplied, otherwise the most recent
    commentary from the prompt's examples; ``canned`` looks the target post up
    in ``fixtures``; ``fail`` always raises.
    """

    def __init__(self, mode: str = "echo", fixtures: Mapping[str, str] | None = None, latency: float = 0.0):
        if mode not in ("echo", "canned", "fail"):
            raise ValueError(f"unknown stub mode {mode!r}")
        self.mode = mode
        self.fixtures = {_oneline(k): v for k, v in (fixtures or {}).items()}
        self.latency = latency
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path, mode: str = "canned") -> "StubClient":
        fixtures = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    fixtures[obj["pt"]] = obj["ac"]
        return cls(mode, fixtures)

    def complete(self, prompt: str, expected: str | None = None) -> str:
        with self._lock:
            self.calls += 1
        if self.latency:
            time.sleep(self.latency)
        if self.mode == "fail":
            raise LlmError("stub endpoint configured to fail")
        if self.mode == "echo":
            if expected is not None:
                return expected
            comments = _COMMENT.findall(prompt)
            return comments[-1] if comments else ""
        target = prompt_target(prompt)
        if target not in self.fixtures:
            raise LlmError(f"no canned completion for {target[:40]!r}")
        return self.fixtures[target]


def make_client(kind: str, cfg: LlmEndpointConfig | None = None, fixtures_path=None):
    if kind == "http":
        return ChatCompletionClient(cfg or LlmEndpointConfig())
    if kind == "canned":
        return StubClient.from_file(fixtures_path)
    return StubClient(kind)


def predict_addition(client, prompt: str, expected: str | None = None) -> str | None:
    """Predicted commentary, or None (plain reshare fallback) when the endpoint fails."""
    try:
        return client.complete(prompt, expected).strip()
    except LlmError as exc:
        log.warning("mutation request failed, falling back to a plain reshare: %s", exc)
        return None


def predict_many(client, prompts: Sequence[str], expected: Sequence[str | None] | None = None,
                 max_in_flight: int = 4) -> list[str | None]:
    """Issue requests concurrently (at most ``max_in_flight``); results keep input order."""
    expected = list(expected) if expected is not None else [None] * len(prompts)
    with ThreadPoolExecutor(max_in_flight) as pool:
        futs = [pool.submit(predict_addition, client, p, e) for p, e in zip(prompts, expected)]
        return [f.result() for f in futs]


def compose_quote(ac: str, pt: str) -> str:
    if not pt:
        raise ValueError("parent text must be non-empty")
    return f"{ac}: {pt}" if ac else pt


@dataclass
class GateResult:
    mean_cos_pred: float
    mean_cos_baseline: float
    mean_cos_ac: float
    mutation_enabled: bool
    n_events: int


def evaluate_and_gate(profile: UserQtProfile, eval_events: Sequence[QuoteEvent], embedder, client,
                      reducer=None, k: int = 10, seed: int = 0, max_in_flight: int = 4) -> GateResult:
    """Compare (LLM-AC + PT) and bare PT against the true AC + PT; enable if the LLM wins."""
    if not eval_events:
        raise ValueError("need at least one evaluation event")
    prompts = [build_prompt(profile, ev.parent_text, k, seed + i) for i, ev in enumerate(eval_events)]
    preds = predict_many(client, prompts, [ev.added_commentary for ev in eval_events], max_in_flight)

    def vec(text):
        v = embedder.embed(text)
        return reduce(reducer, v) if reducer is not None else v

    pred_sims, base_sims, ac_sims = [], [], []
    for ev, llm_ac in zip(eval_events, preds):
        llm_ac = llm_ac or ""
        truth = vec(compose_quote(ev.added_commentary, ev.parent_text))
        pred_sims.append(cosine_similarity(vec(compose_quote(llm_ac, ev.parent_text)), truth))
        base_sims.append(cosine_similarity(vec(ev.parent_text), truth))
        ac_sims.append(cosine_similarity(embedder.embed(llm_ac), embedder.embed(ev.added_commentary)))
    mp, mb = float(np.mean(pred_sims)), float(np.mean(base_sims))
    profile.mutation_enabled = mp > mb
    return GateResult(mp, mb, float(np.mean(ac_sims)), profile.mutation_enabled, len(eval_events))


class MutationContext:
    """Everything a cascade needs to mutate text: profiles, a client, and a request pool."""

    def __init__(self, profiles: Mapping[UserId, UserQtProfile], client, k: int = 10,
                 seed: int = 0, max_in_flight: int = 4):
        self.profiles = profiles
        self.client = client
        self.k = k
        self.seed = seed
        self.pool = ThreadPoolExecutor(max_in_flight)

    def quote_probability(self, user: UserId) -> float:
        prof = self.profiles.get(user)
        if prof is None or not prof.mutation_enabled or not prof.history:
            return 0.0
        return prof.qp

    def request(self, user: UserId, parent_text: str, key: int) -> Future:
        prompt = build_prompt(self.profiles[user], parent_text, self.k, key)
        return self.pool.submit(predict_addition, self.client, prompt)

    def close(self) -> None:
        self.pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
