from __future__ import annotations

import numpy as np
import pytest

from cascadeclone.netgraph import Network, Post
from cascadeclone.sei import CascadeGraph


def make_net(edges, users=None) -> Network:
    users = users or sorted({u for e in edges for u in e})
    return Network(tuple(users), {e: 1 for e in edges})


def edge_array(graph: CascadeGraph, probs: dict) -> np.ndarray:
    """Per-edge probabilities in the graph's CSR order."""
    return np.array([probs[(graph.users[s], graph.users[d])] for s, d in zip(graph.src, graph.indices)])


class TableScorer:
    """Fixed probability per victim, ignoring text and originator."""

    def __init__(self, probs: dict, default: float = 0.0):
        self.probs = probs
        self.default = default

    def probabilities(self, victims, originator, text):
        return np.array([self.probs.get(v, self.default) for v in victims], dtype=np.float64)


@pytest.fixture
def post():
    return Post("p0", "A", 0, "a seed post about things")


@pytest.fixture
def random_graph():
    rng = np.random.default_rng(7)
    n = 300
    src = rng.integers(0, n, 3000)
    dst = rng.integers(0, n, 3000)
    users = [f"v{i:03d}" for i in range(n)]
    edges = {(users[a], users[b]): 1 for a, b in zip(src, dst) if a != b}
    net = Network(tuple(users), edges)
    g = CascadeGraph(net)
    return g, rng.uniform(0, 0.6, g.m)


PIPELINE = ("generate-synthetic", "ingest", "build-network", "detect-communities", "extract-features",
            "train-infection", "calibrate", "simulate", "quarantine", "inoculate", "topic-sweep",
            "virality-eval", "mutation-eval")


def small_run_config(**over) -> dict:
    cfg = {
        "seed": 3,
        "output_dir": "run",
        "data": {"posts": "run/synthetic/posts.jsonl", "retweets": "run/synthetic/retweets.jsonl"},
        "synthetic": {"block_sizes": [80, 80], "p_in": 0.1, "p_out": 0.005, "quoter_fraction": 0.3,
                      "quote_rate": 0.9, "posts_per_user": 5.0},
        "embeddings": {"dim": 64},
        "model": {"rounds": 15, "user_dim": 8, "tweet_dim": 16},
        "simulation": {"trials": 40},
        "scenarios": {"block_counts": [0, 2, 5], "fractions": [0.0, 0.5, 1.0], "virality_posts": 10},
    }
    cfg.update(over)
    return cfg


def run_pipeline(workdir, cfg: dict, commands=PIPELINE) -> dict:
    """Run CLI stages in ``workdir`` and return the manifest."""
    import json
    from pathlib import Path

    from cascadeclone.cli import main

    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    path = workdir / "cfg.json"
    path.write_text(json.dumps(cfg))
    for c in commands:
        code = main([c, "--config", str(path)])
        assert code == 0, f"{c} exited {code}"
    return json.loads((workdir / cfg["output_dir"] / "manifest.json").read_text())


ACCEPTANCE_LINES: list[str] = []


class criterion:
    """Context manager recording one acceptance line; failures inside the block mark it FAIL."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.details)
        if exc_type is not None:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        ACCEPTANCE_LINES.append(f"criterion {self.number} [{status}] {self.title} ({detail})")
        return False


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
