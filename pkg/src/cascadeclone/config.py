"""JSON run configuration: defaults, strict key checking, and cross-field validation."""
from __future__ import annotations

import dataclasses
import difflib
import hashlib
import json
import typing
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import datagen
from .netgraph import Period
from .sei import Delay, SimConfig


class ConfigError(ValueError):
    pass


def _iso(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%d")


def _default_periods() -> dict[str, list]:
    return {name: [_iso(p.start), _iso(p.end)] for name, p in zip(("I", "II", "III"), datagen.default_periods())}


@dataclass
class DataConfig:
    posts: str | None = None
    retweets: str | None = None


@dataclass
class NetworkConfig:
    top_k: int | None = None


@dataclass
class CommunityConfig:
    resolution: float = 1.0
    top_n: int = 5
    sample_size: int | None = None


@dataclass
class EmbeddingConfig:
    provider: str = "hash"  # hash | file | http
    dim: int = 384
    path: str | None = None
    url: str | None = None


@dataclass
class ModelConfig:
    user_dim: int = 24
    tweet_dim: int = 96
    train_fraction: float = 0.2
    rounds: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    lam: float = 1.0
    subsample: float = 1.0
    tune_budget: int = 0
    negative_keep_rate: float | None = None
    calibration_bins: int = 100
    calibration_degree: int = 11
    write_features_csv: bool = True


@dataclass
class SimulationConfig:
    alpha: float = 3.0
    trials: int = 1000
    delay_kind: str = "exponential"
    delay_value: float = 1.0
    max_layer: int | None = None
    mutation_enabled: bool = True
    source_post: str | None = None


@dataclass
class MutationConfig:
    client: str = "echo"  # echo | fail | canned | http
    base_url: str = "http://localhost:8000"
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.2
    max_in_flight: int = 4
    timeout: float = 30.0
    retries: int = 2
    k: int = 10
    fixtures: str | None = None


@dataclass
class ScenarioConfig:
    block_counts: list = field(default_factory=lambda: [0, 10, 20, 50, 100, 200])
    fractions: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    reduction: float = 0.20
    jitter: float = 0.02
    community: int | None = None
    topics: str | None = None
    virality_mode: str = "all_users"
    virality_posts: int = 50


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "out"
    data: DataConfig = field(default_factory=DataConfig)
    periods: dict = field(default_factory=_default_periods)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    communities: CommunityConfig = field(default_factory=CommunityConfig)
    embeddings: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    mutation: MutationConfig = field(default_factory=MutationConfig)
    scenarios: ScenarioConfig = field(default_factory=ScenarioConfig)
    synthetic: dict = field(default_factory=dict)
    base_dir: Path = field(default=Path("."), repr=False, compare=False, metadata={"internal": True})

    def period(self, name: str) -> Period:
        a, b = self.periods[name]
        return Period(_timestamp(a), _timestamp(b))

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def sim_config(self, **overrides) -> SimConfig:
        s = self.simulation
        kw = dict(alpha=s.alpha, delay=Delay(s.delay_kind, s.delay_value), trials=s.trials,
                  base_seed=self.seed, mutation_enabled=s.mutation_enabled, max_layer=s.max_layer)
        kw.update(overrides)
        return SimConfig(**kw)

    def synth_spec(self) -> datagen.SynthSpec:
        obj = dict(self.synthetic)
        obj.setdefault("seed", self.seed)
        obj.setdefault("periods", [[self.period(n).start, self.period(n).end] for n in ("I", "II", "III")])
        return datagen.SynthSpec.from_json(obj)

    def to_json(self) -> dict:
        return _dump(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()


def _dump(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _dump(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if not f.metadata.get("internal")}
    if isinstance(obj, dict):
        return {k: _dump(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_dump(v) for v in obj]
    return obj


def _timestamp(v) -> int:
    if isinstance(v, bool):
        raise ConfigError(f"bad timestamp {v!r}")
    if isinstance(v, int):
        return v
    try:
        d = datetime.fromisoformat(str(v))
    except ValueError:
        raise ConfigError(f"bad date {v!r}; use YYYY-MM-DD or integer UTC seconds") from None
    if d.tzinfo is None:
        d = d.replace(tzinfo=timezone.utc)
    return int(d.timestamp())


def _check_type(value, tp, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None and type(None) in args:
            return value
        inner = [a for a in args if a is not type(None)]
        return _check_type(value, inner[0], path)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if tp is list and not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list, got {value!r}")
    if tp is dict and not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object, got {value!r}")
    return value


def _build(cls, obj, path: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls) if not f.metadata.get("internal")]
    kwargs = {}
    for key, value in obj.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            close = difflib.get_close_matches(key, names, n=1)
            hint = f"; did you mean {close[0]!r}?" if close else ""
            raise ConfigError(f"unknown key {where!r}{hint}")
        tp = hints[key]
        if dataclasses.is_dataclass(tp):
            kwargs[key] = _build(tp, value, where)
        else:
            kwargs[key] = _check_type(value, tp, where)
    return cls(**kwargs)


def _validate(cfg: RunConfig) -> None:
    names = ("I", "II", "III")
    if set(cfg.periods) != set(names):
        raise ConfigError(f"periods: need exactly {list(names)}, got {sorted(cfg.periods)}")
    ps = {}
    for n in names:
        v = cfg.periods[n]
        if not isinstance(v, list) or len(v) != 2:
            raise ConfigError(f"periods.{n}: expected [start, end]")
        p = cfg.period(n)
        if p.end <= p.start:
            raise ConfigError(f"periods.{n}: end must be after start")
        ps[n] = p
    for a, b in zip(names, names[1:]):
        if ps[a].end > ps[b].start:
            raise ConfigError(f"periods.{a} and periods.{b} overlap or are out of order")
    s = cfg.simulation
    if s.trials < 1:
        raise ConfigError("simulation.trials must be >= 1")
    if s.alpha < 0:
        raise ConfigError("simulation.alpha must be >= 0")
    if s.delay_kind not in ("exponential", "constant"):
        raise ConfigError(f"simulation.delay_kind: unknown distribution {s.delay_kind!r}")
    if cfg.embeddings.provider not in ("hash", "file", "http"):
        raise ConfigError(f"embeddings.provider: unknown provider {cfg.embeddings.provider!r}")
    if cfg.mutation.client not in ("echo", "fail", "canned", "http"):
        raise ConfigError(f"mutation.client: unknown client {cfg.mutation.client!r}")
    if cfg.scenarios.virality_mode not in ("all_users", "fixed_author"):
        raise ConfigError(f"scenarios.virality_mode: unknown mode {cfg.scenarios.virality_mode!r}")
    if not 0 < cfg.model.train_fraction < 1:
        raise ConfigError("model.train_fraction must lie in (0, 1)")
    if any(not 0 <= f <= 1 for f in cfg.scenarios.fractions):
        raise ConfigError("scenarios.fractions must lie in [0, 1]")
    if cfg.scenarios.block_counts != sorted(cfg.scenarios.block_counts):
        raise ConfigError("scenarios.block_counts must be ascending")
    fields_ = set(datagen.SynthSpec.__dataclass_fields__)
    for key in cfg.synthetic:
        if key not in fields_:
            close = difflib.get_close_matches(key, sorted(fields_), n=1)
            hint = f"; did you mean {close[0]!r}?" if close else ""
            raise ConfigError(f"unknown key 'synthetic.{key}'{hint}")


def parse_config(obj: dict, base_dir: Path | str = ".") -> RunConfig:
    cfg = _build(RunConfig, obj, "")
    cfg.base_dir = Path(base_dir)
    _validate(cfg)
    return cfg


def validate_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return parse_config(obj, path.parent)
