"""Scenario files: YAML mappings validated into a frozen :class:`ScenarioConfig`.

Schema (every key optional; defaults shown)::

    name: scenario
    n: 4
    f: null                 # default floor((n-1)/3)
    protocol: binary        # binary | multivalued | vector | full_stack_bootstrap
    proposals: divergent    # unanimous | divergent
    sink_mode: sink_only    # sink_only | all_nodes
    sink_cap: null
    trials: 10
    seed: 0
    time_budget: 10000      # simulated ms from the first proposal
    transport: beb          # consensus transport: beb | rrb
    heartbeat_ms: 100
    expect_failure: false   # allow n < 3f+1 (the run then reports the error)
    await_dissemination: false
    crashes: []             # list of {node: int, at: ms}
    topology: {kind: grid, width: 6, height: 6, radio_range: 10, positions: []}
    link: {loss_probability: 0, delay_min: 1, delay_max: 5, delay_shape: uniform,
           duplication_probability: 0, corruption_probability: 0}
    adversary:              # or null
      behavior: random_values
      count: null           # default f
      nodes: null           # explicit Byzantine ids
      forge_probability: 0.2
      network: {loss_probability: .., duplication_probability: .., isolated: [..], reconnect_at: ..}
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from ..adversary import BehaviorKind, NetworkFaults
from ..core import ConfigurationError, max_faults
from ..netsim import LinkModel, TopologyConfig


class Protocol(str, Enum):
    BINARY = "binary"
    MULTIVALUED = "multivalued"
    VECTOR = "vector"
    FULL_STACK_BOOTSTRAP = "full_stack_bootstrap"


class Proposals(str, Enum):
    UNANIMOUS = "unanimous"
    DIVERGENT = "divergent"


class SinkMode(str, Enum):
    SINK_ONLY = "sink_only"
    ALL_NODES = "all_nodes"


_ALIASES = {
    "bin": "binary", "mv": "multivalued", "vec": "vector", "full": "full_stack_bootstrap",
    "fullstackbootstrap": "full_stack_bootstrap", "sinkonly": "sink_only",
    "allnodes": "all_nodes", "randomvalues": "random_values", "wrongphase": "wrong_phase",
    "dropforwarding": "drop_forwarding",
}


def _enum(cls, value):
    if isinstance(value, cls):
        return value
    key = str(value).strip().lower().replace("-", "_")
    key = _ALIASES.get(key.replace("_", ""), key)
    try:
        return cls(key)
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ConfigurationError(f"unknown {cls.__name__} {value!r} (choose from {choices})") from None


@dataclass(frozen=True)
class Crash:
    node: int
    at: float


@dataclass(frozen=True)
class AdversaryConfig:
    behavior: BehaviorKind = BehaviorKind.RANDOM_VALUES
    count: Optional[int] = None
    nodes: Optional[tuple[int, ...]] = None
    forge_probability: float = 0.2
    network: Optional[NetworkFaults] = None


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    n: int = 4
    f: Optional[int] = None
    protocol: Protocol = Protocol.BINARY
    proposals: Proposals = Proposals.DIVERGENT
    sink_mode: SinkMode = SinkMode.SINK_ONLY
    sink_cap: Optional[int] = None
    trials: int = 10
    seed: int = 0
    time_budget: float = 10_000.0
    transport: str = "beb"
    heartbeat_ms: float = 100.0
    expect_failure: bool = False
    await_dissemination: bool = False
    crashes: tuple[Crash, ...] = ()
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    link: LinkModel = field(default_factory=LinkModel)
    adversary: Optional[AdversaryConfig] = None

    @property
    def faults(self) -> int:
        return max_faults(self.n) if self.f is None else self.f

    def with_overrides(self, **changes) -> "ScenarioConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return from_dict({**to_dict(self), **changes})


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    if cfg.n < 1:
        raise ConfigurationError("n must be at least 1")
    if cfg.trials < 1:
        raise ConfigurationError("trials must be at least 1")
    if cfg.faults < 0:
        raise ConfigurationError("f must be non-negative")
    if cfg.n < 3 * cfg.faults + 1 and not cfg.expect_failure:
        raise ConfigurationError(f"n={cfg.n} cannot tolerate f={cfg.faults} (need n >= 3f+1)")
    if cfg.time_budget <= 0:
        raise ConfigurationError("time_budget must be positive")
    if cfg.transport not in ("beb", "rrb"):
        raise ConfigurationError(f"unknown transport {cfg.transport!r}")
    if cfg.sink_cap is not None and cfg.sink_cap < 3 * cfg.faults + 1:
        raise ConfigurationError(f"sink_cap {cfg.sink_cap} is below 3f+1 = {3 * cfg.faults + 1}")
    for c in cfg.crashes:
        if not 0 <= c.node < cfg.n:
            raise ConfigurationError(f"crash node {c.node} outside 0..{cfg.n - 1}")
    adv = cfg.adversary
    if adv is not None:
        if adv.nodes is not None:
            if any(not 0 <= b < cfg.n for b in adv.nodes):
                raise ConfigurationError("adversary node id out of range")
            if len(set(adv.nodes)) > cfg.faults:
                raise ConfigurationError(f"{len(set(adv.nodes))} Byzantine nodes exceed f={cfg.faults}")
        if adv.count is not None and not 0 <= adv.count <= cfg.faults:
            raise ConfigurationError(f"adversary count must be within 0..f={cfg.faults}")
    return cfg


def _build(cls, data: Mapping[str, Any], where: str):
    if not isinstance(data, Mapping):
        raise ConfigurationError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


def from_dict(data: Mapping[str, Any]) -> ScenarioConfig:
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"unknown scenario keys {unknown}")
    if "topology" in data and not isinstance(data["topology"], TopologyConfig):
        topo = dict(data["topology"] or {})
        if "positions" in topo:
            topo["positions"] = tuple(tuple(map(float, p)) for p in topo["positions"])
        data["topology"] = _build(TopologyConfig, topo, "topology")
    if "link" in data and not isinstance(data["link"], LinkModel):
        data["link"] = _build(LinkModel, data["link"] or {}, "link")
    adv = data.get("adversary")
    if adv is not None and not isinstance(adv, AdversaryConfig):
        adv = dict(adv)
        adv["behavior"] = _enum(BehaviorKind, adv.get("behavior", "random_values"))
        if adv.get("nodes") is not None:
            adv["nodes"] = tuple(int(b) for b in adv["nodes"])
        net = adv.get("network")
        if net is not None and not isinstance(net, NetworkFaults):
            net = dict(net)
            if "isolated" in net:
                net["isolated"] = tuple(int(b) for b in net["isolated"])
            adv["network"] = _build(NetworkFaults, net, "adversary.network")
        data["adversary"] = _build(AdversaryConfig, adv, "adversary")
    crashes = data.get("crashes") or ()
    data["crashes"] = tuple(c if isinstance(c, Crash) else _build(Crash, c, "crashes")
                            for c in crashes)
    for key, cls in (("protocol", Protocol), ("proposals", Proposals), ("sink_mode", SinkMode)):
        if key in data:
            data[key] = _enum(cls, data[key])
    for key in ("n", "trials", "seed"):
        if key in data:
            data[key] = _int(data[key], key)
    for key in ("f", "sink_cap"):
        if data.get(key) is not None:
            data[key] = _int(data[key], key)
    if "time_budget" in data:
        data["time_budget"] = float(data["time_budget"])
    return validate(ScenarioConfig(**data))


def _int(value, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise ConfigurationError(f"{key} must be an integer")
    try:
        return int(value)
    except ValueError:
        raise ConfigurationError(f"{key} must be an integer") from None


def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


def to_dict(cfg: ScenarioConfig) -> dict:
    return _plain(cfg)


def load_scenario(path: Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read scenario {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return from_dict(data)


def dump_scenario(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)
