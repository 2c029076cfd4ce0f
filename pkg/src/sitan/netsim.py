"""Deterministic discrete-event simulator of a shared wireless medium.

The radio is a unit disk: a transmission reaches every node whose Euclidean
distance to the sender is at most ``radio_range``.  Each delivered copy is
independently subject to loss, duplication, corruption and a random delay, so
reordering falls out of the per-copy delays.  Events are ordered by
``(time, target, insertion sequence)``; equal seeds and configuration give a
bit-identical event log.
"""
from __future__ import annotations

import heapq
import math
import random
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Iterable, Optional

import numpy as np

from .core import NodeId, digest

GLOBAL_TARGET = -1


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def distance(self, other: "Position") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


class TopologyKind(str, Enum):
    GRID = "grid"
    RANDOM_WAYPOINT = "random_waypoint"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class TopologyConfig:
    kind: TopologyKind = TopologyKind.GRID
    width: float = 6.0
    height: float = 6.0
    radio_range: float = 10.0
    speed: float = 1.0                      # m/s, random waypoint only
    mobility_step_ms: float = 100.0
    positions: tuple[tuple[float, float], ...] = ()   # explicit only

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", TopologyKind(self.kind))
        if self.radio_range <= 0:
            raise ValueError("radio_range must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("room dimensions must be positive")


@dataclass(frozen=True)
class LinkModel:
    loss_probability: float = 0.0
    delay_min: float = 1.0
    delay_max: float = 5.0
    delay_shape: str = "uniform"            # or "exponential" (mean (max-min)/2 above min)
    duplication_probability: float = 0.0
    corruption_probability: float = 0.0

    def __post_init__(self) -> None:
        for name in ("loss_probability", "duplication_probability", "corruption_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be within [0, 1], got {p}")
        if self.delay_min < 0 or self.delay_max < self.delay_min:
            raise ValueError("need 0 <= delay_min <= delay_max")
        if self.delay_shape not in ("uniform", "exponential"):
            raise ValueError(f"unknown delay shape {self.delay_shape!r}")

    def sample_delay(self, rng: random.Random) -> float:
        if self.delay_shape == "uniform":
            return rng.uniform(self.delay_min, self.delay_max)
        mean = max((self.delay_max - self.delay_min) / 2, 1e-9)
        return min(self.delay_min + rng.expovariate(1.0 / mean), self.delay_max * 10)


def grid_positions(n: int, width: float, height: float) -> list[Position]:
    """Row-major grid with cell-centred nodes; spacing derived from the room."""
    cols = max(1, math.ceil(math.sqrt(n)))
    rows = max(1, math.ceil(n / cols))
    sx, sy = width / cols, height / rows
    return [Position((i % cols + 0.5) * sx, (i // cols + 0.5) * sy) for i in range(n)]


class EventKind(str, Enum):
    DELIVER = "deliver"
    TIMER = "timer"
    MOBILITY = "mobility"
    CALL = "call"


@dataclass(frozen=True)
class SimEvent:
    time: float
    target: int
    kind: EventKind
    data: Any = None


class SimulationComplete(Exception):
    """Raised by :meth:`Simulator.step` when the event queue is empty."""


@dataclass
class _Timer:
    node: NodeId
    interval: float
    periodic: bool
    callback: Callable[[], None]
    cancelled: bool = False


class Simulator:
    def __init__(
        self,
        n: int,
        topology: TopologyConfig | None = None,
        link: LinkModel | None = None,
        seed: int = 0,
        record_events: bool = False,
    ) -> None:
        self.n = n
        self.topology = topology or TopologyConfig()
        self.link = link or LinkModel()
        self.seed = seed
        self.rng = random.Random(f"netsim/{seed}")
        self.now = 0.0
        self._queue: list[tuple] = []
        self._seq = 0
        self._timers: dict[int, _Timer] = {}
        self._next_timer = 0
        self._handlers: dict[NodeId, Callable[[Any], None]] = {}
        self._crashed: set[NodeId] = set()
        self.link_overrides: dict[tuple[NodeId, NodeId], LinkModel] = {}
        self.substitute: Optional[Callable] = None   # adversarial per-target delivery hook
        self.sent: Counter = Counter()
        self.delivered = 0
        self.events_processed = 0
        self.record_events = record_events
        self.event_log: list[tuple[float, int, str, str]] = []
        self._stopped = False

        self._place()
        self._waypoints: Optional[np.ndarray] = None
        if self.topology.kind is TopologyKind.RANDOM_WAYPOINT:
            self._waypoints = self._random_points(n)
            self.schedule(self.topology.mobility_step_ms, GLOBAL_TARGET, EventKind.MOBILITY,
                          self.topology.mobility_step_ms)

    # ------------------------------------------------------------------ topology

    def _random_points(self, k: int) -> np.ndarray:
        t = self.topology
        return np.array([[self.rng.uniform(0, t.width), self.rng.uniform(0, t.height)]
                         for _ in range(k)], dtype=float).reshape(k, 2)

    def _place(self) -> None:
        t = self.topology
        if t.kind is TopologyKind.GRID:
            pts = [(p.x, p.y) for p in grid_positions(self.n, t.width, t.height)]
            self.positions = np.array(pts, dtype=float).reshape(self.n, 2)
        elif t.kind is TopologyKind.RANDOM_WAYPOINT:
            self.positions = self._random_points(self.n)
        else:
            if len(t.positions) != self.n:
                raise ValueError(f"explicit topology lists {len(t.positions)} positions for n={self.n}")
            self.positions = np.array(t.positions, dtype=float).reshape(self.n, 2)
        self._recompute_neighbors()

    def _recompute_neighbors(self) -> None:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=-1))
        self.distances = dist
        adj = dist <= self.topology.radio_range + 1e-9
        np.fill_diagonal(adj, False)
        self.adjacency = adj
        self._neighbors = [tuple(int(j) for j in np.flatnonzero(adj[i])) for i in range(self.n)]

    def set_positions(self, points: Iterable[tuple[float, float]]) -> None:
        self.positions = np.array(list(points), dtype=float).reshape(self.n, 2)
        self._recompute_neighbors()

    def set_adjacency(self, edges: Iterable[tuple[NodeId, NodeId]]) -> None:
        """Replace the radio graph with an explicit undirected edge list.

        Positions are kept but no longer determine reachability, so arbitrary
        (non unit-disk) graphs can be studied.  Mobility would overwrite this.
        """
        adj = np.zeros((self.n, self.n), dtype=bool)
        for a, b in edges:
            if a != b:
                adj[a, b] = adj[b, a] = True
        self.adjacency = adj
        self._neighbors = [tuple(int(j) for j in np.flatnonzero(adj[i])) for i in range(self.n)]

    def position(self, node: NodeId) -> Position:
        x, y = self.positions[node]
        return Position(float(x), float(y))

    def neighbors(self, node: NodeId) -> tuple[NodeId, ...]:
        return self._neighbors[node]

    def in_range(self, a: NodeId, b: NodeId) -> bool:
        return bool(self.adjacency[a, b])

    def mobility_step(self, dt: float) -> np.ndarray:
        """Advance every node ``speed * dt`` toward its waypoint (no-op on a grid).

        On arrival a fresh waypoint is drawn uniformly in the room and any
        leftover distance is spent moving toward it.
        """
        if self._waypoints is None:
            return self.positions
        t = self.topology
        step = t.speed * dt / 1000.0
        for i in range(self.n):
            remaining = step
            while remaining > 0:
                dx, dy = self._waypoints[i] - self.positions[i]
                dist = math.hypot(dx, dy)
                if dist > remaining:
                    self.positions[i, 0] += dx * remaining / dist
                    self.positions[i, 1] += dy * remaining / dist
                    break
                self.positions[i] = self._waypoints[i]
                remaining -= dist
                self._waypoints[i] = (self.rng.uniform(0, t.width), self.rng.uniform(0, t.height))
        self._recompute_neighbors()
        return self.positions

    # ------------------------------------------------------------------ events

    def schedule(self, time: float, target: int, kind: EventKind, data: Any = None) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (time, target, self._seq, kind, data))

    def call_at(self, time: float, node: NodeId, fn: Callable[[], None]) -> None:
        self.schedule(time, node, EventKind.CALL, fn)

    def attach(self, node: NodeId, on_deliver: Callable[[Any], None]) -> None:
        self._handlers[node] = on_deliver

    def crash(self, node: NodeId) -> None:
        """Node stops sending, receiving and firing timers."""
        self._crashed.add(node)

    def is_crashed(self, node: NodeId) -> bool:
        return node in self._crashed

    def set_timer(self, node: NodeId, interval: float, periodic: bool,
                  callback: Callable[[], None]) -> int:
        if interval <= 0:
            raise ValueError("timer interval must be positive")
        self._next_timer += 1
        tid = self._next_timer
        self._timers[tid] = _Timer(node, interval, periodic, callback)
        self.schedule(self.now + interval, node, EventKind.TIMER, tid)
        return tid

    def cancel_timer(self, tid: int) -> None:
        t = self._timers.pop(tid, None)
        if t is not None:
            t.cancelled = True

    def pending(self) -> int:
        return len(self._queue)

    def stop(self) -> None:
        self._stopped = True

    def step(self) -> SimEvent:
        if not self._queue:
            raise SimulationComplete()
        time, target, _, kind, data = heapq.heappop(self._queue)
        self.now = time
        self.events_processed += 1
        if self.record_events:
            self._log(time, target, kind, data)
        if kind is EventKind.DELIVER:
            env = data
            if target not in self._crashed:
                handler = self._handlers.get(target)
                if handler is not None:
                    self.delivered += 1
                    handler(env)
        elif kind is EventKind.TIMER:
            timer = self._timers.get(data)
            if timer is not None and not timer.cancelled and target not in self._crashed:
                if timer.periodic:
                    self.schedule(time + timer.interval, target, EventKind.TIMER, data)
                else:
                    del self._timers[data]
                timer.callback()
        elif kind is EventKind.MOBILITY:
            self.mobility_step(data)
            self.schedule(time + data, GLOBAL_TARGET, EventKind.MOBILITY, data)
        else:
            if target not in self._crashed:
                data()
        return SimEvent(time, target, kind, data)

    def _log(self, time: float, target: int, kind: EventKind, data: Any) -> None:
        if kind is EventKind.DELIVER:
            d = digest(data.signed_bytes + data.signature)
        elif kind is EventKind.TIMER:
            d = str(data)
        elif kind is EventKind.MOBILITY:
            d = digest(self.positions.tobytes())
        else:
            d = getattr(data, "__qualname__", "call")
        self.event_log.append((time, target, kind.value, d))

    def run(self, until: float = math.inf, max_events: int | None = None) -> float:
        """Process events until the queue drains, ``until`` passes, or stop()."""
        self._stopped = False
        processed = 0
        while self._queue and not self._stopped:
            if self._queue[0][0] > until:
                self.now = until
                break
            self.step()
            processed += 1
            if max_events is not None and processed >= max_events:
                break
        return self.now

    def run_until(self, predicate: Callable[[], bool], timeout: float = math.inf) -> bool:
        deadline = self.now + timeout
        while not predicate():
            if not self._queue or self._queue[0][0] > deadline:
                return predicate()
            self.step()
        return True

    # ------------------------------------------------------------------ radio

    def link_for(self, src: NodeId, dst: NodeId) -> LinkModel:
        return self.link_overrides.get((src, dst), self.link)

    def radio_broadcast(self, src: NodeId, envelope: Any, layer: str = "beb") -> int:
        """Schedule one delivery per in-range node; returns the number scheduled."""
        if src in self._crashed:
            return 0
        self.sent[layer] += 1
        scheduled = 0
        rng = self.rng
        now = self.now
        overrides = self.link_overrides
        substitute = self.substitute
        for dst in self._neighbors[src]:
            link = overrides.get((src, dst), self.link) if overrides else self.link
            if link.loss_probability and rng.random() < link.loss_probability:
                continue
            copies = 1
            if link.duplication_probability and rng.random() < link.duplication_probability:
                copies = 2
            env = envelope
            if substitute is not None:
                env = substitute(src, dst, envelope)
                if env is None:
                    continue
            for _ in range(copies):
                out = env
                if link.corruption_probability and rng.random() < link.corruption_probability:
                    out = _corrupt(env)
                if link.delay_shape == "uniform":
                    delay = link.delay_min + (link.delay_max - link.delay_min) * rng.random()
                else:
                    delay = link.sample_delay(rng)
                self._seq += 1
                heapq.heappush(self._queue, (now + delay, dst, self._seq, EventKind.DELIVER, out))
                scheduled += 1
        return scheduled


def _corrupt(envelope: Any) -> Any:
    sig = bytearray(envelope.signature or b"\x00")
    sig[0] ^= 0xFF
    return replace(envelope, signature=bytes(sig))
