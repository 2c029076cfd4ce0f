"""Seeded trial execution for scenarios and sweeps."""
from __future__ import annotations

import logging
import math
import statistics
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional, Sequence

from ..adversary import AdversarySpec, install, pick_byzantine
from ..consensus.messages import value_digest
from ..core import ConfigurationError, NodeId
from ..membership import Membership, greedy_clique, mutual_graph
from ..netsim import Simulator
from ..node import Network, NodeConfig, SinkView
from .audit import audit_trace
from .config import Protocol, Proposals, ScenarioConfig, SinkMode, from_dict, to_dict, validate
from .metrics import NodeMetrics, Summary, TrialMetrics, loglog_exponent, summarize
from .trace import Tracer, format_trace

log = logging.getLogger(__name__)

LABEL = "c"
LAYERS = ("consensus", "membership", "dissemination", "rrb_ack", "app")


def proposal_for(protocol: Protocol, mode: Proposals, node: NodeId, byzantine: bool):
    """Divergent binary proposals follow id parity (odd ids propose 1)."""
    if protocol is Protocol.BINARY:
        if mode is Proposals.UNANIMOUS:
            return 0 if byzantine else 1
        return node % 2
    if mode is Proposals.UNANIMOUS:
        return b"byzantine" if byzantine else b"agreed"
    if protocol is Protocol.MULTIVALUED:
        return b"odd" if node % 2 else b"even"
    return f"proposal-{node}".encode()


def ground_truth_sink(sim: Simulator, f: int, cap: Optional[int]) -> Optional[frozenset]:
    """Sink computed from the true radio graph, as full discovery would find it."""
    nbrs = {i: set(sim.neighbors(i)) for i in range(sim.n)}
    component: dict[NodeId, frozenset] = {}
    for start in range(sim.n):
        if start in component:
            continue
        seen, todo = {start}, deque([start])
        while todo:
            u = todo.popleft()
            for v in nbrs[u] - seen:
                seen.add(v)
                todo.append(v)
        comp = frozenset(seen)
        for u in comp:
            component[u] = comp
    known = {i: component[i] for i in range(sim.n)}
    return greedy_clique(mutual_graph(nbrs, known, f), 3 * f + 1, cap)


def _propose(node, protocol: Protocol, label: str, value):
    mgr = node.consensus
    if protocol is Protocol.BINARY:
        return mgr.bin_propose(label, value)
    if protocol is Protocol.MULTIVALUED:
        return mgr.mv_propose(label, value)
    return mgr.vec_propose(label, value)


def _node_config(cfg: ScenarioConfig) -> NodeConfig:
    return NodeConfig(heartbeat_ms=cfg.heartbeat_ms, consensus_transport=cfg.transport,
                      all_nodes=cfg.sink_mode is SinkMode.ALL_NODES, sink_cap=cfg.sink_cap)


def run_trial(cfg: ScenarioConfig, index: int, keep_trace: bool = False) -> TrialMetrics:
    seed = cfg.seed + index
    n, f = cfg.n, cfg.faults
    tracer = Tracer()
    try:
        net = Network(n, f, cfg.topology, cfg.link, seed, _node_config(cfg), tracer)
    except ConfigurationError as exc:
        return TrialMetrics(index, seed, n, f, [], {}, [], {}, 0, False, error=str(exc))
    sim = net.sim
    full = cfg.protocol is Protocol.FULL_STACK_BOOTSTRAP
    protocol = Protocol.VECTOR if full else cfg.protocol
    all_nodes = cfg.sink_mode is SinkMode.ALL_NODES
    adv = cfg.adversary
    crashed = tuple(sorted({c.node for c in cfg.crashes}))
    adjacency = [sorted(sim.neighbors(i)) for i in range(n)]

    def choose_byzantine(pool: Iterable[NodeId]) -> tuple[NodeId, ...]:
        if adv is None:
            return ()
        if adv.nodes is not None:
            return tuple(sorted(adv.nodes))
        count = f if adv.count is None else adv.count
        return pick_byzantine(set(pool) - set(crashed), count, seed)

    def install_adversary(byz: tuple[NodeId, ...]) -> None:
        if adv is not None:
            install(net, AdversarySpec(byz, adv.behavior, adv.network, adv.forge_probability))

    for c in cfg.crashes:
        sim.call_at(c.at, c.node, lambda node=c.node: sim.crash(node))

    if full:
        byz = choose_byzantine(range(n))
        install_adversary(byz)
        for node in net:
            Membership(node).start()
        correct = [i for i in range(n) if i not in byz and i not in crashed]

        def sinks_ready() -> bool:
            # every scheduled crash must have happened and been noticed
            if not all(sim.is_crashed(i) for i in crashed):
                return False
            views = {net[i].sink for i in correct}
            return (len(views) == 1 and None not in views
                    and not (next(iter(views)).members & set(crashed)))

        ready = net.run_until(sinks_ready, cfg.time_budget)
        sink = net[correct[0]].sink.members if ready and correct else None
        if sink is not None:
            # Byzantine members may not have computed a view; the adversary knows it anyway
            for i in byz:
                if net[i].sink is None:
                    net[i].sink = net[correct[0]].sink
    else:
        sink = ground_truth_sink(sim, f, cfg.sink_cap)
        byz = choose_byzantine(range(n) if all_nodes or sink is None else sink)
        install_adversary(byz)
        view = SinkView(sink) if sink is not None else None
        for node in net:
            node.set_sink(view)
        correct = [i for i in range(n) if i not in byz and i not in crashed]

    tracer.meta.update({
        "n": n, "f": f, "seed": seed, "trial": index, "scenario": cfg.name,
        "protocol": protocol.value, "proposals": cfg.proposals.value,
        "byzantine": list(byz), "crashed": list(crashed), "all_nodes": all_nodes,
        "behavior": adv.behavior.value if adv else None, "adjacency": adjacency,
        "mobile": cfg.topology.kind.value == "random_waypoint",
    })

    participants = sorted(range(n)) if all_nodes else (sorted(sink) if sink else [])
    handles = {}
    start = sim.now
    pending = set()
    for i in participants:
        if sim.is_crashed(i):
            continue
        value = proposal_for(protocol, cfg.proposals, i, i in byz)
        h = _propose(net[i], protocol, LABEL, value)
        handles[i] = h
        if i in correct:
            pending.add(i)
            h.add_done_callback(lambda h, i=i: pending.discard(i))
    iid = next(iter(handles.values())).instance if handles else None
    outsiders = [i for i in correct if i not in handles]

    def finished() -> bool:
        if pending:
            return False
        if cfg.await_dissemination and iid is not None:
            return all(iid in net[i].results for i in outsiders if not sim.is_crashed(i))
        return True

    if handles:
        net.run_until(finished, cfg.time_budget)
    in_budget = bool(handles) and not pending

    report = audit_trace(tracer.trace)
    nodes = []
    for node in net:
        i = node.id
        h = handles.get(i)
        decided = h is not None and h.done
        role = "byzantine" if i in byz else ("crashed" if i in crashed else "correct")
        nodes.append(NodeMetrics(
            node=i, role=role, in_sink=bool(sink) and i in sink, proposed=h is not None,
            decided=decided,
            value=value_digest(h.result) if decided else "-",
            latency_ms=(h.decided_at - start) if decided else math.nan,
            rounds=h.rounds if decided else None,
            sent={layer: node.metrics.get(f"sent_{layer}", 0) for layer in LAYERS},
            rejected_beb=node.metrics.get("beb_rejected", 0),
            rejected_consensus=node.metrics.get("consensus_rejected", 0),
            accepted_result=iid is not None and h is None and iid in node.results,
        ))
    return TrialMetrics(
        trial=index, seed=seed, n=n, f=f, nodes=nodes, verdicts=report.verdicts(),
        violations=list(report.violations), audit_stats=dict(report.stats),
        sink_size=len(sink) if sink else 0, decided_in_budget=in_budget,
        trace_text=format_trace(tracer.trace) if keep_trace else "",
    )


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    trials: list[TrialMetrics]
    summary: list[Summary]

    @property
    def ok(self) -> bool:
        return all(t.ok for t in self.trials)

    def violations(self) -> list[tuple[int, str, str]]:
        return [(t.trial, p, d) for t in self.trials for p, d in t.violations]


def _trial_job(args) -> TrialMetrics:
    cfg_dict, index, keep = args
    return run_trial(from_dict(cfg_dict), index, keep)


def run_scenario(cfg: ScenarioConfig, keep_traces: bool = False, workers: int = 1,
                 progress: Optional[Callable[[TrialMetrics], None]] = None) -> ScenarioResult:
    """Run trials with seeds ``seed .. seed+trials-1``; results ordered by trial index."""
    if workers > 1:
        jobs = [(to_dict(cfg), i, keep_traces) for i in range(cfg.trials)]
        with ProcessPoolExecutor(workers) as pool:
            trials = list(pool.map(_trial_job, jobs))
    else:
        trials = []
        for i in range(cfg.trials):
            t = run_trial(cfg, i, keep_traces)
            trials.append(t)
            if progress is not None:
                progress(t)
    return ScenarioResult(cfg, trials, summarize(trials))


@dataclass(frozen=True)
class SweepRow:
    n: int
    trials: int
    median_rounds: float
    mean_sent_consensus: float
    mean_sent_total: float
    decided_fraction: float
    mean_latency_ms: float
    violations: int


@dataclass
class SweepReport:
    rows: list[SweepRow]
    results: list[ScenarioResult]

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.rows]

    @property
    def send_ratio(self) -> float:
        """mean consensus sends at the largest n over those at the smallest n"""
        if len(self.rows) < 2 or self.rows[0].mean_sent_consensus == 0:
            return math.nan
        return self.rows[-1].mean_sent_consensus / self.rows[0].mean_sent_consensus

    @property
    def send_exponent(self) -> float:
        if len(self.rows) < 2 or min(self.column("mean_sent_consensus")) <= 0:
            return math.nan
        return loglog_exponent(self.column("n"), self.column("mean_sent_consensus"))

    @property
    def rounds_spread(self) -> float:
        vals = [r for r in self.column("median_rounds") if not math.isnan(r)]
        return max(vals) - min(vals) if vals else math.nan


def _median(values: Sequence[float]) -> float:
    return float(statistics.median(values)) if values else math.nan


def sweep(configs: Sequence[ScenarioConfig], workers: int = 1) -> SweepReport:
    rows, results = [], []
    for cfg in sorted(configs, key=lambda c: c.n):
        res = run_scenario(cfg, workers=workers)
        results.append(res)
        ts = res.trials
        rounds = [t.rounds() for t in ts if t.rounds() is not None]
        lat = [v for t in ts for v in [t.summary_values()["latency_ms_mean"]] if not math.isnan(v)]
        rows.append(SweepRow(
            n=cfg.n, trials=len(ts), median_rounds=_median(rounds),
            mean_sent_consensus=statistics.fmean(t.sends("consensus") for t in ts),
            mean_sent_total=statistics.fmean(t.sends() for t in ts),
            decided_fraction=sum(t.decided_in_budget for t in ts) / len(ts),
            mean_latency_ms=statistics.fmean(lat) if lat else math.nan,
            violations=sum(len(t.violations) for t in ts),
        ))
    return SweepReport(rows, results)


def sweep_over_n(base: ScenarioConfig, ns: Iterable[int]) -> list[ScenarioConfig]:
    """Copies of ``base`` for each n, with f re-derived unless fixed."""
    return [validate(replace(base, n=n, name=f"{base.name}-n{n}")) for n in ns]
