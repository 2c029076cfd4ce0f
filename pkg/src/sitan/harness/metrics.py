"""Per-trial metrics and summary statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats


@dataclass
class NodeMetrics:
    node: int
    role: str                      # correct | byzantine | crashed
    in_sink: bool
    proposed: bool
    decided: bool
    value: str                     # value digest, "-" if undecided
    latency_ms: float              # nan if undecided
    rounds: Optional[int]
    sent: dict[str, int] = field(default_factory=dict)   # per layer
    rejected_beb: int = 0
    rejected_consensus: int = 0
    accepted_result: bool = False


@dataclass
class TrialMetrics:
    trial: int
    seed: int
    n: int
    f: int
    nodes: list[NodeMetrics]
    verdicts: dict[str, bool]
    violations: list[tuple[str, str]]
    audit_stats: dict[str, int]
    sink_size: int                 # 0 when unavailable
    decided_in_budget: bool
    trace_text: str = ""
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.violations and not self.error

    def correct(self) -> list[NodeMetrics]:
        return [m for m in self.nodes if m.role == "correct"]

    def deciders(self) -> list[NodeMetrics]:
        return [m for m in self.correct() if m.decided]

    def rounds(self) -> Optional[int]:
        r = [m.rounds for m in self.deciders() if m.rounds is not None]
        return max(r) if r else None

    def sends(self, layer: Optional[str] = None) -> int:
        if layer is None:
            return sum(sum(m.sent.values()) for m in self.nodes)
        return sum(m.sent.get(layer, 0) for m in self.nodes)

    def summary_values(self) -> dict[str, float]:
        lat = [m.latency_ms for m in self.deciders()]
        parts = [m for m in self.correct() if m.proposed]
        rounds = self.rounds()
        return {
            "latency_ms_mean": float(np.mean(lat)) if lat else math.nan,
            "latency_ms_max": float(np.max(lat)) if lat else math.nan,
            "rounds": float(rounds) if rounds is not None else math.nan,
            "decided_fraction": (sum(m.decided for m in parts) / len(parts)) if parts else math.nan,
            "sent_total": float(self.sends()),
            "sent_consensus": float(self.sends("consensus")),
            "sent_membership": float(self.sends("membership")),
            "sent_dissemination": float(self.sends("dissemination")),
            "rejected": float(sum(m.rejected_beb + m.rejected_consensus for m in self.nodes)),
            "violations": float(len(self.violations)),
        }


@dataclass(frozen=True)
class Summary:
    metric: str
    count: int
    mean: float
    ci95: float                    # half width; nan with fewer than two samples
    min: float
    max: float


def t_interval(values: Sequence[float], confidence: float = 0.95) -> tuple[float, float]:
    """Mean and Student-t half width with ``len(values) - 1`` degrees of freedom."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    mean = float(x.mean())
    if x.size < 2:
        return mean, math.nan
    sem = float(x.std(ddof=1)) / math.sqrt(x.size)
    return mean, float(stats.t.ppf(0.5 + confidence / 2, x.size - 1)) * sem


def summarize(trials: Sequence[TrialMetrics]) -> list[Summary]:
    if not trials:
        return []
    keys = list(trials[0].summary_values())
    rows = []
    for key in keys:
        vals = [t.summary_values()[key] for t in trials]
        vals = [v for v in vals if not math.isnan(v)]
        if not vals:
            rows.append(Summary(key, 0, math.nan, math.nan, math.nan, math.nan))
            continue
        mean, half = t_interval(vals)
        rows.append(Summary(key, len(vals), mean, half, float(min(vals)), float(max(vals))))
    return rows


def loglog_exponent(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)
