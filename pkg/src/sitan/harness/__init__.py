"""Experiment harness: scenarios, seeded runs, trace audit and reporting."""
from .audit import AuditReport, audit_trace, mv_violation
from .config import (AdversaryConfig, Crash, Protocol, Proposals, ScenarioConfig, SinkMode,
                     from_dict, load_scenario, to_dict)
from .metrics import NodeMetrics, Summary, TrialMetrics, summarize, t_interval
from .runner import (ScenarioResult, SweepReport, ground_truth_sink, run_scenario, run_trial,
                     sweep, sweep_over_n)
from .trace import Trace, Tracer, format_trace, parse_trace, read_trace, write_trace

__all__ = [
    "AdversaryConfig", "AuditReport", "Crash", "NodeMetrics", "Protocol", "Proposals",
    "ScenarioConfig", "ScenarioResult", "SinkMode", "Summary", "SweepReport", "Trace", "Tracer",
    "TrialMetrics", "audit_trace", "format_trace", "from_dict", "ground_truth_sink",
    "load_scenario", "mv_violation", "parse_trace", "read_trace", "run_scenario", "run_trial",
    "summarize", "sweep", "sweep_over_n", "t_interval", "to_dict", "write_trace",
]
