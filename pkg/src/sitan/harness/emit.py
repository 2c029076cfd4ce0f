"""Write run results as tab-separated tables.

``detail.tsv`` has one row per trial per node, columns in DETAIL_COLUMNS order.
``summary.tsv`` has one row per metric: count, mean, 95% CI half width, min, max.
``violations.tsv`` lists every audit finding (header only when clean).
Per-trial traces go to ``traces/trial-NNNN.trace`` when they were kept.
Floats use six decimals and missing values are written as ``nan`` so reruns
produce byte-identical files.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

from .config import dump_scenario
from .metrics import Summary, TrialMetrics
from .runner import LAYERS, ScenarioResult, SweepReport

DETAIL_COLUMNS = (
    "trial", "seed", "node", "role", "in_sink", "proposed", "decided", "value", "latency_ms",
    "rounds", *(f"sent_{layer}" for layer in LAYERS), "sent_total", "rejected_beb",
    "rejected_consensus", "accepted_result", "agreement", "validity", "structure",
    "justification", "sink",
)
SUMMARY_COLUMNS = ("metric", "count", "mean", "ci95", "min", "max")
SWEEP_COLUMNS = ("n", "trials", "median_rounds", "mean_sent_consensus", "mean_sent_total",
                 "decided_fraction", "mean_latency_ms", "violations")


class EmitError(OSError):
    pass


def fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6f}"
    return str(value)


def _table(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    lines = ["\t".join(columns)]
    lines.extend("\t".join(fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def detail_rows(trials: Sequence[TrialMetrics]) -> list[list]:
    rows = []
    for t in trials:
        v = t.verdicts
        for m in t.nodes:
            sent = [m.sent.get(layer, 0) for layer in LAYERS]
            rows.append([
                t.trial, t.seed, m.node, m.role, m.in_sink, m.proposed, m.decided, m.value,
                m.latency_ms, m.rounds, *sent, sum(sent), m.rejected_beb, m.rejected_consensus,
                m.accepted_result, v.get("agreement"), v.get("validity"), v.get("structure"),
                v.get("justification"), v.get("sink"),
            ])
    return rows


def summary_rows(summary: Sequence[Summary]) -> list[list]:
    return [[s.metric, s.count, s.mean, s.ci95, s.min, s.max] for s in summary]


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise EmitError(f"cannot write {path}: {exc.strerror or exc}") from None


def emit(result: ScenarioResult, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    files = {
        "scenario.yaml": dump_scenario(result.config),
        "detail.tsv": _table(DETAIL_COLUMNS, detail_rows(result.trials)),
        "summary.tsv": _table(SUMMARY_COLUMNS, summary_rows(result.summary)),
        "violations.tsv": _table(("trial", "property", "detail"), result.violations()),
    }
    for name, text in files.items():
        _write(out_dir / name, text)
        written.append(out_dir / name)
    for t in result.trials:
        if t.trace_text:
            path = out_dir / "traces" / f"trial-{t.trial:04d}.trace"
            _write(path, t.trace_text)
            written.append(path)
    return written


def emit_sweep(report: SweepReport, out_dir: Path) -> Path:
    rows = [[getattr(r, c) for c in SWEEP_COLUMNS] for r in report.rows]
    text = _table(SWEEP_COLUMNS, rows)
    text += f"# send_ratio\t{fmt(report.send_ratio)}\n"
    text += f"# send_exponent\t{fmt(report.send_exponent)}\n"
    text += f"# rounds_spread\t{fmt(report.rounds_spread)}\n"
    path = Path(out_dir) / "sweep.tsv"
    _write(path, text)
    return path
