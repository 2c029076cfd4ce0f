"""Run traces: one tab-separated line per event, plus logged messages.

File layout (stable; columns never reordered)::

    # sitan-trace 1
    # meta <json object>
    time_ms<TAB>node<TAB>kind<TAB>digest<TAB>data(json)
    ...
    MSG<TAB>ident<TAB>hex(wire encoding)

``time_ms`` has six decimals, ``digest`` repeats the record's message or value
digest (``-`` when none) and ``data`` is a key-sorted compact JSON object.
MSG lines hold every MV message referenced by an MV_* or ADV_INJECT record
so the auditor can re-validate it offline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from ..wire import Message, decode_message

HEADER = "# sitan-trace 1"


@dataclass
class TraceRecord:
    time: float
    node: int
    kind: str
    data: dict


@dataclass
class Trace:
    meta: dict = field(default_factory=dict)
    records: list[TraceRecord] = field(default_factory=list)
    messages: dict[str, Message] = field(default_factory=dict)

    def of_kind(self, *kinds: str) -> Iterable[TraceRecord]:
        return (r for r in self.records if r.kind in kinds)


class Tracer:
    """Collects records in memory; the simulator is single-threaded."""

    def __init__(self, meta: Optional[dict] = None) -> None:
        self.trace = Trace(dict(meta or {}))

    @property
    def meta(self) -> dict:
        return self.trace.meta

    def record(self, time: float, node: int, kind: str, data: dict) -> None:
        self.trace.records.append(TraceRecord(time, node, kind, data))

    def keep_message(self, msg) -> None:
        ident = msg.ident
        if ident not in self.trace.messages:
            self.trace.messages[ident] = msg


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def format_trace(trace: Trace) -> str:
    lines = [HEADER, "# meta " + _dumps(trace.meta)]
    for r in trace.records:
        d = r.data.get("digest") or r.data.get("value") or "-"
        lines.append(f"{r.time:.6f}\t{r.node}\t{r.kind}\t{d}\t{_dumps(r.data)}")
    for ident in sorted(trace.messages):
        lines.append(f"MSG\t{ident}\t{trace.messages[ident].encode().hex()}")
    return "\n".join(lines) + "\n"


def write_trace(trace: Trace, path: Path) -> None:
    Path(path).write_text(format_trace(trace), encoding="utf-8")


def parse_trace(text: str) -> Trace:
    lines = text.splitlines()
    if not lines or lines[0] != HEADER:
        raise ValueError("not a sitan trace (missing header)")
    trace = Trace()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        if line.startswith("# meta "):
            trace.meta = json.loads(line[len("# meta "):])
            continue
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        if parts[0] == "MSG":
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: malformed MSG line")
            trace.messages[parts[1]] = decode_message(bytes.fromhex(parts[2]))
            continue
        if len(parts) != 5:
            raise ValueError(f"line {lineno}: expected 5 columns, got {len(parts)}")
        trace.records.append(TraceRecord(float(parts[0]), int(parts[1]), parts[2],
                                         json.loads(parts[4])))
    return trace


def read_trace(path: Path) -> Trace:
    return parse_trace(Path(path).read_text(encoding="utf-8"))
