"""Membership discovers a five-node sink, one node crashes, the rest rebuild the view."""
import logging

from sitan.harness import from_dict, parse_trace, run_trial

log = logging.getLogger("demo")


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = from_dict(dict(name="crash-demo", n=5, protocol="full_stack_bootstrap",
                         heartbeat_ms=100, crashes=[{"node": 2, "at": 1500}], time_budget=20000))
    trace = parse_trace(run_trial(cfg, 0, keep_trace=True).trace_text)
    for r in trace.of_kind("NEIGHBOR_REMOVE", "SINK_RECOMPUTE", "SINK"):
        if r.kind != "NEIGHBOR_REMOVE" or r.data.get("neighbor") == 2:
            log.info("%9.1f ms node %d %s %s", r.time, r.node, r.kind, r.data.get("members", ""))
    first = {}
    for r in trace.of_kind("DECIDE"):
        first.setdefault(r.node, r.time)
    log.info("first decisions: %s", {v: round(t, 1) for v, t in sorted(first.items())})


if __name__ == "__main__":
    main()
