"""One equivocating node out of seven: correct nodes still agree, and the audit says so."""
import logging

from sitan.harness import audit_trace, from_dict, parse_trace, run_trial

log = logging.getLogger("demo")


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = from_dict(dict(name="equivocation-demo", n=7, protocol="multivalued",
                         proposals="divergent", adversary={"behavior": "equivocate"}, seed=3))
    for i in range(3):
        t = run_trial(cfg, i, keep_trace=True)
        values = {m.value for m in t.deciders()}
        byz = [m.node for m in t.nodes if m.role == "byzantine"]
        report = audit_trace(parse_trace(t.trace_text))
        log.info("trial %d: byzantine %s, correct decisions %s, audit %s", i, byz, values,
                 "clean" if not report.violations else report.violations)


if __name__ == "__main__":
    main()
