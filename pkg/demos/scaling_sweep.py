"""Median binary rounds and consensus sends as the all-nodes sink grows."""
import logging

from sitan.harness import from_dict, sweep, sweep_over_n

log = logging.getLogger("demo")


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    base = from_dict(dict(name="sweep-demo", protocol="binary", proposals="divergent",
                          sink_mode="all_nodes", trials=5))
    report = sweep(sweep_over_n(base, (4, 10, 25)))
    for r in report.rows:
        log.info("n=%3d median rounds %.1f mean sends %.0f", r.n, r.median_rounds,
                 r.mean_sent_consensus)
    log.info("log-log send exponent %.2f", report.send_exponent)


if __name__ == "__main__":
    main()
