"""Run a four-node sink through binary, multivalued and vector consensus."""
import logging

from sitan.consensus import decode_row
from sitan.node import Network

log = logging.getLogger("demo")


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    net = Network(4, 1, seed=7)
    net.set_sink(range(4))
    bins = {i: net[i].consensus.bin_propose("coin", i % 2) for i in range(4)}
    mvs = {i: net[i].consensus.mv_propose("colour", b"blue" if i else b"red") for i in range(4)}
    vecs = {i: net[i].consensus.vec_propose("readings", f"r{i}".encode()) for i in range(4)}
    handles = [*bins.values(), *mvs.values(), *vecs.values()]
    net.run_until(lambda: all(h.done for h in handles), 10000)
    log.info("binary: %s after %s rounds", {h.result for h in bins.values()},
             max(h.rounds for h in bins.values()))
    log.info("multivalued: %s", {h.result for h in mvs.values()})
    cols, row = decode_row(vecs[0].result)
    log.info("vector: %s", {c: e.value for c, e in zip(cols, row) if e is not None})
    log.info("simulated time %.1f ms", net.sim.now)


if __name__ == "__main__":
    main()
