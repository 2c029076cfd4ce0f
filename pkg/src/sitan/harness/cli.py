"""Command line entry point: ``sitan run | sweep | audit``.

Exit status: 0 when every audited property holds, 2 on any violation,
1 on configuration or I/O errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..core import ConfigurationError
from .audit import audit_trace
from .config import ScenarioConfig, from_dict, load_scenario, to_dict
from .emit import EmitError, emit, emit_sweep, fmt
from .runner import run_scenario, sweep, sweep_over_n
from .trace import read_trace

OUT_ENV = "SITAN_OUT_DIR"
DEFAULT_OUT = "sitan-out"

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2

log = logging.getLogger("sitan")


def _scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", type=Path, help="YAML scenario file")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--out-dir", type=Path,
                   help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--protocol", help="binary | multivalued | vector | full_stack_bootstrap")
    p.add_argument("--f", type=int)
    p.add_argument("--proposals", help="unanimous | divergent")
    p.add_argument("--adversary", help="none | silent | random_values | wrong_phase | "
                                       "equivocate | drop_forwarding | mixed")
    p.add_argument("--sink-mode", help="sink_only | all_nodes")
    p.add_argument("--time-budget", type=float, help="simulated ms")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sitan", description="Seeded BFT consensus experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario")
    _scenario_args(run)
    run.add_argument("--n", type=int)
    run.add_argument("--no-traces", action="store_true", help="skip per-trial trace files")

    sw = sub.add_parser("sweep", help="run a scenario across several n")
    _scenario_args(sw)
    sw.add_argument("--n", type=int, nargs="+", default=[4, 10, 25, 50, 100])

    au = sub.add_parser("audit", help="re-check saved traces")
    au.add_argument("traces", type=Path, nargs="+", help="trace files or directories")
    return parser


def _config(args, n: Optional[int]) -> ScenarioConfig:
    base = load_scenario(args.scenario) if args.scenario else ScenarioConfig()
    data = to_dict(base)
    overrides = {"seed": args.seed, "trials": args.trials, "protocol": args.protocol,
                 "f": args.f, "proposals": args.proposals, "sink_mode": args.sink_mode,
                 "time_budget": args.time_budget, "n": n}
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.adversary is not None:
        if args.adversary.lower() == "none":
            data["adversary"] = None
        else:
            adv = dict(data.get("adversary") or {})
            adv["behavior"] = args.adversary
            data["adversary"] = adv
    return from_dict(data)


def _out_dir(args) -> Path:
    return args.out_dir or Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


def cmd_run(args) -> int:
    cfg = _config(args, args.n)
    out = _out_dir(args)
    result = run_scenario(cfg, keep_traces=not args.no_traces, workers=args.workers)
    emit(result, out)
    for t in result.trials:
        if t.error:
            print(f"trial {t.trial}: {t.error}", file=sys.stderr)
    for s in result.summary:
        print(f"{s.metric:20s} mean {fmt(s.mean):>14s} ± {fmt(s.ci95):>12s}  "
              f"[{fmt(s.min)}, {fmt(s.max)}]  n={s.count}")
    bad = result.violations()
    for trial, prop, detail in bad[:20]:
        print(f"VIOLATION trial {trial} {prop}: {detail}")
    print(f"{len(result.trials)} trials, {len(bad)} violations, output in {out}")
    if any(t.error for t in result.trials):
        return EXIT_ERROR
    return EXIT_VIOLATION if bad else EXIT_OK


def cmd_sweep(args) -> int:
    base = _config(args, None)
    report = sweep(sweep_over_n(base, args.n), workers=args.workers)
    path = emit_sweep(report, _out_dir(args))
    for r in report.rows:
        print(f"n={r.n:4d} median_rounds={fmt(r.median_rounds)} sends={fmt(r.mean_sent_consensus)} "
              f"decided={fmt(r.decided_fraction)} violations={r.violations}")
    print(f"send ratio {fmt(report.send_ratio)}, exponent {fmt(report.send_exponent)}, "
          f"rounds spread {fmt(report.rounds_spread)}; written to {path}")
    return EXIT_VIOLATION if any(r.violations for r in report.rows) else EXIT_OK


def _trace_files(paths) -> list[Path]:
    files = []
    for p in paths:
        files.extend(sorted(p.rglob("*.trace")) if p.is_dir() else [p])
    return files


def cmd_audit(args) -> int:
    files = _trace_files(args.traces)
    if not files:
        print("no trace files found", file=sys.stderr)
        return EXIT_ERROR
    bad = 0
    for path in files:
        try:
            report = audit_trace(read_trace(path))
        except (OSError, ValueError, KeyError) as exc:
            print(f"{path}: unreadable trace ({exc})", file=sys.stderr)
            return EXIT_ERROR
        verdicts = " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in report.verdicts().items())
        print(f"{path}: {verdicts}")
        for prop, detail in report.violations:
            print(f"  {prop}: {detail}")
        bad += len(report.violations)
    return EXIT_VIOLATION if bad else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return {"run": cmd_run, "sweep": cmd_sweep, "audit": cmd_audit}[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except EmitError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
