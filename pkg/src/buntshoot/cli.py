"""Command-line entry point: ``buntshoot solve <scenario> [options]``.

Exit codes: 0 success, 2 invalid scenario or arguments, 3 first continuation
failed, 4 second continuation (or warm start) failed, 5 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .export import ExportError, write_report, write_trace, write_trajectory_csv
from .pipeline import GuessStore, PipelineError, run_direct, run_pipeline, warm_solve
from .scenario import ScenarioError, load

EXIT_OK, EXIT_INVALID, EXIT_PHASE1, EXIT_PHASE2, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("buntshoot")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="buntshoot", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    solve = sub.add_parser("solve", help="solve a scenario (file path or shipped name)")
    solve.add_argument("scenario", help="YAML scenario file, or bunt_default / case1 / case2 / case3")
    mode = solve.add_mutually_exclusive_group()
    mode.add_argument("--phase1-only", action="store_true", help="stop after the first continuation")
    mode.add_argument("--warm-start", metavar="STORE", type=Path,
                      help="guess store (JSON); a hit skips the continuations, a miss runs them and records the result")
    solve.add_argument("--direct-oracle", action="store_true", help="also run the direct transcription (k = 0)")
    solve.add_argument("--trace", metavar="PATH", type=Path, help="write every continuation attempt as JSON lines")
    solve.add_argument("--samples", metavar="N", type=int, help="trajectory samples (rows = N + 1)")
    solve.add_argument("--out", metavar="DIR", type=Path, help="output directory (default: out/<scenario name>)")
    return parser


def _write_outputs(report, out: Path, trace_records, trace_path) -> None:
    if trace_path is not None:
        write_trace(trace_records, trace_path)
    write_report(report.to_dict(), out / "report.json")
    if report.trajectory is not None:
        write_trajectory_csv(report.trajectory, out / "trajectory.csv")


def solve(args) -> int:
    try:
        sc = load(args.scenario)
        if args.samples is not None:
            if args.samples < 1:
                raise ScenarioError("--samples must be at least 1")
            sc = sc.with_(samples=args.samples)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    out = args.out or Path("out") / sc.name

    records = []

    def on_attempt(phase, attempt):
        rec = attempt.record()
        rec["phase"] = phase
        records.append(rec)

    store = None
    report = None
    code = EXIT_OK
    try:
        if args.warm_start is not None:
            store = GuessStore(args.warm_start)
            entry = store.nearest(sc)
            if entry is not None:
                try:
                    report = warm_solve(sc, entry["Z"])
                    report.warm_start.update(distance=entry["distance"], exact_key=entry["exact"])
                except PipelineError as exc:
                    log.warning("warm start failed (%s); running the continuations", exc)
        if report is None:
            report = run_pipeline(sc, phase1_only=args.phase1_only, on_attempt=on_attempt)
            if store is not None:
                report.warm_start = {"used": False}
        if store is not None:
            store.add(sc, report.phase2.Z)
            store.save()
        if args.direct_oracle:
            info, traj, seconds = run_direct(sc)
            report.direct = info
            report.timing["direct"] = seconds
            write_trajectory_csv(traj, out / "direct_trajectory.csv")
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        report = exc.report
        code = EXIT_PHASE1 if exc.phase == "phase1" else EXIT_PHASE2
    except (ExportError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RuntimeError as exc:  # direct oracle failure after a successful indirect solve
        print(f"direct oracle failed: {exc}", file=sys.stderr)
        report.direct = {"error": str(exc)}
    try:
        _write_outputs(report, out, records, args.trace)
    except (ExportError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if code == EXIT_OK:
        table = report.residual_table
        print(f"{sc.name}: {report.mode} solve ok, t_f = {report.t_f:.6f} s, cost = {report.cost['total']:.6f}")
        for k, v in table.items():
            print(f"  {k:>26s}  {v:.3e}")
        print(f"outputs written to {out}")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("numba").setLevel(logging.WARNING)
    return solve(args)


if __name__ == "__main__":
    sys.exit(main())
