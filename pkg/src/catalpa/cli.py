"""Benchmark CLI: run workloads, verify with the oracle, sweep live-heap sizes.

Exit codes: 0 success, 1 invariant failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .bench import (
    DEFAULT_OPS_PER_MS,
    Workload,
    emit,
    run_workload,
    sweep_experiment,
)
from .errors import ConfigError, ContractViolation, InvariantViolation
from .heap import HeapConfig
from .workloads import KINDS, run_stress
from . import COLLECTOR_KINDS


def _add_heap_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nursery-bytes", type=int, default=2 * 1024 * 1024)
    p.add_argument("--page-bytes", type=int, default=4096)
    p.add_argument("--reserve-bytes", type=int, default=64 * 1024 * 1024)


def _heap_config(args) -> HeapConfig:
    return HeapConfig(
        page_bytes=args.page_bytes,
        nursery_threshold_bytes=args.nursery_bytes,
        heap_reserve_bytes=args.reserve_bytes,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench", description="memory-manager benchmark and verification harness"
    )
    parser.add_argument("--trace", action="store_true", help="per-phase collection log")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one workload and emit a report")
    run_p.add_argument("--workload", choices=KINDS, required=True)
    run_p.add_argument("--collector", choices=COLLECTOR_KINDS, default="catalpa")
    run_p.add_argument("--tasks", type=int, default=100)
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--task-ms", type=float, default=5.0)
    run_p.add_argument("--ops-per-ms", type=float, default=DEFAULT_OPS_PER_MS)
    run_p.add_argument("--out", default=None, help="output path (default: stdout)")
    run_p.add_argument("--format", choices=("json", "csv"), default="json")
    _add_heap_args(run_p)

    verify_p = sub.add_parser("verify", help="seeded stress run under the oracle")
    verify_p.add_argument("--seed", type=int, default=0)
    verify_p.add_argument("--nodes", type=int, default=5000)
    verify_p.add_argument("--runs", type=int, default=1)
    verify_p.add_argument("--nursery-bytes", type=int, default=None)

    sweep_p = sub.add_parser("sweep", help="pause-vs-live-heap experiment")
    sweep_p.add_argument("--live-heap-mb", default="1,8,64",
                         help="comma-separated live-heap sizes in MB")
    sweep_p.add_argument("--seed", type=int, default=0)
    sweep_p.add_argument("--churn-allocs", type=int, default=400_000)
    sweep_p.add_argument("--out", default=None)
    return parser


def _cmd_run(args) -> int:
    cfg = _heap_config(args)
    w = Workload(
        kind=args.workload,
        task_count=args.tasks,
        seed=args.seed,
        target_task_ms=args.task_ms,
        ops_per_ms=args.ops_per_ms,
    )
    report = run_workload(w, collector=args.collector, cfg=cfg, trace=args.trace)
    if args.out:
        emit(report, args.format, args.out)
    elif args.format == "json":
        json.dump(report.to_json_dict(), sys.stdout, indent=2, sort_keys=True)
        print()
    else:
        emit(report, "csv", "/dev/stdout")
    return 0


def _cmd_verify(args) -> int:
    outcomes = []
    for i in range(args.runs):
        out = run_stress(
            seed=args.seed + i,
            nodes=args.nodes,
            nursery_bytes=args.nursery_bytes,
            strict=False,
        )
        outcomes.append(out.to_dict())
    doc = {"ok": all(o["ok"] for o in outcomes), "runs": outcomes}
    json.dump(doc, sys.stdout, indent=2)
    print()
    return 0 if doc["ok"] else 1


def _cmd_sweep(args) -> int:
    try:
        levels = [int(x) for x in str(args.live_heap_mb).split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"bad --live-heap-mb list: {args.live_heap_mb!r}") from e
    if not levels:
        raise ConfigError("--live-heap-mb needs at least one size")
    results = sweep_experiment(levels, seed=args.seed, churn_allocs=args.churn_allocs)
    text = json.dumps(results, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.trace:
        logging.basicConfig(level=logging.DEBUG, format="%(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_sweep(args)
    except (ConfigError, ContractViolation) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except InvariantViolation as e:
        print(f"invariant failure: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
