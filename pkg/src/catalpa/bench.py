"""Workload driver, latency/pause statistics, and report emission.

Task lengths are defined in operations (target_task_ms times a fixed
ops-per-ms conversion), never by wall-clock calibration, so the allocation
sequence and the work_units trace are bit-identical across runs with the
same seed and config; only wall-clock fields vary.  Percentiles are exact
nearest-rank over the full stored sample list.
"""

from __future__ import annotations

import csv
import gc as _pygc
import json
import math
import random
import statistics
import time
from dataclasses import dataclass, field

from . import new_runtime
from .errors import ContractViolation, OutOfMemory
from .heap import HeapConfig
from .workloads import (
    CHAIN_SLOT,
    CORE_KINDS,
    KINDS,
    build_live_chain,
    churn,
    make_kernel,
    register_schema,
)

# Fixed ops<->ms conversion (measured on a desk-class core); wall-clock
# calibration would break run-to-run determinism of the allocation sequence.
DEFAULT_OPS_PER_MS = 40


@dataclass(frozen=True)
class Workload:
    kind: str
    task_count: int
    seed: int
    target_task_ms: float = 5.0
    ops_per_ms: float = DEFAULT_OPS_PER_MS

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ContractViolation(f"unknown workload kind {self.kind!r}")
        if self.task_count <= 0:
            raise ContractViolation("task_count must be positive")

    @property
    def ops_per_task(self) -> int:
        return max(1, round(self.target_task_ms * self.ops_per_ms))


def percentile(samples, q: float):
    """Exact nearest-rank percentile over the full sample list."""
    if not samples:
        raise ValueError("percentile of empty samples")
    ordered = sorted(samples)
    rank = math.ceil(q / 100.0 * len(ordered))
    return ordered[max(rank, 1) - 1]


def _dist(samples) -> dict | None:
    if not samples:
        return None
    return {
        "p50": percentile(samples, 50),
        "p95": percentile(samples, 95),
        "p99": percentile(samples, 99),
        "samples": list(samples),
    }


def _task_dist(samples) -> dict:
    d = _dist(samples) or {}
    if samples:
        d["mean"] = statistics.fmean(samples)
        d["sigma"] = statistics.pstdev(samples)
    return d


@dataclass
class StatsReport:
    workload: str
    collector: str
    page_bytes: int
    nursery_bytes: int
    seed: int
    wall_clock_s: float = 0.0
    task_ms: list[float] = field(default_factory=list)
    task_kinds: list[str] = field(default_factory=list)
    pause_ns: list[int] = field(default_factory=list)
    pause_work: list[int] = field(default_factory=list)
    records: list = field(default_factory=list)
    collections: int = 0
    survival_rate: float | None = None
    max_committed_bytes: int = 0
    released_total: int = 0
    oom: bool = False

    def task_mean_sigma(self, kind: str | None = None):
        lat = self.kind_samples(kind) if kind else self.task_ms
        return statistics.fmean(lat), statistics.pstdev(lat)

    def kind_samples(self, kind: str) -> list[float]:
        return [ms for ms, k in zip(self.task_ms, self.task_kinds) if k == kind]

    def to_json_dict(self) -> dict:
        per_kind = {}
        if self.workload == "server":
            for kind, sub in disaggregate(self).items():
                d = _task_dist(sub.task_ms)
                d["count"] = len(sub.task_ms)
                d.pop("samples", None)
                per_kind[kind] = d
        return {
            "workload": self.workload,
            "collector": self.collector,
            "config": {
                "page_bytes": self.page_bytes,
                "nursery_bytes": self.nursery_bytes,
                "seed": self.seed,
            },
            "wall_clock_s": self.wall_clock_s,
            "collections": self.collections,
            "survival_rate": self.survival_rate,
            "max_committed_bytes": self.max_committed_bytes,
            "pause_ns": _dist(self.pause_ns),
            "work_units": _dist(self.pause_work),
            "task_ms": _task_dist(self.task_ms),
            "released_total": self.released_total,
            "oom": self.oom,
            "per_kind": per_kind,
        }


def run_workload(
    workload: Workload,
    collector: str = "catalpa",
    cfg: HeapConfig | None = None,
    listener=None,
    trace: bool = False,
) -> StatsReport:
    """Execute the workload's tasks and record every latency and pause."""
    if cfg is None:
        cfg = HeapConfig()
    mut = new_runtime(cfg, collector=collector, listener=listener, trace=trace)
    tids = register_schema(mut)
    rng = random.Random(workload.seed)
    report = StatsReport(
        workload=workload.kind,
        collector=collector,
        page_bytes=cfg.page_bytes,
        nursery_bytes=cfg.nursery_threshold_bytes,
        seed=workload.seed,
    )

    kinds_needed = CORE_KINDS if workload.kind == "server" else (workload.kind,)
    kernels = {k: make_kernel(k, mut, tids, rng, listener) for k in kinds_needed}
    ops = workload.ops_per_task

    gc_was_enabled = _pygc.isenabled()
    _pygc.disable()  # keep the host runtime's collector out of the timings
    wall_t0 = time.perf_counter()
    try:
        for _ in range(workload.task_count):
            kind = rng.choice(CORE_KINDS) if workload.kind == "server" else workload.kind
            t0 = time.perf_counter()
            try:
                kernels[kind].run_ops(ops)
            except OutOfMemory:
                report.oom = True
                break
            report.task_ms.append((time.perf_counter() - t0) * 1e3)
            report.task_kinds.append(kind)
    finally:
        report.wall_clock_s = time.perf_counter() - wall_t0
        if gc_was_enabled:
            _pygc.enable()

    col = mut.collector
    if col is not None:
        report.records = list(col.records)
        report.collections = len(col.records)
        report.pause_ns = [r.pause_ns for r in col.records]
        report.pause_work = [r.work_units for r in col.records]
        report.released_total = col.total_released
        alloc_bytes = sum(r.alloc_bytes for r in col.records)
        if alloc_bytes:
            report.survival_rate = (
                sum(r.survivor_bytes for r in col.records) / alloc_bytes
            )
    report.max_committed_bytes = mut.heap.max_committed_bytes
    return report


def disaggregate(report: StatsReport) -> dict[str, StatsReport]:
    """Split a server run's samples back into the originating task kinds."""
    if report.workload != "server":
        raise ContractViolation("disaggregate requires a server-kind report")
    out: dict[str, StatsReport] = {}
    for kind in CORE_KINDS:
        samples = report.kind_samples(kind)
        if not samples:
            continue  # absent, not zero-filled
        out[kind] = StatsReport(
            workload=kind,
            collector=report.collector,
            page_bytes=report.page_bytes,
            nursery_bytes=report.nursery_bytes,
            seed=report.seed,
            task_ms=samples,
            task_kinds=[kind] * len(samples),
        )
    return out


def path_independence_experiment(
    seed: int,
    tasks_per_kind: int,
    cfg: HeapConfig | None = None,
    batch: int = 25,
    target_task_ms: float = 5.0,
    ops_per_ms: float = DEFAULT_OPS_PER_MS,
) -> dict:
    """Uniform-vs-mixed latency comparison with interleaved execution.

    One runtime per uniform kind plus one mixed runtime run round-robin in
    small batches, so slow ambient speed drift of the host lands on both
    contexts equally; sequential whole runs would confound the comparison.
    Returns per-kind uniform and mixed latency samples (ms).
    """
    if cfg is None:
        cfg = HeapConfig()
    ops = max(1, round(target_task_ms * ops_per_ms))
    uniform = {}
    for i, kind in enumerate(CORE_KINDS):
        mut = new_runtime(cfg)
        tids = register_schema(mut)
        kernel = make_kernel(kind, mut, tids, random.Random(seed * 8 + i))
        uniform[kind] = kernel
    mixed_mut = new_runtime(cfg)
    mixed_tids = register_schema(mixed_mut)
    mix_rng = random.Random(seed)
    mixed = {
        kind: make_kernel(kind, mixed_mut, mixed_tids, mix_rng)
        for kind in CORE_KINDS
    }
    out = {
        "uniform": {kind: [] for kind in CORE_KINDS},
        "mixed": {kind: [] for kind in CORE_KINDS},
    }

    def run_batch(kernel, samples, n):
        for _ in range(n):
            t0 = time.perf_counter()
            kernel.run_ops(ops)
            samples.append((time.perf_counter() - t0) * 1e3)

    gc_was_enabled = _pygc.isenabled()
    _pygc.disable()
    try:
        done = 0
        while done < tasks_per_kind:
            n = min(batch, tasks_per_kind - done)
            for kind in CORE_KINDS:
                run_batch(uniform[kind], out["uniform"][kind], n)
            for _ in range(len(CORE_KINDS) * n):
                kind = mix_rng.choice(CORE_KINDS)
                run_batch(mixed[kind], out["mixed"][kind], 1)
            done += n
    finally:
        if gc_was_enabled:
            _pygc.enable()
    return out


CSV_COLUMNS = (
    "index",
    "pause_ns",
    "work_units",
    "marked",
    "evacuated",
    "promoted_in_place",
    "released",
    "deferred_backlog",
    "committed_bytes",
    "survivor_bytes",
    "alloc_bytes",
    "alloc_count",
)


def emit(report: StatsReport, fmt: str, path: str) -> None:
    """Write the report with a stable schema; json summary or per-collection csv."""
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report.to_json_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_COLUMNS)
            for i, r in enumerate(report.records):
                w.writerow(
                    [
                        i,
                        r.pause_ns,
                        r.work_units,
                        r.marked,
                        r.evacuated,
                        r.promoted_in_place,
                        r.released,
                        r.deferred_backlog,
                        r.committed_bytes,
                        r.survivor_bytes,
                        r.alloc_bytes,
                        r.alloc_count,
                    ]
                )
    else:
        raise ContractViolation(f"unknown emit format {fmt!r}")


def strip_wall_clock(doc: dict) -> dict:
    """Comparison view of an emitted JSON document: drop wall-clock fields.

    Everything that remains (collection counts, released totals, survival
    rate, committed bytes, the work_units trace) must be bit-identical for
    runs with the same seed and config.
    """
    out = dict(doc)
    for key in ("wall_clock_s", "pause_ns", "task_ms", "per_kind"):
        out.pop(key, None)
    return out


def sweep_experiment(
    live_heap_mb,
    seed: int = 0,
    churn_allocs: int = 400_000,
    cfg: HeapConfig | None = None,
) -> list[dict]:
    """Pause-vs-live-heap: grow a rooted old heap, then measure churn pauses.

    The live structure is cold during churn; bounded pauses require the
    collector to never touch it, so work per collection should be flat in
    the live-heap size.
    """
    results = []
    for mb in live_heap_mb:
        level_cfg = cfg or HeapConfig(heap_reserve_bytes=256 * 1024 * 1024)
        mut = new_runtime(level_cfg)
        register_schema(mut)
        gc_was_enabled = _pygc.isenabled()
        _pygc.disable()
        try:
            build_live_chain(mut, mb * 1024 * 1024, CHAIN_SLOT)
            col = mut.collector
            col.collect()  # settle: promote the whole structure before timing
            first_churn = len(col.records)
            churn(mut, churn_allocs)
        finally:
            if gc_was_enabled:
                _pygc.enable()
        recs = col.records[first_churn:]
        pauses = [r.pause_ns for r in recs]
        works = [r.work_units for r in recs]
        results.append(
            {
                "live_mb": mb,
                "collections": len(recs),
                "work_p50": percentile(works, 50) if works else None,
                "work_p99": percentile(works, 99) if works else None,
                "pause_ns_p50": percentile(pauses, 50) if pauses else None,
                "pause_ns_p99": percentile(pauses, 99) if pauses else None,
                "committed_bytes": mut.heap.committed_bytes,
            }
        )
    return results
