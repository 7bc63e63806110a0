"""Shadow model of the logical object graph; ground truth for verification.

The shadow graph mirrors every construct, root push/pop, global write,
evacuation, and release through notifications.  It never reads heap memory
except through the heap's public inspection interface inside
`check_invariants`, so corrupting heap internals cannot corrupt the shadow.

The central differential test: when the collector reports a release, the
released address must map to a shadow node that precise reachability (raw
root words do not retain) already considers dead.  On top of that,
`check_invariants` evaluates the structural heap invariants at every
collection boundary: bitmap/free-list duality, bin consistency, an empty
nursery with no old-to-young edges, reference counts equal to old-space
in-degrees, the committed-memory bound, attribution of every conservatively
retained object, and bounded release latency for dead objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import InvariantViolation
from .heap import FLAG_OLD, FLAG_ROOTREF, PageState, RC_MASK, header_type_id
from .mutator import ObjectRef


@dataclass
class CheckReport:
    checks: list[tuple[str, bool, str]] = field(default_factory=list)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append((name, ok, detail))

    @property
    def ok(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def failures(self) -> list[tuple[str, str]]:
        return [(name, detail) for name, ok, detail in self.checks if not ok]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"name": n, "ok": ok, "detail": d} for n, ok, d in self.checks
            ],
        }


class ShadowNode:
    __slots__ = ("node_id", "type_id", "raw_values", "children")

    def __init__(self, node_id, type_id, raw_values, children):
        self.node_id = node_id
        self.type_id = type_id
        self.raw_values = raw_values  # tuple of (slot, word)
        self.children = children  # tuple of child node ids, ref-slot order


class ShadowGraph:
    """Listener mirroring the heap's logical state; strict mode raises on fault."""

    def __init__(self, strict: bool = True, check_heap: bool = False, max_checked_boundaries=None):
        self.strict = strict
        self.check_heap = check_heap  # run full heap invariants at each boundary
        self.max_checked_boundaries = max_checked_boundaries
        self.nodes: dict[int, ShadowNode] = {}
        self.addr_of: dict[int, int] = {}
        self.node_at: dict[int, int] = {}
        self.frames: list[list[tuple[str, int]]] = []
        self.global_refs: dict[int, tuple[str, int]] = {}
        self.next_id = 0
        self.released_count = 0
        self.collections = 0
        self.violations: list[str] = []
        # Bounded-liveness bookkeeping: node id -> collection index deadline.
        self.deadlines: dict[int, int] = {}
        self._reach_at_pause: set[int] | None = None
        # Addresses legitimately touched by this cycle's decrement cascade
        # (released objects and their children), captured at release time
        # because released nodes leave the shadow maps immediately.
        self._cascade_allowed: set[int] = set()

    # -- event stream ---------------------------------------------------------

    def on_construct(self, addr: int, type_id: int, fields) -> None:
        raws = []
        children = []
        for slot, v in enumerate(fields):
            if isinstance(v, ObjectRef):
                nid = self.node_at.get(v.addr)
                if nid is None:
                    self._fault(f"construct references unknown address {v.addr:#x}")
                    continue
                children.append(nid)
            else:
                raws.append((slot, int(v) & ((1 << 64) - 1)))
        nid = self.next_id
        self.next_id += 1
        self.nodes[nid] = ShadowNode(nid, type_id, tuple(raws), tuple(children))
        self.addr_of[nid] = addr
        if addr in self.node_at:
            self._fault(f"address {addr:#x} bound twice")
        self.node_at[addr] = nid

    def on_root_push(self, values) -> None:
        frame = []
        for v in values:
            if isinstance(v, ObjectRef):
                nid = self.node_at.get(v.addr)
                if nid is None:
                    self._fault(f"root push of unknown address {v.addr:#x}")
                    continue
                frame.append(("ref", nid))
            else:
                frame.append(("raw", int(v)))
        self.frames.append(frame)

    def on_root_pop(self) -> None:
        if not self.frames:
            self._fault("root pop with no shadow frame")
            return
        self.frames.pop()

    def on_global_set(self, index: int, value) -> None:
        if value is None:
            self.global_refs.pop(index, None)
        elif isinstance(value, ObjectRef):
            nid = self.node_at.get(value.addr)
            if nid is None:
                self._fault(f"global set of unknown address {value.addr:#x}")
                return
            self.global_refs[index] = ("ref", nid)
        else:
            self.global_refs[index] = ("raw", int(value))

    def on_evacuate(self, old_addr: int, new_addr: int) -> None:
        nid = self.node_at.pop(old_addr, None)
        if nid is None:
            self._fault(f"evacuation of unknown address {old_addr:#x}")
            return
        if new_addr in self.node_at:
            self._fault(f"evacuation target {new_addr:#x} already bound")
        self.node_at[new_addr] = nid
        self.addr_of[nid] = new_addr

    def on_release(self, addr: int) -> None:
        self._on_reclaim(addr, "release")

    def on_sweep_dead(self, addr: int) -> None:
        self._on_reclaim(addr, "sweep")

    def _on_reclaim(self, addr: int, why: str) -> None:
        nid = self.node_at.get(addr)
        if nid is None:
            self._fault(f"{why} of unknown address {addr:#x}")
            return
        reach = self._reach_at_pause
        if reach is not None and nid in reach:
            self._fault(f"{why}d node {nid} is reachable from precise roots")
        if why == "release":
            self._cascade_allowed.add(addr)
            for c in self.nodes[nid].children:
                self._cascade_allowed.add(self.addr_of[c])
        self._drop_node(nid)

    def on_collect_begin(self) -> None:
        # Roots cannot change while the collector runs (single thread), so
        # one reachability pass serves every release check of the cycle.
        self._reach_at_pause = self.reachable_node_ids()
        self._cascade_allowed = set()

    def on_collection(self, record, collector) -> None:
        self.collections += 1
        self._reach_at_pause = None
        do_full = self.check_heap and (
            self.max_checked_boundaries is None
            or self.collections <= self.max_checked_boundaries
        )
        report = self.check_invariants(collector.heap, collector, record) if do_full else None
        self._track_liveness(record, collector)
        if report is not None and not report.ok:
            for name, detail in report.failures():
                self._fault(f"collection {self.collections}: {name}: {detail}")

    # -- reachability ----------------------------------------------------------

    def _root_ids(self) -> set[int]:
        roots = {nid for frame in self.frames for kind, nid in frame if kind == "ref"}
        roots.update(nid for kind, nid in self.global_refs.values() if kind == "ref")
        return roots

    def reachable_node_ids(self) -> set[int]:
        """Exact transitive closure from logical roots (raw words never retain)."""
        seen = self._root_ids()
        stack = list(seen)
        nodes = self.nodes
        while stack:
            nid = stack.pop()
            for c in nodes[nid].children:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def reachable_fixpoint(self) -> set[int]:
        """Independent second traversal: iterated edge relaxation to fixpoint."""
        reach = self._root_ids()
        changed = True
        while changed:
            changed = False
            added = set()
            for nid in reach:
                for c in self.nodes[nid].children:
                    if c not in reach and c not in added:
                        added.add(c)
            if added:
                reach |= added
                changed = True
        return reach

    def live_bytes(self, registry) -> int:
        return sum(
            registry[self.nodes[nid].type_id].slot_bytes for nid in self.reachable_node_ids()
        )

    # -- differential probes -----------------------------------------------------

    def check_object(self, mutator, ref: ObjectRef) -> None:
        """Compare one object's observable fields against the shadow."""
        nid = self.node_at.get(ref.addr)
        if nid is None:
            self._fault(f"probe of unknown address {ref.addr:#x}")
            return
        node = self.nodes[nid]
        for slot, expect in node.raw_values:
            got = mutator.read_field(ref, slot)
            if got != expect:
                self._fault(f"node {nid} slot {slot}: read {got}, shadow {expect}")
        td = mutator.heap.registry[node.type_id]
        for child_nid, slot in zip(node.children, td.ref_slots):
            child = mutator.read_field(ref, slot)
            got_nid = self.node_at.get(child.addr)
            if got_nid != child_nid:
                self._fault(
                    f"node {nid} ref slot {slot}: address {child.addr:#x} "
                    f"maps to {got_nid}, shadow expects {child_nid}"
                )

    # -- full heap invariants ------------------------------------------------------

    def check_invariants(self, heap, collector, record=None) -> CheckReport:
        report = CheckReport()
        self._check_duality_and_bins(heap, report)
        live = self._check_post_collection_heap(heap, report)
        self._check_rc_exactness(heap, live, report)
        self._check_canonicalization(heap, live, report)
        self._check_retention_gap(heap, collector, live, report)
        self._check_committed_bound(heap, report)
        if collector.track_touches:
            self._check_fringe_touches(heap, collector, report)
        if record is not None:
            report.add(
                "marked-splits",
                record.marked == record.evacuated + record.promoted_in_place,
                f"marked {record.marked} = evac {record.evacuated} + "
                f"inplace {record.promoted_in_place}",
            )
        return report

    def _check_duality_and_bins(self, heap, report: CheckReport) -> None:
        bad = []
        for meta in heap.iter_pages():
            if meta.class_id is None:
                continue
            sc = heap.size_classes[meta.class_id]
            clear = {
                s for s in range(sc.slots_per_page) if not (meta.alloc_bitmap >> s) & 1
            }
            if set(meta.free_list) != clear or len(meta.free_list) != len(clear):
                bad.append(f"page {meta.index}: free-list != clear bitmap slots")
                continue
            if meta.state is PageState.FREE and meta.alloc_bitmap:
                bad.append(f"page {meta.index}: FREE with allocated slots")
            if meta.state is PageState.OLD_PARTIAL:
                b = int((meta.live_count / sc.slots_per_page) / heap.config.bin_width)
                b = min(b, heap.n_bins - 1)
                if meta.bin != b or meta.index not in heap.bins[meta.class_id][b]:
                    bad.append(f"page {meta.index}: bin {meta.bin} != expected {b}")
            if meta.state is PageState.OLD_FULL and meta.free_list:
                bad.append(f"page {meta.index}: OLD_FULL with free slots")
        report.add("freelist-bitmap-duality", not bad, "; ".join(bad[:3]))

    def _check_post_collection_heap(self, heap, report: CheckReport):
        """Nursery must be empty; no ref slot may address a young object."""
        live = {}
        young = []
        bad_edges = []
        for addr, header in heap.iter_allocated():
            live[addr] = header
            if not header & FLAG_OLD:
                young.append(addr)
        for addr in live:
            for t in heap.refs_of(addr):
                h = live.get(t)
                if h is None:
                    bad_edges.append(f"{addr:#x} -> unallocated {t:#x}")
                elif not h & FLAG_OLD:
                    bad_edges.append(f"old->young {addr:#x} -> {t:#x}")
        report.add(
            "nursery-empty", not young, f"{len(young)} young objects remain" if young else ""
        )
        report.add("no-old-to-young-edges", not bad_edges, "; ".join(bad_edges[:3]))
        return live

    def _check_rc_exactness(self, heap, live, report: CheckReport) -> None:
        indeg = dict.fromkeys(live, 0)
        for addr in live:
            for t in heap.refs_of(addr):
                if t in indeg:
                    indeg[t] += 1
        bad = [
            f"{addr:#x}: rc {h & RC_MASK} != in-degree {indeg[addr]}"
            for addr, h in live.items()
            if (h & RC_MASK) != indeg[addr]
        ]
        report.add("rc-exactness", not bad, "; ".join(bad[:3]))

    def _check_canonicalization(self, heap, live, report: CheckReport) -> None:
        bad = []
        for addr, h in list(live.items())[:64]:
            sc = heap.size_classes[heap.class_of_type[header_type_id(h)]]
            for probe in (addr, addr + 1, addr + sc.slot_bytes - 1):
                got = heap.validate_candidate(probe)
                if got != addr or heap.validate_candidate(got) != addr:
                    bad.append(f"probe {probe:#x} -> {got}")
        report.add("canonicalization-idempotent", not bad, "; ".join(bad[:3]))

    def _heap_closure(self, heap, seeds) -> set[int]:
        seen = set(seeds)
        stack = list(seeds)
        while stack:
            a = stack.pop()
            for t in heap.refs_of(a):
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        return seen

    def _check_retention_gap(self, heap, collector, live, report: CheckReport) -> None:
        """heap-live must cover precise-reachable; the excess must be attributable
        to raw-word collisions or to deferred decrements."""
        reach_addrs = {self.addr_of[nid] for nid in self.reachable_node_ids()}
        missing = [a for a in reach_addrs if a not in live]
        report.add(
            "retention-superset",
            not missing,
            "; ".join(f"{a:#x}" for a in missing[:3]),
        )
        precise_roots = {self.addr_of[nid] for nid in self._root_ids()}
        spurious = collector.last_candidates - precise_roots
        allowed_seeds = spurious | set(collector.worklist)
        allowed = self._heap_closure(heap, (a for a in allowed_seeds if a in live))
        unattributed = [a for a in live if a not in reach_addrs and a not in allowed]
        report.add(
            "retention-attributed",
            not unattributed,
            "; ".join(f"{a:#x}" for a in unattributed[:3]),
        )

    def _check_committed_bound(self, heap, report: CheckReport) -> None:
        live_bytes = self.live_bytes(heap.registry)
        bound = (
            live_bytes
            + heap.config.nursery_threshold_bytes
            + max(1 << 20, live_bytes // 4)
        )
        report.add(
            "committed-bound",
            heap.committed_bytes <= bound,
            f"committed {heap.committed_bytes} > {bound} (live {live_bytes})",
        )

    def _check_fringe_touches(self, heap, collector, report: CheckReport) -> None:
        allowed = set(collector.prev_snapshot)
        allowed.update(collector.last_prev_snapshot)
        allowed.update(collector.last_candidates)
        allowed.update(collector.last_dequeued)
        allowed.update(self._cascade_allowed)
        for addr in collector.last_promoted:
            allowed.add(addr)
            nid = self.node_at.get(addr)
            if nid is not None:
                for c in self.nodes[nid].children:
                    allowed.add(self.addr_of[c])
        stray = collector.touched_old - allowed
        report.add(
            "fringe-only-touches",
            not stray,
            "; ".join(f"{a:#x}" for a in list(stray)[:3]),
        )

    # -- bounded liveness --------------------------------------------------------

    def _track_liveness(self, record, collector) -> None:
        heap = collector.heap
        reach = self.reachable_node_ids()
        precise_roots = {self.addr_of[nid] for nid in self._root_ids()}
        spurious = collector.last_candidates - precise_roots
        excluded = set()
        if spurious:
            live_addrs = {a for a, _ in heap.iter_allocated()}
            closure = self._heap_closure(heap, (a for a in spurious if a in live_addrs))
            excluded = {self.node_at[a] for a in closure if a in self.node_at}
        dead = [
            nid for nid in self.nodes if nid not in reach and nid not in excluded
        ]
        k = self.collections
        overdue = [
            nid
            for nid, deadline in self.deadlines.items()
            if k >= deadline and nid in self.nodes and nid not in excluded
        ]
        for nid in overdue:
            self._fault(
                f"node {nid} not released by collection {self.deadlines[nid]} "
                f"(now {k})"
            )
            del self.deadlines[nid]
        if record.alloc_count > 0:
            budget = math.ceil(
                heap.config.decrement_budget_factor * record.alloc_count
            )
            horizon = math.ceil(len(dead) / budget) + 1 if budget else 0
            for nid in dead:
                if nid not in self.deadlines:
                    self.deadlines[nid] = k + horizon

    # -- internals ---------------------------------------------------------------

    def _drop_node(self, nid: int) -> None:
        addr = self.addr_of.pop(nid)
        self.node_at.pop(addr, None)
        self.nodes.pop(nid, None)
        self.deadlines.pop(nid, None)
        self.released_count += 1

    def _fault(self, message: str) -> None:
        self.violations.append(message)
        if self.strict:
            raise InvariantViolation(message)
