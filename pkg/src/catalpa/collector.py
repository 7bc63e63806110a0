"""Collection cycle: mark roots, mark young, promote/evacuate, sweep, decrement.

Phase order per cycle:

    1. conservatively scan the root regions, canonicalize candidates
    2. mark young objects reachable through young-to-young edges (post-order)
    3. process marked young, children before parents:
         root-referenced  -> promote in place (conservative roots cannot move)
         otherwise        -> evacuate to the size class's evacuation page,
                             leaving a forwarded husk
       and in both cases rewrite ref slots through forwarding and increment
       every target's reference count (young-to-old edges too)
    4. sweep the pages that allocated this epoch, rebuilding free-lists
    5. diff the previous root snapshot against the current one (two-pointer
       walk over address-sorted lists); dropped roots with rc 0 join the
       decrement worklist, new roots gain the rootref flag
    6. drain the worklist up to a budget of ceil(factor * N) releases, where
       N is the number of objects handed out since the previous collection

Reference counts record heap in-edges only (old-to-old plus promotion-time
edges); root liveness is carried solely by the rootref flag maintained by the
snapshot diff.  There are no write barriers and no remembered sets: old
objects are immutable, so old-to-young edges cannot exist and the nursery is
collectable in isolation.

`work_units` is a deterministic logical clock (root words scanned, objects
marked, objects copied, ref-slot fixups, rc operations, slots swept, diff
steps, releases) so pause-bound and fixed-work properties are checkable
exactly, independent of wall-clock noise.
"""

from __future__ import annotations

import logging
import math
import time
from array import array
from collections import deque
from dataclasses import dataclass

from .errors import InvariantViolation, OutOfMemory
from .heap import (
    FLAG_FORWARDED,
    FLAG_MARK,
    FLAG_OLD,
    FLAG_ROOTREF,
    PageState,
    RC_MASK,
    TYPE_SHIFT,
    header_type_id,
)

log = logging.getLogger(__name__)

# Queued-for-decrement bit; lives beside the header flags but is collector
# bookkeeping, preventing duplicate worklist entries across resurrections.
FLAG_QUEUED = 1 << 52


@dataclass
class CollectionRecord:
    pause_ns: int
    work_units: int
    marked: int
    evacuated: int
    promoted_in_place: int
    released: int
    deferred_backlog: int
    committed_bytes: int
    survivor_bytes: int
    alloc_bytes: int  # bytes handed out since the previous collection
    alloc_count: int  # N, the decrement budget base


class Collector:
    def __init__(self, heap, mutator, listener=None, trace=False, track_touches=False):
        self.heap = heap
        self.mutator = mutator
        self.listener = listener
        self.trace = trace
        self.track_touches = track_touches
        self.records: list[CollectionRecord] = []
        self.prev_snapshot: list[int] = []
        self.worklist: deque[int] = deque()
        self.total_released = 0
        # Inspection state for the oracle, refreshed each cycle.
        self.last_candidates: set[int] = set()
        self.last_prev_snapshot: list[int] = []
        self.last_promoted: list[int] = []
        self.last_dequeued: list[int] = []
        self.touched_old: set[int] = set()

    # ------------------------------------------------------------------

    def collect(self) -> CollectionRecord:
        heap = self.heap
        t0 = time.perf_counter_ns()
        n_allocs = heap.allocs_since_gc
        alloc_bytes = heap.bytes_since_gc
        budget = math.ceil(heap.config.decrement_budget_factor * n_allocs)
        if self.track_touches:
            self.touched_old = set()
            self.last_promoted = []
            self.last_dequeued = []
        if self.listener is not None:
            self.listener.on_collect_begin()

        young_roots, old_roots, scanned = self._mark_roots()
        work = scanned
        if self.trace:
            log.debug("mark_roots: %d words, %d young + %d old candidates",
                      scanned, len(young_roots), len(old_roots))

        order = self._mark_heap(young_roots)
        marked = len(order)
        work += marked
        if self.trace:
            log.debug("mark_heap: %d young objects marked", marked)

        evacuated, promoted, survivor_bytes, fixup_work = self._process_marked_young(
            order, young_roots
        )
        work += fixup_work
        if self.trace:
            log.debug("process_marked_young: %d in place, %d evacuated", promoted, evacuated)

        work += self._sweep_nursery()

        current = sorted(old_roots | young_roots)  # promotion kept addresses stable
        enqueued, diff_work = self._compute_dead_roots(current)
        work += diff_work
        if self.trace:
            log.debug("compute_dead_roots: %d enqueued, %d pending", enqueued, len(self.worklist))

        # Retire evacuation pages before running decrements: an evacuation
        # page reused from the partial pool carries older residents that this
        # cycle's cascade may release.
        for alc in heap.allocators:
            if alc.evac_page is not None:
                heap.retire_page(heap.page_table[alc.evac_page])
                alc.evac_page = None

        released, dec_work = self._process_decrements(budget)
        work += dec_work
        self.total_released += released
        if self.trace:
            log.debug("process_decrements: %d released (budget %d), %d deferred",
                      released, budget, len(self.worklist))

        for alc in heap.allocators:
            alc.allocs_since_gc = 0
            alc.bytes_since_gc = 0
        heap.allocs_since_gc = 0
        heap.bytes_since_gc = 0

        if marked != evacuated + promoted:
            raise InvariantViolation("marked != evacuated + promoted_in_place")
        if self.worklist and released != budget:
            raise InvariantViolation(
                f"ineffective collection: released {released} of budget {budget} "
                f"with {len(self.worklist)} pending"
            )

        record = CollectionRecord(
            pause_ns=time.perf_counter_ns() - t0,
            work_units=work,
            marked=marked,
            evacuated=evacuated,
            promoted_in_place=promoted,
            released=released,
            deferred_backlog=len(self.worklist),
            committed_bytes=heap.committed_bytes,
            survivor_bytes=survivor_bytes,
            alloc_bytes=alloc_bytes,
            alloc_count=n_allocs,
        )
        self.records.append(record)
        if self.listener is not None:
            self.listener.on_collection(record, self)
        return record

    # ------------------------------------------------------------------

    def _mark_roots(self):
        """Canonicalize every root word; split candidates by generation."""
        heap = self.heap
        validate = heap.validate_candidate
        header = heap.header
        young: set[int] = set()
        old: set[int] = set()
        scanned = 0
        for word in self.mutator.root_words():
            scanned += 1
            addr = validate(word)
            if addr is None:
                continue
            if header(addr) & FLAG_OLD:
                old.add(addr)
                if self.track_touches:
                    self.touched_old.add(addr)
            else:
                young.add(addr)
        self.last_candidates = young | old
        return young, old, scanned

    def _mark_heap(self, young_roots) -> list[int]:
        """Mark young objects reachable from the young candidates.

        Old objects are never visited.  Returns post-order (every young child
        precedes every young parent), valid because the graph is a DAG.
        """
        heap = self.heap
        header = heap.header
        set_header = heap.set_header
        refs_of = self._refs_of
        tt = self.track_touches
        order: list[int] = []
        for root in sorted(young_roots):
            h = header(root)
            if h & FLAG_MARK:
                continue
            set_header(root, h | FLAG_MARK)
            stack = [(root, iter(refs_of(root)))]
            while stack:
                addr, it = stack[-1]
                child = None
                for c in it:
                    ch = header(c)
                    if ch & FLAG_OLD:
                        if tt:
                            self.touched_old.add(c)
                        continue  # the old space is fringe-only, never traversed
                    if ch & FLAG_MARK:
                        continue
                    set_header(c, ch | FLAG_MARK)
                    child = c
                    break
                if child is None:
                    order.append(addr)
                    stack.pop()
                else:
                    stack.append((child, iter(refs_of(child))))
        return order

    def _refs_of(self, addr: int) -> list[int]:
        heap = self.heap
        off = addr - heap.base
        meta = heap.page_table[off >> heap.page_shift]
        wi = (off & heap.page_mask) >> 3
        words = meta.words
        tid = (words[wi] >> TYPE_SHIFT) & 0xFFFF
        return [words[wi + o] for o in heap.ref_offsets[tid]]

    def _process_marked_young(self, order, young_roots):
        """Promote or evacuate each marked object, children before parents."""
        heap = self.heap
        header = heap.header
        set_header = heap.set_header
        read_word = heap.read_word
        write_word = heap.write_word
        tt = self.track_touches
        evacuated = 0
        promoted = 0
        survivor_bytes = 0
        work = 0

        for addr in order:
            h = header(addr)
            tid = (h >> TYPE_SHIFT) & 0xFFFF
            class_id = heap.class_of_type[tid]
            sc = heap.size_classes[class_id]
            survivor_bytes += sc.slot_bytes

            if addr in young_roots:
                # A conservative root may address this object; it cannot move.
                if h & RC_MASK:
                    raise InvariantViolation("young object with nonzero rc")
                set_header(addr, (h & ~FLAG_MARK) | FLAG_OLD | FLAG_ROOTREF)
                new = addr
                promoted += 1
            else:
                new = self._evac_slot(class_id)
                src_off = addr - heap.base
                src_meta = heap.page_table[src_off >> heap.page_shift]
                src_wi = (src_off & heap.page_mask) >> 3
                dst_off = new - heap.base
                dst_meta = heap.page_table[dst_off >> heap.page_shift]
                dst_wi = (dst_off & heap.page_mask) >> 3
                dst_meta.words[dst_wi] = (tid << TYPE_SHIFT) | FLAG_OLD
                for j in range(1, sc.slot_words):
                    dst_meta.words[dst_wi + j] = src_meta.words[src_wi + j]
                # Husk: forwarding address in the first slot, flag in the header.
                src_meta.words[src_wi] = h | FLAG_FORWARDED
                src_meta.words[src_wi + 1] = new
                evacuated += 1
                work += 1  # the copy
                if self.listener is not None:
                    self.listener.on_evacuate(addr, new)
            if tt:
                self.touched_old.add(new)
                self.last_promoted.append(new)

            # Rewrite every ref slot through forwarding; each target, young
            # till a moment ago or long since old, gains one reference.
            for off in heap.ref_offsets[tid]:
                t = read_word(new, off)
                th = header(t)
                if th & FLAG_FORWARDED:
                    t = read_word(t, 1)
                    write_word(new, off, t)
                    th = header(t)
                if not th & FLAG_OLD:
                    raise InvariantViolation("promotion fixup found a young target")
                if th & RC_MASK == RC_MASK:
                    raise InvariantViolation(f"reference count overflow at {t:#x}")
                set_header(t, th + 1)
                work += 2  # fixup + rc increment
                if tt:
                    self.touched_old.add(t)
        return evacuated, promoted, survivor_bytes, work

    def _evac_slot(self, class_id: int) -> int:
        heap = self.heap
        alc = heap.allocators[class_id]
        while True:
            pi = alc.evac_page
            if pi is not None:
                meta = heap.page_table[pi]
                if meta.free_list:
                    slot = meta.free_list.pop()
                    meta.alloc_bitmap |= 1 << slot
                    meta.live_count += 1
                    sc = alc.size_class
                    return heap.base + (pi << heap.page_shift) + slot * sc.slot_bytes
                heap.retire_page(meta)
                alc.evac_page = None
            pi = heap.acquire_page(class_id, for_evac=True)
            if pi is None:
                raise OutOfMemory("no page available for evacuation")
            alc.evac_page = pi

    def _sweep_nursery(self) -> int:
        """Reclaim dead young objects and husks; retire this epoch's pages."""
        heap = self.heap
        listener = self.listener
        work = 0
        for pi in heap.nursery_pages:
            meta = heap.page_table[pi]
            sc = heap.size_classes[meta.class_id]
            work += sc.slots_per_page  # walk + free-list rebuild cost
            words = meta.words
            sw = sc.slot_words
            page_addr = heap.base + (pi << heap.page_shift)
            survivors = 0
            dead = []
            for slot in meta.young_slots:
                work += 1
                h = words[slot * sw]
                if h & FLAG_OLD:
                    survivors += 1  # promoted in place
                    continue
                if h & FLAG_FORWARDED:
                    dead.append(slot)  # husk; the object lives on elsewhere
                    continue
                if h & FLAG_MARK:
                    raise InvariantViolation("marked young object left unprocessed")
                dead.append(slot)
                if listener is not None:
                    listener.on_sweep_dead(page_addr + slot * sc.slot_bytes)
            del meta.young_slots[:]
            if dead:
                mask = 0
                for slot in dead:
                    mask |= 1 << slot
                meta.alloc_bitmap &= ~mask
                merged = sorted(dead, reverse=True)
                if meta.free_list:
                    merged = sorted(list(meta.free_list) + merged, reverse=True)
                meta.free_list = array("H", merged)
            meta.live_count += survivors
            if meta.live_count == 0:
                if meta.alloc_bitmap:
                    raise InvariantViolation(f"page {pi}: empty live count, set bitmap")
                heap.make_page_free(meta)
            else:
                heap.retire_page(meta)
        heap.nursery_pages.clear()
        for alc in heap.allocators:
            alc.alloc_page = None
        return work

    def _compute_dead_roots(self, current: list[int]):
        """Two-pointer walk of the address-sorted previous and current snapshots."""
        heap = self.heap
        header = heap.header
        set_header = heap.set_header
        prev = self.prev_snapshot
        self.last_prev_snapshot = prev
        tt = self.track_touches
        enqueued = 0
        work = 0
        i = j = 0
        np, nc = len(prev), len(current)
        while i < np or j < nc:
            work += 1
            if j >= nc or (i < np and prev[i] < current[j]):
                addr = prev[i]
                i += 1
                h = header(addr) & ~FLAG_ROOTREF
                if h & RC_MASK == 0 and not h & FLAG_QUEUED:
                    h |= FLAG_QUEUED
                    self.worklist.append(addr)
                    enqueued += 1
                set_header(addr, h)
                if tt:
                    self.touched_old.add(addr)
            elif i >= np or current[j] < prev[i]:
                addr = current[j]
                j += 1
                set_header(addr, header(addr) | FLAG_ROOTREF)
            else:
                i += 1
                j += 1
        self.prev_snapshot = current
        return enqueued, work

    def _process_decrements(self, budget: int):
        """Release up to `budget` dead objects; the remainder carries over."""
        heap = self.heap
        header = heap.header
        set_header = heap.set_header
        read_word = heap.read_word
        wl = self.worklist
        listener = self.listener
        tt = self.track_touches
        released = 0
        work = 0
        while wl and released < budget:
            addr = wl.popleft()
            if tt:
                self.last_dequeued.append(addr)
                self.touched_old.add(addr)
            h = header(addr) & ~FLAG_QUEUED
            set_header(addr, h)
            if h & RC_MASK or h & FLAG_ROOTREF:
                continue  # resurrected by a new root or a new reference
            tid = (h >> TYPE_SHIFT) & 0xFFFF
            for off in heap.ref_offsets[tid]:
                t = read_word(addr, off)
                th = header(t)
                rc = th & RC_MASK
                if rc == 0:
                    raise InvariantViolation(f"rc underflow decrementing {t:#x}")
                th -= 1
                if rc == 1 and not th & FLAG_ROOTREF and not th & FLAG_QUEUED:
                    th |= FLAG_QUEUED
                    wl.append(t)
                set_header(t, th)
                work += 1  # rc decrement
                if tt:
                    self.touched_old.add(t)
            heap.release_slot(addr)
            released += 1
            work += 1
            if listener is not None:
                listener.on_release(addr)
        return released, work
