"""Heap core: reserved address range, page lifecycle, size-class allocators.

Memory model
------------
The heap simulates a contiguous reserved range starting at HEAP_BASE.  Pages
are committed lazily; a committed page owns a flat array of 64-bit words.
Objects are fixed-size slots within a page:

    slot = [ header word ][ field 0 ][ field 1 ] ...

and every page holds slots of exactly one size class.  The header word packs
a 32-bit reference count, a 16-bit type id, and the mark/old/rootref/
forwarded flags.  Page metadata (state, allocation bitmap, free-list, live
count, utilization bin) lives in a side table indexed by page number, which
keeps slot geometry uniform so conservative canonicalization is pure
arithmetic.

Free slots of a page are kept as a per-page stack of slot indexes in
descending order, so pops hand out ascending addresses (consecutive
allocations on a fresh page are adjacent).  This is the observable contract
of a null-terminated in-slot free-list without the word-level pointer
chasing, which Python cannot afford.

Page states:

    FREE            committed (or not) and empty; eligible for any class
    NURSERY_ACTIVE  the current allocation page of some allocator
    NURSERY_FULL    was an allocation page this epoch, free-list exhausted
    EVACUATION      receiving evacuated survivors during a collection
    OLD_PARTIAL     holds old objects and free slots; lives in a utilization bin
    OLD_FULL        holds old objects, no free slots

A page that served as an allocation page can simultaneously hold old objects
(promoted in earlier cycles) and young ones (allocated this epoch); the
`young_slots` list records which slots were handed out since the last
collection so the sweep never has to touch old-resident slots.
"""

from __future__ import annotations

import heapq
from array import array
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError, InvariantViolation, OutOfMemory
from .types import TypeRegistry, WORD_BYTES

HEAP_BASE = 0x1000_0000_0000  # well above any small-integer root word

# Object header layout (single word).
RC_MASK = (1 << 32) - 1
TYPE_SHIFT = 32
TYPE_MASK = 0xFFFF << TYPE_SHIFT
FLAG_MARK = 1 << 48
FLAG_OLD = 1 << 49
FLAG_ROOTREF = 1 << 50
FLAG_FORWARDED = 1 << 51


def header_type_id(header: int) -> int:
    return (header >> TYPE_SHIFT) & 0xFFFF


class PageState(Enum):
    FREE = "free"
    NURSERY_ACTIVE = "nursery-active"
    NURSERY_FULL = "nursery-full"
    EVACUATION = "evacuation"
    OLD_PARTIAL = "old-partial"
    OLD_FULL = "old-full"


@dataclass(frozen=True)
class HeapConfig:
    page_bytes: int = 4096
    nursery_threshold_bytes: int = 2 * 1024 * 1024
    word_bytes: int = WORD_BYTES
    heap_reserve_bytes: int = 64 * 1024 * 1024
    decrement_budget_factor: float = 1.5
    bin_width: float = 0.05

    def __post_init__(self) -> None:
        pb = self.page_bytes
        if pb <= 0 or pb & (pb - 1):
            raise ConfigError(f"page_bytes must be a power of two, got {pb}")
        if pb < 2 * WORD_BYTES:
            raise ConfigError("page_bytes smaller than the minimum slot")
        if self.word_bytes != WORD_BYTES:
            raise ConfigError("word_bytes is fixed at 8")
        if self.nursery_threshold_bytes <= 0 or self.nursery_threshold_bytes % pb:
            raise ConfigError("nursery_threshold_bytes must be a positive multiple of page_bytes")
        if self.heap_reserve_bytes <= 0:
            raise ConfigError("heap_reserve_bytes must be positive")
        if self.heap_reserve_bytes % pb:
            raise ConfigError("heap_reserve_bytes must be a multiple of page_bytes")
        if not self.decrement_budget_factor > 1:
            raise ConfigError("decrement_budget_factor must exceed 1")
        if not 0 < self.bin_width <= 1:
            raise ConfigError("bin_width must be in (0, 1]")


@dataclass(frozen=True)
class SizeClass:
    class_id: int
    slot_words: int
    slot_bytes: int
    slots_per_page: int


class PageMeta:
    __slots__ = (
        "index",
        "state",
        "class_id",
        "words",
        "alloc_bitmap",
        "free_list",
        "live_count",
        "bin",
        "young_slots",
    )

    def __init__(self, index: int) -> None:
        self.index = index
        self.state = PageState.FREE
        self.class_id: int | None = None
        self.words: array | None = None  # u64 backing store; None until committed
        self.alloc_bitmap = 0
        # descending slot indexes, so pop() hands out ascending addresses;
        # u16 storage keeps the side tables as compact as the pages
        self.free_list: array = array("H")
        self.live_count = 0
        self.bin = 0
        self.young_slots: array = array("H")  # slots handed out this epoch

    @property
    def committed(self) -> bool:
        return self.words is not None

    def __repr__(self) -> str:  # debugging aid only
        return (
            f"<page {self.index} {self.state.value} class={self.class_id} "
            f"live={self.live_count} free={len(self.free_list)}>"
        )


class Allocator:
    """Per-size-class allocation state (one active page, one evacuation page)."""

    __slots__ = ("size_class", "alloc_page", "evac_page", "allocs_since_gc", "bytes_since_gc")

    def __init__(self, size_class: SizeClass) -> None:
        self.size_class = size_class
        self.alloc_page: int | None = None
        self.evac_page: int | None = None
        self.allocs_since_gc = 0
        self.bytes_since_gc = 0


class Heap:
    """Owns the reserved range, the page table, and the size-class allocators.

    Collections are delegated through `collect_fn`, installed by the runtime
    wiring; the heap itself never inspects roots.
    """

    def __init__(self, config: HeapConfig) -> None:
        self.config = config
        self.base = HEAP_BASE
        self.page_shift = config.page_bytes.bit_length() - 1
        self.page_mask = config.page_bytes - 1
        self.page_words = config.page_bytes // WORD_BYTES
        self.n_pages = config.heap_reserve_bytes // config.page_bytes
        self.page_table = [PageMeta(i) for i in range(self.n_pages)]
        self.committed_pages = 0
        self.max_committed_bytes = 0
        self.free_pages: list[int] = []  # committed FREE pages, min-heap
        self.next_uncommitted = 0

        self.registry = TypeRegistry()
        self.size_classes: list[SizeClass] = []
        self.class_of_type: list[int] = []
        self.ref_offsets: list[tuple[int, ...]] = []  # per type: field word indexes
        self.allocators: list[Allocator] = []
        # bins[class_id][b] = set of OLD_PARTIAL page indexes with
        # floor(utilization / bin_width) == b
        self.bins: list[list[set[int]]] = []
        self.n_bins = int(1.0 / config.bin_width) + 1
        self.bin_boundary = int(0.5 / config.bin_width)  # bin whose range starts at 50%

        self.nursery_pages: list[int] = []  # pages that allocated this epoch
        self.allocs_since_gc = 0
        self.bytes_since_gc = 0
        self.collect_fn = None  # installed by runtime wiring
        # compact zeroed template: pages back onto real 8-byte words so the
        # simulation's cache footprint tracks the simulated heap's
        self._zero_page = bytes(config.page_bytes)

    # -- type registry ----------------------------------------------------

    def register_type(self, name: str, slot_count: int, ref_slots=()) -> int:
        return self.registry.register(name, slot_count, ref_slots)

    def freeze_types(self) -> None:
        """Close the world: build one size class per distinct object size."""
        reg = self.registry
        sizes = sorted({t.slot_words for t in reg.types})
        for sw in sizes:
            if sw * WORD_BYTES > self.config.page_bytes:
                raise ConfigError(f"object of {sw} words does not fit in a page")
        self.size_classes = [
            SizeClass(i, sw, sw * WORD_BYTES, self.config.page_bytes // (sw * WORD_BYTES))
            for i, sw in enumerate(sizes)
        ]
        by_words = {sc.slot_words: sc.class_id for sc in self.size_classes}
        self.class_of_type = [by_words[t.slot_words] for t in reg.types]
        self.ref_offsets = [tuple(1 + s for s in t.ref_slots) for t in reg.types]
        self.allocators = [Allocator(sc) for sc in self.size_classes]
        self.bins = [[set() for _ in range(self.n_bins)] for _ in self.size_classes]
        reg.freeze()

    # -- address arithmetic ------------------------------------------------

    def page_index_of(self, addr: int) -> int:
        return (addr - self.base) >> self.page_shift

    def addr_of(self, page_index: int, slot_index: int, slot_bytes: int) -> int:
        return self.base + (page_index << self.page_shift) + slot_index * slot_bytes

    def header(self, addr: int) -> int:
        off = addr - self.base
        meta = self.page_table[off >> self.page_shift]
        return meta.words[(off & self.page_mask) >> 3]

    def set_header(self, addr: int, header: int) -> None:
        off = addr - self.base
        meta = self.page_table[off >> self.page_shift]
        meta.words[(off & self.page_mask) >> 3] = header

    def read_word(self, addr: int, word_index: int) -> int:
        off = addr - self.base
        meta = self.page_table[off >> self.page_shift]
        return meta.words[((off & self.page_mask) >> 3) + word_index]

    def write_word(self, addr: int, word_index: int, value: int) -> None:
        off = addr - self.base
        meta = self.page_table[off >> self.page_shift]
        meta.words[((off & self.page_mask) >> 3) + word_index] = value

    def write_object(self, addr: int, type_id: int, values) -> None:
        """Stamp the type id and write all field words; the only field write."""
        off = addr - self.base
        meta = self.page_table[off >> self.page_shift]
        w = meta.words
        i = (off & self.page_mask) >> 3
        w[i] = type_id << TYPE_SHIFT
        for v in values:
            i += 1
            w[i] = v

    @property
    def committed_bytes(self) -> int:
        return self.committed_pages * self.config.page_bytes

    # -- conservative candidate validation ---------------------------------

    def validate_candidate(self, word: int) -> int | None:
        """Accept any bit pattern that lands in an allocated slot.

        Returns the slot's base (canonical) address, canonicalizing interior
        words, or None.  Purely arithmetic plus one bitmap probe.
        """
        off = word - self.base
        if off < 0 or off >= self.config.heap_reserve_bytes:
            return None
        pi = off >> self.page_shift
        meta = self.page_table[pi]
        if meta.words is None or meta.state is PageState.FREE:
            return None
        sc = self.size_classes[meta.class_id]
        slot = (off & self.page_mask) // sc.slot_bytes
        if slot >= sc.slots_per_page:
            return None  # tail waste past the last whole slot
        if not (meta.alloc_bitmap >> slot) & 1:
            return None
        return self.base + (pi << self.page_shift) + slot * sc.slot_bytes

    # -- page lifecycle ----------------------------------------------------

    def _commit(self, page_index: int) -> PageMeta:
        meta = self.page_table[page_index]
        meta.words = array("Q", self._zero_page)
        self.committed_pages += 1
        if self.committed_bytes > self.max_committed_bytes:
            self.max_committed_bytes = self.committed_bytes
        return meta

    def _take_free_page(self) -> PageMeta | None:
        if self.free_pages:
            return self.page_table[heapq.heappop(self.free_pages)]
        if self.next_uncommitted < self.n_pages:
            pi = self.next_uncommitted
            self.next_uncommitted += 1
            return self._commit(pi)
        return None

    def acquire_page(self, class_id: int, for_evac: bool = False) -> int | None:
        """Pick a page to allocate (or evacuate) into, preferring partial reuse.

        Priority: emptiest nonempty utilization bin at <= 50% utilization,
        then any OLD_PARTIAL page of the class, then a FREE page.  The
        returned page's free-list pops in ascending slot order.
        """
        bins = self.bins[class_id]
        sc = self.size_classes[class_id]
        meta = None
        for b in range(self.bin_boundary + 1):
            bucket = bins[b]
            if not bucket:
                continue
            if b == self.bin_boundary:
                # boundary bin straddles 50%; keep only pages at or below it
                table = self.page_table
                elig = [p for p in bucket if 2 * table[p].live_count <= sc.slots_per_page]
                if not elig:
                    continue
                meta = self.page_table[min(elig)]
            else:
                meta = self.page_table[min(bucket)]
            break
        if meta is None:
            for bucket in bins:
                if bucket:
                    meta = self.page_table[min(bucket)]
                    break
        if meta is not None:
            bins[meta.bin].discard(meta.index)
            # restore ascending pops after out-of-order releases
            meta.free_list = array("H", sorted(meta.free_list, reverse=True))
        else:
            meta = self._take_free_page()
            if meta is None:
                return None
            if meta.class_id != class_id or len(meta.free_list) != sc.slots_per_page:
                meta.class_id = class_id
                meta.free_list = array("H", range(sc.slots_per_page - 1, -1, -1))
            if meta.alloc_bitmap:
                raise InvariantViolation(f"free page {meta.index} has allocated slots")
        meta.state = PageState.EVACUATION if for_evac else PageState.NURSERY_ACTIVE
        if not for_evac:
            self.nursery_pages.append(meta.index)
        return meta.index

    def retire_page(self, meta: PageMeta) -> None:
        """Move a page out of active/evacuation duty into the old space."""
        if meta.free_list:
            meta.state = PageState.OLD_PARTIAL
            self._rebin(meta)
        else:
            meta.state = PageState.OLD_FULL

    def _rebin(self, meta: PageMeta) -> None:
        sc = self.size_classes[meta.class_id]
        b = int((meta.live_count / sc.slots_per_page) / self.config.bin_width)
        if b >= self.n_bins:
            b = self.n_bins - 1
        if meta.state is PageState.OLD_PARTIAL:
            bins = self.bins[meta.class_id]
            if meta.bin != b or meta.index not in bins[b]:
                bins[meta.bin].discard(meta.index)
                bins[b].add(meta.index)
        meta.bin = b

    def make_page_free(self, meta: PageMeta) -> None:
        """Return an emptied page to the FREE pool, fully rethreaded."""
        if meta.alloc_bitmap:
            raise InvariantViolation(f"page {meta.index} freed with live bitmap")
        if meta.state is PageState.OLD_PARTIAL:
            self.bins[meta.class_id][meta.bin].discard(meta.index)
        sc = self.size_classes[meta.class_id]
        meta.free_list = array("H", range(sc.slots_per_page - 1, -1, -1))
        meta.state = PageState.FREE
        meta.live_count = 0
        meta.bin = 0
        heapq.heappush(self.free_pages, meta.index)

    # -- allocation ----------------------------------------------------------

    def alloc_fast(self, class_id: int) -> int | None:
        """Pop the free-list head of the active page; None signals a miss."""
        alc = self.allocators[class_id]
        pi = alc.alloc_page
        if pi is None:
            return None
        meta = self.page_table[pi]
        fl = meta.free_list
        if not fl:
            return None
        slot = fl.pop()
        meta.alloc_bitmap |= 1 << slot
        meta.young_slots.append(slot)
        sc = alc.size_class
        meta.words[slot * sc.slot_words] = 0  # young, unmarked, rc 0
        alc.allocs_since_gc += 1
        alc.bytes_since_gc += sc.slot_bytes
        self.allocs_since_gc += 1
        self.bytes_since_gc += sc.slot_bytes
        return self.base + (pi << self.page_shift) + slot * sc.slot_bytes

    def alloc_slow(self, class_id: int) -> int:
        """Collection trigger plus page acquisition; raises OutOfMemory last."""
        alc = self.allocators[class_id]
        if alc.alloc_page is not None:
            meta = self.page_table[alc.alloc_page]
            if not meta.free_list:
                meta.state = PageState.NURSERY_FULL
                alc.alloc_page = None

        collected = False
        if self.bytes_since_gc >= self.config.nursery_threshold_bytes and self.collect_fn:
            self.collect_fn()
            collected = True
            addr = self.alloc_fast(class_id)
            if addr is not None:
                return addr

        pi = self.acquire_page(class_id)
        if pi is None and not collected and self.collect_fn:
            self.collect_fn()
            pi = self.acquire_page(class_id)
        if pi is None:
            raise OutOfMemory(
                f"class {class_id}: reserve exhausted "
                f"({self.committed_bytes} committed of {self.config.heap_reserve_bytes})"
            )
        alc.alloc_page = pi
        addr = self.alloc_fast(class_id)
        if addr is None:
            raise InvariantViolation("freshly acquired page yielded no slot")
        return addr

    def alloc(self, class_id: int) -> int:
        addr = self.alloc_fast(class_id)
        if addr is not None:
            return addr
        return self.alloc_slow(class_id)

    # -- release (decrement worklist support) --------------------------------

    def release_slot(self, addr: int) -> None:
        """Return one old slot to its page free-list; updates live count/bin."""
        off = addr - self.base
        pi = off >> self.page_shift
        meta = self.page_table[pi]
        sc = self.size_classes[meta.class_id]
        slot = (off & self.page_mask) // sc.slot_bytes
        bit = 1 << slot
        if not meta.alloc_bitmap & bit:
            raise InvariantViolation(f"double release at {addr:#x}")
        if meta.state not in (PageState.OLD_PARTIAL, PageState.OLD_FULL):
            raise InvariantViolation(f"release on {meta.state.value} page {pi}")
        meta.alloc_bitmap &= ~bit
        meta.free_list.append(slot)
        meta.live_count -= 1
        if meta.live_count < 0:
            raise InvariantViolation(f"negative live count on page {pi}")
        if meta.live_count == 0:
            self.make_page_free(meta)
            return
        if meta.state is PageState.OLD_FULL:
            meta.state = PageState.OLD_PARTIAL
        self._rebin(meta)

    # -- inspection (used by the oracle and tests, not by hot paths) ---------

    def iter_pages(self):
        for meta in self.page_table:
            if meta.words is not None:
                yield meta

    def iter_allocated(self):
        """Yield (addr, header) for every allocated slot on committed pages."""
        base = self.base
        shift = self.page_shift
        for meta in self.iter_pages():
            bm = meta.alloc_bitmap
            if not bm or meta.class_id is None:
                continue
            sc = self.size_classes[meta.class_id]
            page_addr = base + (meta.index << shift)
            slot = 0
            while bm:
                if bm & 1:
                    addr = page_addr + slot * sc.slot_bytes
                    yield addr, meta.words[slot * sc.slot_words]
                bm >>= 1
                slot += 1

    def refs_of(self, addr: int) -> list[int]:
        """Child addresses held in the ref slots of the object at addr."""
        h = self.header(addr)
        out = []
        for off in self.ref_offsets[header_type_id(h)]:
            out.append(self.read_word(addr, off))
        return out


def reserve_heap(config: HeapConfig) -> Heap:
    """Reserve the address range and initialize the page table (all FREE)."""
    return Heap(config)
