"""Bump-allocation baseline: allocates continuously, never reclaims.

Shares the mutator interface and type registry of the main heap so a
workload drives byte-identical application work through either collector.
Backing store is one flat word array grown a page at a time, so peak
committed bytes equal total allocation rounded up to page granularity.
"""

from __future__ import annotations

from array import array

from .errors import OutOfMemory
from .heap import HEAP_BASE, HeapConfig, SizeClass, TYPE_SHIFT
from .types import TypeRegistry, WORD_BYTES


class EpsilonHeap:
    def __init__(self, config: HeapConfig) -> None:
        self.config = config
        self.base = HEAP_BASE
        self.page_words = config.page_bytes // WORD_BYTES
        self.registry = TypeRegistry()
        self.size_classes: list[SizeClass] = []
        self.class_of_type: list[int] = []
        self.ref_offsets: list[tuple[int, ...]] = []
        self.words = array("Q")
        self._zero_chunk = array("Q", bytes(config.page_bytes))
        self.cursor = 0  # next free word index
        self.allocs_total = 0
        self.bytes_total = 0
        self.collect_fn = None  # never installed; epsilon never collects

    def register_type(self, name: str, slot_count: int, ref_slots=()) -> int:
        return self.registry.register(name, slot_count, ref_slots)

    def freeze_types(self) -> None:
        reg = self.registry
        sizes = sorted({t.slot_words for t in reg.types})
        self.size_classes = [
            SizeClass(i, sw, sw * WORD_BYTES, self.config.page_bytes // (sw * WORD_BYTES))
            for i, sw in enumerate(sizes)
        ]
        by_words = {sc.slot_words: sc.class_id for sc in self.size_classes}
        self.class_of_type = [by_words[t.slot_words] for t in reg.types]
        self.ref_offsets = [tuple(1 + s for s in t.ref_slots) for t in reg.types]
        reg.freeze()

    # -- allocation: cursor bump, page-granular commit, no reclamation -------

    def alloc_fast(self, class_id: int) -> int:
        sc = self.size_classes[class_id]
        end = self.cursor + sc.slot_words
        words = self.words
        while end > len(words):
            if (len(words) + self.page_words) * WORD_BYTES > self.config.heap_reserve_bytes:
                raise OutOfMemory(
                    f"bump reserve exhausted at {len(words) * WORD_BYTES} bytes"
                )
            words.extend(self._zero_chunk)
        addr = self.base + self.cursor * WORD_BYTES
        words[self.cursor] = 0
        self.cursor = end
        self.allocs_total += 1
        self.bytes_total += sc.slot_bytes
        return addr

    def alloc(self, class_id: int) -> int:
        return self.alloc_fast(class_id)

    # -- word access ---------------------------------------------------------

    def header(self, addr: int) -> int:
        return self.words[(addr - self.base) >> 3]

    def read_word(self, addr: int, word_index: int) -> int:
        return self.words[((addr - self.base) >> 3) + word_index]

    def write_word(self, addr: int, word_index: int, value: int) -> None:
        self.words[((addr - self.base) >> 3) + word_index] = value

    def write_object(self, addr: int, type_id: int, values) -> None:
        w = self.words
        i = (addr - self.base) >> 3
        w[i] = type_id << TYPE_SHIFT
        for v in values:
            i += 1
            w[i] = v

    @property
    def committed_bytes(self) -> int:
        return len(self.words) * WORD_BYTES

    @property
    def max_committed_bytes(self) -> int:
        return self.committed_bytes  # never shrinks
