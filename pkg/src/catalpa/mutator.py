"""Embeddable mutator interface: typed construction, field reads, root frames.

The native call stack and registers are replaced by an explicit root region
the collector scans conservatively: any bit pattern may sit in a root word,
and words that happen to land in allocated slots retain their objects.
Frame tokens enforce LIFO discipline so consecutive collections can diff
their root sets meaningfully.

Objects are immutable: `construct` performs the only field writes in the
system, and children must already exist, so the reference graph is a DAG by
construction.
"""

from __future__ import annotations

from .errors import ContractViolation
from .heap import header_type_id

U64 = (1 << 64) - 1


class ObjectRef:
    """Typed handle to a heap object; created on every reference read, so it
    stays a bare two-slot value object."""

    __slots__ = ("addr", "type_id")

    def __init__(self, addr: int, type_id: int) -> None:
        self.addr = addr
        self.type_id = type_id

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ObjectRef)
            and self.addr == other.addr
            and self.type_id == other.type_id
        )

    def __hash__(self) -> int:
        return hash((self.addr, self.type_id))

    def __repr__(self) -> str:
        return f"ObjectRef({self.addr:#x}, type={self.type_id})"


class RootRegion:
    """Fixed-capacity array of word-sized values; words above `top` are dead."""

    __slots__ = ("words", "top")

    def __init__(self, capacity: int) -> None:
        self.words = [0] * capacity
        self.top = 0


class Mutator:
    def __init__(self, heap, stack_words: int = 4096, global_words: int = 256, listener=None):
        self.heap = heap
        self.stack = RootRegion(stack_words)
        self.globals = [0] * global_words
        self.frames: list[tuple[int, int, int]] = []  # (start, count, token)
        self._next_token = 1
        self.listener = listener
        self.collector = None  # set by runtime wiring when a collector exists

    # -- types ---------------------------------------------------------------

    def register_type(self, name: str, slot_count: int, ref_slots=()) -> int:
        return self.heap.register_type(name, slot_count, ref_slots)

    def freeze_types(self) -> None:
        self.heap.freeze_types()

    # -- construction and reads ------------------------------------------------

    def construct(self, type_id: int, fields) -> ObjectRef:
        heap = self.heap
        reg = heap.registry
        if not reg.frozen:
            raise ContractViolation("construct before the type registry is frozen")
        if type_id < 0 or type_id >= len(reg):
            raise ContractViolation(f"unknown type id {type_id}")
        td = reg[type_id]
        if len(fields) != td.slot_count:
            raise ContractViolation(
                f"{td.name}: {len(fields)} fields for {td.slot_count} slots"
            )
        ref_slots = td.ref_slots
        words = []
        refs = []
        for i, v in enumerate(fields):
            if isinstance(v, ObjectRef):
                if i not in ref_slots:
                    raise ContractViolation(f"{td.name}: slot {i} is not a reference slot")
                words.append(v.addr)
                refs.append(v)
            else:
                if i in ref_slots:
                    raise ContractViolation(f"{td.name}: slot {i} requires an ObjectRef")
                words.append(int(v) & U64)

        class_id = heap.class_of_type[type_id]
        addr = heap.alloc_fast(class_id)
        if addr is None:
            # The slow path may run a collection.  Pin the children in a
            # transient root frame: root-referenced young objects are
            # promoted in place, so every address in `words` stays valid.
            if refs:
                token = self.root_push(refs)
                addr = heap.alloc_slow(class_id)
                self.root_pop(token)
            else:
                addr = heap.alloc_slow(class_id)

        heap.write_object(addr, type_id, words)
        if self.listener is not None:
            self.listener.on_construct(addr, type_id, fields)
        return ObjectRef(addr, type_id)

    def read_field(self, ref: ObjectRef, slot: int):
        heap = self.heap
        td = heap.registry[ref.type_id]
        if slot < 0 or slot >= td.slot_count:
            raise ContractViolation(f"{td.name}: slot {slot} out of range")
        value = heap.read_word(ref.addr, 1 + slot)
        if slot in td.ref_slots:
            return ObjectRef(value, header_type_id(heap.header(value)))
        return value

    # -- roots -------------------------------------------------------------

    def root_push(self, values) -> int:
        stack = self.stack
        n = len(values)
        if stack.top + n > len(stack.words):
            raise ContractViolation("root region overflow")
        start = stack.top
        for i, v in enumerate(values):
            stack.words[start + i] = v.addr if isinstance(v, ObjectRef) else int(v) & U64
        stack.top = start + n
        token = self._next_token
        self._next_token += 1
        self.frames.append((start, n, token))
        if self.listener is not None:
            self.listener.on_root_push(list(values))
        return token

    def root_pop(self, token: int) -> None:
        if not self.frames:
            raise ContractViolation("root_pop on empty frame stack")
        start, n, top_token = self.frames[-1]
        if top_token != token:
            raise ContractViolation(f"non-LIFO root_pop: expected {top_token}, got {token}")
        self.frames.pop()
        self.stack.top = start
        if self.listener is not None:
            self.listener.on_root_pop()

    def set_global(self, index: int, value) -> None:
        """Globals have no stack discipline; None clears the slot."""
        if index < 0 or index >= len(self.globals):
            raise ContractViolation(f"global index {index} out of range")
        if value is None:
            self.globals[index] = 0
        else:
            self.globals[index] = value.addr if isinstance(value, ObjectRef) else int(value) & U64
        if self.listener is not None:
            self.listener.on_global_set(index, value)

    def root_words(self):
        """Every scannable root word: live stack words then the global region."""
        yield from self.stack.words[: self.stack.top]
        yield from self.globals
