"""Closed-world type registry.

Every object shape is declared up front: a slot count and a mask saying
which slots hold heap references.  The registry is append-only until it is
frozen, and it must be frozen before the first allocation so that every
allocation size (and therefore every size class) is known in advance.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ContractViolation

WORD_BYTES = 8

# A zero-field object still occupies one field word so that a forwarding
# address always fits in the first slot of an evacuated husk.
def slot_words_for(slot_count: int) -> int:
    return 1 + max(1, slot_count)


@dataclass(frozen=True)
class TypeDescriptor:
    type_id: int
    name: str
    slot_count: int
    ref_slots: tuple[int, ...]  # ascending slot indexes that hold references

    @property
    def slot_words(self) -> int:
        return slot_words_for(self.slot_count)

    @property
    def slot_bytes(self) -> int:
        return self.slot_words * WORD_BYTES


class TypeRegistry:
    """Dense, append-only table of TypeDescriptors; frozen before use."""

    def __init__(self) -> None:
        self.types: list[TypeDescriptor] = []
        self.frozen = False

    def register(self, name: str, slot_count: int, ref_slots=()) -> int:
        if self.frozen:
            raise ContractViolation("type registration after freeze")
        if slot_count < 0:
            raise ContractViolation("negative slot_count")
        refs = tuple(sorted(set(int(i) for i in ref_slots)))
        if refs and (refs[0] < 0 or refs[-1] >= slot_count):
            raise ContractViolation(
                f"ref slot out of range for {name!r}: {refs} vs slot_count {slot_count}"
            )
        tid = len(self.types)
        if tid >= 1 << 16:
            raise ContractViolation("type id space exhausted (16 bits)")
        self.types.append(TypeDescriptor(tid, name, slot_count, refs))
        return tid

    def freeze(self) -> None:
        self.frozen = True

    def __len__(self) -> int:
        return len(self.types)

    def __getitem__(self, type_id: int) -> TypeDescriptor:
        return self.types[type_id]
