"""catalpa: hybrid generational memory management, embeddable and verifiable.

A copying/promoting nursery feeds a reference-counted old space; conservative
root scanning makes promotion-in-place necessary and write barriers
unnecessary.  See README.md for the full design.
"""

from .collector import CollectionRecord, Collector
from .epsilon import EpsilonHeap
from .errors import (
    ConfigError,
    ContractViolation,
    HeapError,
    InvariantViolation,
    OutOfMemory,
)
from .heap import Heap, HeapConfig, PageState, reserve_heap
from .mutator import Mutator, ObjectRef

__version__ = "0.1.0"

COLLECTOR_KINDS = ("catalpa", "epsilon")


def new_runtime(
    config: HeapConfig | None = None,
    collector: str = "catalpa",
    listener=None,
    stack_words: int = 4096,
    global_words: int = 256,
    trace: bool = False,
    track_touches: bool = False,
) -> Mutator:
    """Wire a heap, mutator, and (unless epsilon) collector together.

    Returns the mutator; its `.heap` and `.collector` attributes expose the
    rest.  Distinct runtimes are fully independent.
    """
    if config is None:
        config = HeapConfig()
    if collector == "catalpa":
        heap = reserve_heap(config)
        mut = Mutator(heap, stack_words, global_words, listener)
        col = Collector(heap, mut, listener=listener, trace=trace, track_touches=track_touches)
        heap.collect_fn = col.collect
        mut.collector = col
        return mut
    if collector == "epsilon":
        heap = EpsilonHeap(config)
        return Mutator(heap, stack_words, global_words, listener)
    raise ConfigError(f"unknown collector {collector!r}; expected one of {COLLECTOR_KINDS}")


__all__ = [
    "CollectionRecord",
    "Collector",
    "ConfigError",
    "ContractViolation",
    "EpsilonHeap",
    "Heap",
    "HeapConfig",
    "HeapError",
    "InvariantViolation",
    "Mutator",
    "ObjectRef",
    "OutOfMemory",
    "PageState",
    "new_runtime",
    "reserve_heap",
    "COLLECTOR_KINDS",
]
