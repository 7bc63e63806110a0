"""Exception hierarchy shared by the heap, mutator, collector, and bench."""


class HeapError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(HeapError):
    """Invalid heap or benchmark configuration (fatal at setup time)."""


class ContractViolation(HeapError):
    """The embedding client broke an interface precondition."""


class OutOfMemory(HeapError):
    """True heap exhaustion: the reserve is spent and collection freed nothing.

    Recoverable by the caller; the heap instance remains usable for reads.
    """


class InvariantViolation(HeapError):
    """Internal consistency fault (collector or heap bug, or injected fault)."""
