import pytest

from catalpa import HeapConfig, new_runtime

KIB = 1024
MIB = 1024 * 1024


def small_config(**kw) -> HeapConfig:
    defaults = dict(
        page_bytes=4096,
        nursery_threshold_bytes=64 * KIB,
        heap_reserve_bytes=8 * MIB,
    )
    defaults.update(kw)
    return HeapConfig(**defaults)


@pytest.fixture
def runtime():
    """A small runtime with the two workhorse types registered and frozen."""
    mut = new_runtime(small_config())
    mut.register_type("leaf", 2, ())        # 24 bytes
    mut.register_type("pair", 2, (0, 1))    # 24 bytes
    mut.register_type("node3", 3, (0,))     # 32 bytes
    mut.freeze_types()
    return mut
