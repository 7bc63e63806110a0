import pytest

from catalpa import HeapConfig, OutOfMemory, new_runtime
from catalpa.bench import Workload, run_workload

from conftest import KIB, MIB, small_config


def epsilon_runtime(**kw):
    mut = new_runtime(small_config(**kw), collector="epsilon")
    mut.register_type("leaf", 2, ())
    mut.register_type("pair", 2, (0, 1))
    mut.freeze_types()
    return mut


def test_bump_addresses_are_contiguous():
    mut = epsilon_runtime()
    a = mut.construct(0, [1, 2])
    b = mut.construct(0, [3, 4])
    assert b.addr - a.addr == 24


def test_reads_and_refs_work_identically():
    mut = epsilon_runtime()
    leaf = mut.construct(0, [11, 12])
    pair = mut.construct(1, [leaf, leaf])
    assert mut.read_field(pair, 0).addr == leaf.addr
    assert mut.read_field(leaf, 1) == 12


def test_reserve_exhaustion():
    mut = epsilon_runtime(heap_reserve_bytes=16 * KIB)
    with pytest.raises(OutOfMemory):
        for i in range(16 * KIB // 24 + 2):
            mut.construct(0, [i, i])


def test_never_collects_and_pause_samples_empty():
    w = Workload("nbody", task_count=5, seed=1, target_task_ms=1.0)
    rep = run_workload(w, collector="epsilon", cfg=small_config(heap_reserve_bytes=32 * MIB))
    assert rep.collections == 0
    assert rep.pause_ns == []
    assert rep.survival_rate is None
    doc = rep.to_json_dict()
    assert doc["pause_ns"] is None
    assert doc["work_units"] is None


def test_peak_committed_is_allocation_rounded_to_pages():
    mut = epsilon_runtime()
    n = 1000
    for i in range(n):
        mut.construct(0, [i, i])
    total = n * 24
    pages = -(-total // 4096)  # ceil
    assert mut.heap.committed_bytes == pages * 4096


def test_roots_accepted_but_inert():
    mut = epsilon_runtime()
    a = mut.construct(0, [1, 2])
    tok = mut.root_push([a, 42])
    mut.root_pop(tok)
    assert mut.read_field(a, 0) == 1
