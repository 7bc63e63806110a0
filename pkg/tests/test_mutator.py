import pytest

from catalpa import ContractViolation, HeapConfig, new_runtime
from catalpa.heap import FLAG_OLD, FLAG_ROOTREF, RC_MASK
from catalpa.oracle import ShadowGraph

from conftest import MIB, small_config


# -- type registration --------------------------------------------------------


def test_register_temp_range_shape():
    mut = new_runtime(small_config())
    tid = mut.register_type("TempRange", 2, ())
    assert tid == 0
    assert mut.heap.registry[tid].slot_bytes == 24


def test_register_pair_with_two_ref_slots():
    mut = new_runtime(small_config())
    tid = mut.register_type("Pair", 2, (0, 1))
    assert mut.heap.registry[tid].ref_slots == (0, 1)


def test_register_after_freeze_rejected():
    mut = new_runtime(small_config())
    mut.register_type("leaf", 2, ())
    mut.freeze_types()
    with pytest.raises(ContractViolation):
        mut.register_type("late", 1, ())


def test_ref_mask_out_of_range_rejected():
    mut = new_runtime(small_config())
    with pytest.raises(ContractViolation):
        mut.register_type("bad", 2, (2,))


def test_zero_slot_type_still_evacuable(runtime):
    # zero-field objects pad to one word so a forwarding address fits
    mut = new_runtime(small_config())
    tid = mut.register_type("unit", 0, ())
    mut.freeze_types()
    assert mut.heap.registry[tid].slot_bytes == 16


# -- construct ------------------------------------------------------------------


def test_construct_parent_holds_child_address(runtime):
    leaf = runtime.construct(0, [5, 6])
    parent = runtime.construct(1, [leaf, leaf])
    assert runtime.read_field(parent, 0).addr == leaf.addr
    assert runtime.read_field(parent, 1).addr == leaf.addr


def test_construct_contract_errors(runtime):
    leaf = runtime.construct(0, [5, 6])
    with pytest.raises(ContractViolation):
        runtime.construct(1, [7, leaf])  # raw word in a ref slot
    with pytest.raises(ContractViolation):
        runtime.construct(0, [leaf, 6])  # ref in a raw slot
    with pytest.raises(ContractViolation):
        runtime.construct(0, [1, 2, 3])  # arity
    with pytest.raises(ContractViolation):
        runtime.construct(99, [])  # unknown type


def test_construct_before_freeze_rejected():
    mut = new_runtime(small_config())
    tid = mut.register_type("leaf", 2, ())
    with pytest.raises(ContractViolation):
        mut.construct(tid, [1, 2])


def test_chain_of_1e5_three_slot_nodes_triggers_collection():
    # 1e5 * 32 bytes = 3.2 MB > 2 MB nursery, so at least one collection
    mut = new_runtime(HeapConfig(heap_reserve_bytes=16 * MIB))
    t_leaf = mut.register_type("leaf", 2, ())
    t_node = mut.register_type("node3", 3, (0,))
    mut.freeze_types()
    acc = mut.construct(t_leaf, [0, 0])
    mut.set_global(0, acc)
    for i in range(100_000):
        acc = mut.construct(t_node, [acc, i, i])
        mut.set_global(0, acc)
    assert len(mut.collector.records) >= 1


# -- read_field -------------------------------------------------------------------


def test_read_raw_field_round_trip(runtime):
    leaf = runtime.construct(0, [7, 2**63])
    assert runtime.read_field(leaf, 0) == 7
    assert runtime.read_field(leaf, 1) == 2**63


def test_read_out_of_range_slot(runtime):
    leaf = runtime.construct(0, [7, 8])
    with pytest.raises(ContractViolation):
        runtime.read_field(leaf, 2)


def test_read_ref_after_evacuation_returns_new_address():
    oracle = ShadowGraph()
    mut = new_runtime(small_config(), listener=oracle)
    t_leaf = mut.register_type("leaf", 2, ())
    t_pair = mut.register_type("pair", 2, (0, 1))
    mut.freeze_types()
    child = mut.construct(t_leaf, [11, 12])
    parent = mut.construct(t_pair, [child, child])
    mut.root_push([parent])
    rec = mut.collector.collect()
    assert rec.evacuated == 1  # the child moved, the rooted parent did not
    moved = mut.read_field(parent, 0)
    assert moved.addr != child.addr
    # the oracle's address map tracked the move to the same logical node
    assert oracle.node_at[moved.addr] == 0
    assert mut.read_field(moved, 0) == 11


# -- roots ---------------------------------------------------------------------


def test_root_lifo_discipline(runtime):
    t1 = runtime.root_push([1, 2])
    t2 = runtime.root_push([3])
    with pytest.raises(ContractViolation):
        runtime.root_pop(t1)
    runtime.root_pop(t2)
    runtime.root_pop(t1)
    with pytest.raises(ContractViolation):
        runtime.root_pop(t1)


def test_root_overflow(runtime):
    with pytest.raises(ContractViolation):
        runtime.root_push(list(range(100_000)))


def test_rooted_ref_survives_collection(runtime):
    a = runtime.construct(0, [1, 2])
    runtime.root_push([a])
    runtime.collector.collect()
    h = runtime.heap.header(a.addr)
    assert h & FLAG_OLD and h & FLAG_ROOTREF
    assert runtime.read_field(a, 0) == 1


def test_raw_integer_root_does_not_retain(runtime):
    a = runtime.construct(0, [1, 2])
    runtime.root_push([42])
    rec = runtime.collector.collect()
    assert rec.marked == 0
    assert runtime.heap.validate_candidate(a.addr) is None  # reclaimed


def test_interior_root_retains_and_promotes_in_place(runtime):
    a = runtime.construct(0, [1, 2])
    runtime.root_push([a.addr + 8])  # interior word only
    rec = runtime.collector.collect()
    assert rec.promoted_in_place == 1
    assert runtime.heap.validate_candidate(a.addr) == a.addr
    assert runtime.heap.header(a.addr) & FLAG_OLD


def test_colliding_word_spuriously_retains(runtime):
    # the conservative contract: an integer equal to a live slot address keeps it
    a = runtime.construct(0, [1, 2])
    runtime.root_push([int(a.addr)])
    rec = runtime.collector.collect()
    assert rec.promoted_in_place == 1


def test_globals_scanned_without_stack_discipline(runtime):
    a = runtime.construct(0, [9, 9])
    runtime.set_global(7, a)
    runtime.collector.collect()
    assert runtime.heap.header(a.addr) & FLAG_OLD
    runtime.set_global(7, None)
    runtime.construct(0, [0, 0])
    rec = runtime.collector.collect()
    assert rec.released == 1  # dropped from globals, reclaimed by decrement


def test_immutability_observed_through_shadow():
    oracle = ShadowGraph()
    mut = new_runtime(small_config(), listener=oracle)
    t_leaf = mut.register_type("leaf", 2, ())
    t_node = mut.register_type("node3", 3, (0,))
    mut.freeze_types()
    leaf = mut.construct(t_leaf, [41, 43])
    node = mut.construct(t_node, [leaf, 5, 6])
    mut.root_push([node])
    for _ in range(3):
        mut.collector.collect()
        node_now = node  # rooted, address stable
        oracle.check_object(mut, node_now)
        oracle.check_object(mut, mut.read_field(node_now, 0))
    assert not oracle.violations


def test_construct_slow_path_pins_children():
    # force a collection inside the parent's construct: the children must be
    # pinned (promoted in place) and the parent's fields stay valid
    mut = new_runtime(small_config())
    t_leaf = mut.register_type("leaf", 2, ())
    t_pair = mut.register_type("pair", 2, (0, 1))
    mut.freeze_types()
    x = mut.construct(t_leaf, [77, 78])
    y = mut.construct(t_leaf, [79, 80])
    heap = mut.heap
    alc = heap.allocators[0]
    while heap.page_table[alc.alloc_page].free_list:
        mut.construct(t_leaf, [0, 0])  # exhaust the active page: fast path misses
    heap.bytes_since_gc = heap.config.nursery_threshold_bytes  # arm the trigger
    before = len(mut.collector.records)
    parent = mut.construct(t_pair, [x, y])  # collects inside
    assert len(mut.collector.records) == before + 1
    assert mut.heap.header(x.addr) & FLAG_OLD  # pinned in place by the frame
    assert mut.heap.header(x.addr) & RC_MASK == 0  # no increments until promotion
    assert mut.read_field(mut.read_field(parent, 0), 0) == 77
    assert mut.read_field(mut.read_field(parent, 1), 0) == 79
    # once the parent survives a collection, its references are counted
    mut.root_push([parent])
    mut.collector.collect()
    assert mut.heap.header(x.addr) & RC_MASK == 1
    assert mut.heap.header(y.addr) & RC_MASK == 1
