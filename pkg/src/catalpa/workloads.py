"""Deterministic workload kernels driving the mutator interface.

Each kernel is an allocation-profile analogue, not a port: what matters for
the memory subsystem is the churn rate, survivor volume, and old-space decay
pattern, so the kernels target those shapes:

    nbody      high-churn small tuples, a tiny rooted simulation state that
               is replaced wholesale every step (survival well under 1%)
    raytracer  short-lived small tree fragments built, walked, and dropped
               within one op
    db         rotating record chains rooted in globals: a long-lived index
               that grows the old space and feeds decrement cascades when a
               chain is dropped
    stress     seeded random DAG builder/dropper with conservative-root
               noise; the oracle's differential-testing driver
    server     a seeded random mix of the three core kinds

Given the same seed and heap config, every kernel produces an identical
allocation sequence, so collection counts and work_units traces are
bit-reproducible.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from . import new_runtime
from .heap import HeapConfig
from .mutator import Mutator, ObjectRef
from .oracle import ShadowGraph

CORE_KINDS = ("nbody", "raytracer", "db")
KINDS = CORE_KINDS + ("server", "stress")

SCHEMA = (
    ("leaf2", 2, ()),
    ("vec3", 3, ()),
    ("pair", 2, (0, 1)),
    ("node3", 3, (0,)),
    ("body", 3, (0, 1)),
    ("bvh", 3, (0, 1)),
    ("rec", 4, (0,)),
    ("wide", 5, (0, 1, 2)),
)


def register_schema(mut: Mutator) -> dict[str, int]:
    tids = {name: mut.register_type(name, n, refs) for name, n, refs in SCHEMA}
    mut.freeze_types()
    return tids


# Global-region slot assignments (globals have no stack discipline, which the
# long-lived kernel state needs).
NBODY_SLOTS = range(0, 24)
DB_SLOTS = range(32, 40)
CHAIN_SLOT = 63  # used by the live-heap builder


class NBodyKernel:
    """Replaces the whole body array every step; nothing old accumulates."""

    N_BODIES = 24

    def __init__(self, mut: Mutator, tids, rng: random.Random):
        self.mut = mut
        self.t_vec = tids["vec3"]
        self.t_body = tids["body"]
        self.step = 0
        for i in range(self.N_BODIES):
            pos = mut.construct(self.t_vec, [i * 31, i * 17, i * 7])
            tok = mut.root_push([pos])
            vel = mut.construct(self.t_vec, [1, 2, 3])
            body = mut.construct(self.t_body, [pos, vel, 1000 + i])
            mut.root_pop(tok)
            mut.set_global(NBODY_SLOTS[i], body)

    def run_ops(self, n: int) -> None:
        mut = self.mut
        read = mut.read_field
        for _ in range(n):
            i = self.step % self.N_BODIES
            j = (self.step * 7 + 1) % self.N_BODIES
            self.step += 1
            body = ObjectRef(mut.globals[NBODY_SLOTS[i]], self.t_body)
            other = ObjectRef(mut.globals[NBODY_SLOTS[j]], self.t_body)
            pos, vel = read(body, 0), read(body, 1)
            opos = read(other, 0)
            px, py, pz = read(pos, 0), read(pos, 1), read(pos, 2)
            vx, vy, vz = read(vel, 0), read(vel, 1), read(vel, 2)
            dx = (read(opos, 0) - px) % 1009
            nvel = mut.construct(self.t_vec, [(vx + dx) % 4096, (vy + 1) % 4096, vz])
            # nvel must be rooted across the next construct, which may collect
            tok = mut.root_push([nvel])
            npos = mut.construct(
                self.t_vec, [(px + vx) % 65536, (py + vy) % 65536, (pz + vz) % 65536]
            )
            mut.root_pop(tok)
            nbody = mut.construct(self.t_body, [npos, nvel, read(body, 2)])
            mut.set_global(NBODY_SLOTS[i], nbody)


class RaytracerKernel:
    """Builds a two-level scene fragment per op, traces it, drops it."""

    def __init__(self, mut: Mutator, tids, rng: random.Random):
        self.mut = mut
        self.rng = rng
        self.t_hit = tids["leaf2"]
        self.t_bvh = tids["bvh"]

    def run_ops(self, n: int) -> None:
        # Intermediates are rooted across constructs: any construct can run a
        # collection, and unrooted young references do not survive one.
        mut = self.mut
        rng = self.rng
        t_hit, t_bvh = self.t_hit, self.t_bvh
        for _ in range(n):
            g = rng.getrandbits(24)
            h0 = mut.construct(t_hit, [g, g ^ 1])
            t0 = mut.root_push([h0])
            h1 = mut.construct(t_hit, [g + 1, g ^ 2])
            node = mut.construct(t_bvh, [h0, h1, g & 0xFF])
            mut.root_pop(t0)
            token = mut.root_push([node])
            leaf = mut.read_field(node, g & 1)
            mut.read_field(leaf, 0)
            mut.read_field(leaf, 1)
            mut.root_pop(token)


class DbKernel:
    """Rotating record chains: bounded live index, cascading drops."""

    N_CHAINS = 6
    CHAIN_CAP = 200

    def __init__(self, mut: Mutator, tids, rng: random.Random):
        self.mut = mut
        self.rng = rng
        self.t_rec = tids["rec"]
        self.t_leaf = tids["leaf2"]
        self.heads: list[ObjectRef] = []
        self.lengths = [0] * self.N_CHAINS
        self.count = 0
        for c in range(self.N_CHAINS):
            sentinel = mut.construct(self.t_leaf, [c, 0])
            mut.set_global(DB_SLOTS[c], sentinel)
            self.heads.append(sentinel)

    def run_ops(self, n: int) -> None:
        mut = self.mut
        rng = self.rng
        read = mut.read_field
        for _ in range(n):
            c = rng.randrange(self.N_CHAINS)
            key = rng.getrandbits(32)
            rec = mut.construct(self.t_rec, [self.heads[c], key, key ^ c, self.count])
            # Rooting through the global keeps the head's address stable, so
            # the cached ObjectRef stays valid across collections.
            mut.set_global(DB_SLOTS[c], rec)
            self.heads[c] = rec
            self.lengths[c] += 1
            self.count += 1
            if self.lengths[c] >= self.CHAIN_CAP:
                # Drop the whole chain; once old, it dies by decrement cascade.
                sentinel = mut.construct(self.t_leaf, [c, self.count])
                mut.set_global(DB_SLOTS[c], sentinel)
                self.heads[c] = sentinel
                self.lengths[c] = 0
            else:
                cur = self.heads[c]
                for _ in range(min(self.lengths[c] - 1, 3)):
                    read(cur, 1)
                    cur = read(cur, 0)


class StressKernel:
    """Random DAG builder/dropper; every held reference is rooted.

    New objects are rooted immediately (frame push), children are sampled
    only from rooted references, and raw root noise stays below the heap
    base so it can never collide with a real slot.  Interior words derived
    from rooted refs exercise canonicalization without changing liveness.
    """

    MAX_FRAMES = 48

    def __init__(self, mut: Mutator, tids, rng: random.Random, oracle: ShadowGraph | None = None):
        self.mut = mut
        self.rng = rng
        self.oracle = oracle
        self.tids = tids
        self.type_pool = [
            (tids["leaf2"], 0),
            (tids["vec3"], 0),
            (tids["pair"], 2),
            (tids["node3"], 1),
            (tids["rec"], 1),
            (tids["wide"], 3),
        ]
        self.frames: list[tuple[int, list[ObjectRef]]] = []
        self.global_slots: dict[int, ObjectRef] = {}
        self.constructed = 0

    def _visible(self) -> list[ObjectRef]:
        out = []
        for _, refs in self.frames[-8:]:
            out.extend(refs)
        out.extend(self.global_slots.values())
        return out

    def _construct_one(self) -> None:
        mut, rng = self.mut, self.rng
        visible = self._visible()
        tid, n_refs = rng.choice(self.type_pool)
        if n_refs and not visible:
            tid, n_refs = self.tids["leaf2"], 0
        td = mut.heap.registry[tid]
        fields = []
        for slot in range(td.slot_count):
            if slot in td.ref_slots:
                fields.append(rng.choice(visible))
            else:
                fields.append(rng.getrandbits(16))
        obj = mut.construct(tid, fields)
        self.constructed += 1
        # Root it at once: an unrooted reference would be invalidated by the
        # next collection.
        extras: list = [obj]
        if visible and rng.random() < 0.3:
            extras.append(rng.choice(visible))
        words: list = list(extras)
        if rng.random() < 0.25:
            words.append(rng.getrandbits(31))  # raw noise, below the heap base
        if rng.random() < 0.15:
            pick = rng.choice(extras)
            words.append(pick.addr + 8 * rng.randrange(1, 3))  # interior pointer
        token = mut.root_push(words)
        self.frames.append((token, extras))

    def _pop_one(self) -> None:
        if self.frames:
            token, _ = self.frames.pop()
            self.mut.root_pop(token)

    def run_ops(self, n: int) -> None:
        rng = self.rng
        for _ in range(n):
            r = rng.random()
            if len(self.frames) >= self.MAX_FRAMES:
                self._pop_one()
            elif r < 0.52 or not self.frames:
                self._construct_one()
            elif r < 0.70:
                self._pop_one()
            elif r < 0.80:
                slot = rng.randrange(16)
                visible = self._visible()
                if visible and rng.random() < 0.75:
                    ref = rng.choice(visible)
                    self.mut.set_global(slot, ref)
                    self.global_slots[slot] = ref
                else:
                    self.mut.set_global(slot, None)
                    self.global_slots.pop(slot, None)
            elif r < 0.92 and self.oracle is not None:
                visible = self._visible()
                if visible:
                    self.oracle.check_object(self.mut, rng.choice(visible))
            else:
                self._construct_one()

    def drain(self) -> None:
        """Drop every root, then alternate small bursts with collections
        until the decrement backlog clears."""
        while self.frames:
            self._pop_one()
        for slot in list(self.global_slots):
            self.mut.set_global(slot, None)
        self.global_slots.clear()
        collector = self.mut.collector
        t_leaf = self.tids["leaf2"]
        for _ in range(200):
            for i in range(200):
                self.mut.construct(t_leaf, [i, i])
            rec = collector.collect()
            if rec.deferred_backlog == 0 and not collector.worklist:
                break


def make_kernel(kind: str, mut: Mutator, tids, rng: random.Random, oracle=None):
    if kind == "nbody":
        return NBodyKernel(mut, tids, rng)
    if kind == "raytracer":
        return RaytracerKernel(mut, tids, rng)
    if kind == "db":
        return DbKernel(mut, tids, rng)
    if kind == "stress":
        return StressKernel(mut, tids, rng, oracle)
    raise ValueError(f"no kernel for kind {kind!r}")


# -- stress + oracle entry point (the `verify` command) ------------------------


@dataclass
class StressOutcome:
    seed: int
    nodes: int
    collections: int
    constructed: int
    released: int
    effectiveness_violations: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and not self.effectiveness_violations

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "nodes": self.nodes,
            "collections": self.collections,
            "constructed": self.constructed,
            "released": self.released,
            "effectiveness_violations": self.effectiveness_violations,
            "ok": self.ok,
            "violations": self.violations,
        }


def run_stress(
    seed: int,
    nodes: int,
    nursery_bytes: int | None = None,
    strict: bool = True,
    check_heap: bool = True,
) -> StressOutcome:
    """One seeded stress run under full oracle supervision."""
    rng = random.Random(seed)
    if nursery_bytes is None:
        nursery_bytes = rng.choice([32, 64, 128]) * 1024
    cfg = HeapConfig(
        nursery_threshold_bytes=nursery_bytes,
        heap_reserve_bytes=32 * 1024 * 1024,
    )
    oracle = ShadowGraph(strict=strict, check_heap=check_heap)
    mut = new_runtime(cfg, listener=oracle, stack_words=1024, global_words=64,
                      track_touches=True)
    tids = register_schema(mut)
    kernel = StressKernel(mut, tids, rng, oracle)
    while kernel.constructed < nodes:
        kernel.run_ops(min(500, nodes - kernel.constructed + 100))
    kernel.drain()
    collector = mut.collector
    factor = cfg.decrement_budget_factor
    ineffective = sum(
        1
        for r in collector.records
        if r.deferred_backlog and r.released != math.ceil(factor * r.alloc_count)
    )
    return StressOutcome(
        seed=seed,
        nodes=nodes,
        collections=len(collector.records),
        constructed=kernel.constructed,
        released=oracle.released_count,
        effectiveness_violations=ineffective,
        violations=list(oracle.violations),
    )


# -- live-heap builder for the pause-vs-live-heap sweep -------------------------


def build_live_chain(mut: Mutator, target_bytes: int, global_slot: int = CHAIN_SLOT) -> int:
    """Grow a rooted cons chain to roughly target_bytes of live old heap."""
    tids = {t.name: t.type_id for t in mut.heap.registry.types}
    t_node = tids["node3"]
    node_bytes = mut.heap.registry[t_node].slot_bytes
    count = max(1, target_bytes // node_bytes)
    acc = mut.construct(tids["leaf2"], [0, 0])
    mut.set_global(global_slot, acc)
    for i in range(count):
        acc = mut.construct(t_node, [acc, i, i])
        mut.set_global(global_slot, acc)
    return count


def churn(mut: Mutator, n_allocs: int) -> None:
    """Allocate-and-drop; nothing survives except what was already rooted."""
    tids = {t.name: t.type_id for t in mut.heap.registry.types}
    t = tids["leaf2"]
    construct = mut.construct
    for i in range(n_allocs):
        construct(t, [i, i])
