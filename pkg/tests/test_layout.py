"""Layout planning tests: placement examples and the geometric invariants."""

import json
from types import SimpleNamespace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckptbench import layout as lay
from ckptbench import workload as wl
from ckptbench.errors import EmptyWorkloadError, InvalidAlignmentError
from ckptbench.profiles import get_builtin_profile

MIB = 1024 * 1024


def raw_workload(sizes_by_rank, lean=False):
    """Hand-built workload of bare tensors (one shard per rank)."""
    objects = []
    for rank, sizes in enumerate(sizes_by_rank):
        for i, size in enumerate(sizes):
            objects.append(
                wl.ObjectSpec(
                    object_id=f"r{rank}-s0-t{i:05d}",
                    rank=rank,
                    shard_index=0,
                    kind=wl.ObjectKind.TENSOR,
                    size_bytes=size,
                    content_seed=wl.derive_seed(1, rank, 0, i),
                )
            )
    return wl.WorkloadSpec(
        name="raw",
        num_ranks=len(sizes_by_rank),
        shards_per_rank=1,
        objects=tuple(objects),
        master_seed=1,
    )


def strat(kind, chunk=512 * MIB):
    return lay.AggregationStrategy(kind, chunk)


def test_shared_file_two_aligned_objects():
    w = raw_workload([[4096], [4096]])
    plan = lay.plan_layout(w, strat(lay.StrategyKind.SINGLE_SHARED_FILE), 4096, direct=True)
    assert plan.file_count == 1
    assert [e.offset_bytes for e in plan.entries] == [0, 4096]
    assert plan.rank_base_offsets == {0: 0, 1: 4096}
    assert plan.serialized_offset_exchange


def test_padding_of_unaligned_sizes():
    w = raw_workload([[100, 5000]])
    plan = lay.plan_layout(w, strat(lay.StrategyKind.FILE_PER_PROCESS), 4096, direct=True)
    assert [e.offset_bytes for e in plan.entries] == [0, 4096]
    assert [e.padded_length_bytes for e in plan.entries] == [4096, 8192]
    assert lay.total_padded_bytes(plan) == 12288
    buffered = lay.plan_layout(w, strat(lay.StrategyKind.FILE_PER_PROCESS), 4096, direct=False)
    assert lay.total_padded_bytes(buffered) == 5100


def test_3b_file_per_shard_count_and_total():
    w = wl.generate_from_profile(get_builtin_profile("3b"), 3)
    plan = lay.plan_layout(w, strat(lay.StrategyKind.FILE_PER_SHARD), 4096, direct=False)
    assert plan.file_count == 132
    assert abs(lay.total_padded_bytes(plan) - 42e9) <= 0.005 * 42e9


def test_fragmentation_splits_large_object():
    w = raw_workload([[1100 * MIB]])
    plan = lay.plan_layout(w, strat(lay.StrategyKind.FRAGMENTED_CHUNKS), 4096, direct=False)
    assert len(plan.entries) == 3
    assert plan.file_count == 3
    assert [e.length_bytes for e in plan.entries] == [512 * MIB, 512 * MIB, 76 * MIB]
    assert [e.object_offset for e in plan.entries] == [0, 512 * MIB, 1024 * MIB]
    assert len({e.file_key for e in plan.entries}) == 3
    # nested two-level naming under the strategy directory
    assert all("/obj-" in e.file_key and "/chunk" in e.file_key for e in plan.entries)


def test_invalid_alignment_rejected():
    w = raw_workload([[4096]])
    for bad in (0, 100, 3000, 256):
        with pytest.raises(InvalidAlignmentError):
            lay.plan_layout(w, strat(lay.StrategyKind.FILE_PER_SHARD), bad, direct=True)


def test_empty_workload_rejected():
    empty = SimpleNamespace(objects=(), num_ranks=1)
    with pytest.raises(EmptyWorkloadError):
        lay.plan_layout(empty, strat(lay.StrategyKind.FILE_PER_SHARD), 4096, direct=False)


def test_plan_json_round_trip():
    w = wl.generate_synthetic(10 * MIB, 4 * MIB, 2, 5)
    plan = lay.plan_layout(w, strat(lay.StrategyKind.SINGLE_SHARED_FILE), 4096, direct=True)
    again = lay.LayoutPlan.from_json(plan.to_json())
    assert again == plan
    doc = json.loads(plan.to_json())
    assert doc["schema_version"] == lay.PLAN_SCHEMA_VERSION


# --- property suite -------------------------------------------------------


def check_plan_invariants(w, plan, alignment, direct, strategy):
    # every object covered, fragmented splits bounded by the chunk size
    by_object = {}
    for e in plan.entries:
        by_object.setdefault(e.object_id, []).append(e)
    assert set(by_object) == {o.object_id for o in w.objects}
    sizes = {o.object_id: o.size_bytes for o in w.objects}
    for oid, parts in by_object.items():
        parts = sorted(parts, key=lambda e: e.object_offset)
        assert sum(p.length_bytes for p in parts) == sizes[oid]
        if strategy.kind is lay.StrategyKind.FRAGMENTED_CHUNKS:
            assert all(p.length_bytes <= strategy.chunk_bytes for p in parts)
        else:
            assert len(parts) == 1

    # non-overlap within each file
    by_file = {}
    for e in plan.entries:
        by_file.setdefault(e.file_key, []).append(e)
    for entries in by_file.values():
        entries.sort(key=lambda e: e.offset_bytes)
        for a, b in zip(entries, entries[1:]):
            assert a.offset_bytes + a.padded_length_bytes <= b.offset_bytes

    # alignment divisibility in direct mode
    if direct:
        for e in plan.entries:
            assert e.offset_bytes % alignment == 0
            assert e.padded_length_bytes % alignment == 0

    # closed-form file counts
    n = w.num_ranks
    shard_pairs = len({(o.rank, o.shard_index) for o in w.objects})
    if strategy.kind is lay.StrategyKind.FILE_PER_SHARD:
        assert plan.file_count == shard_pairs
    elif strategy.kind is lay.StrategyKind.FILE_PER_PROCESS:
        assert plan.file_count == n
    elif strategy.kind is lay.StrategyKind.SINGLE_SHARED_FILE:
        assert plan.file_count == 1
    else:
        expected = sum(
            (o.size_bytes + strategy.chunk_bytes - 1) // strategy.chunk_bytes for o in w.objects
        )
        assert plan.file_count == expected

    # padding overhead bound
    total = sum(o.size_bytes for o in w.objects)
    assert 0 <= lay.total_padded_bytes(plan) - total <= len(plan.entries) * (alignment - 1)

    # per-file totals describe the file extents
    for file_key, entries in by_file.items():
        assert plan.per_file_total[file_key] == max(
            e.offset_bytes + e.padded_length_bytes for e in entries
        )


@st.composite
def workload_and_params(draw):
    num_ranks = draw(st.integers(1, 4))
    sizes_by_rank = []
    for _ in range(num_ranks):
        count = draw(st.integers(1, 6))
        sizes_by_rank.append([draw(st.integers(1, 50_000)) for _ in range(count)])
    strategy_kind = draw(st.sampled_from(list(lay.StrategyKind)))
    chunk = draw(st.sampled_from([4096, 10_000, 512 * MIB]))
    alignment = draw(st.sampled_from([512, 4096, 8192]))
    direct = draw(st.booleans())
    return sizes_by_rank, strategy_kind, chunk, alignment, direct


@given(params=workload_and_params())
@settings(max_examples=120, deadline=None)
def test_plan_invariants_property(params):
    sizes_by_rank, strategy_kind, chunk, alignment, direct = params
    w = raw_workload(sizes_by_rank)
    strategy = strat(strategy_kind, chunk)
    plan = lay.plan_layout(w, strategy, alignment, direct)
    check_plan_invariants(w, plan, alignment, direct, strategy)
    # idempotence
    assert lay.plan_layout(w, strategy, alignment, direct) == plan
