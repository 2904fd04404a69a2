"""Placement planning: map every workload object to (file, offset, padded length).

A plan is computed once, is deterministic, and is the single source of truth
for both the write and the read side. Under direct mode every object starts
on an aligned boundary and occupies an aligned padded length, so any single
object can later be read independently with cache-bypass I/O.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .errors import EmptyWorkloadError, InvalidAlignmentError, InvalidArgumentError
from .workload import ObjectKind, WorkloadSpec

DEFAULT_ALIGNMENT = 4096
DEFAULT_FRAGMENT_CHUNK = 512 * 1024 * 1024

PLAN_SCHEMA_VERSION = 1


class StrategyKind(str, Enum):
    FILE_PER_SHARD = "file-per-shard"
    FILE_PER_PROCESS = "file-per-process"
    SINGLE_SHARED_FILE = "single-shared-file"
    FRAGMENTED_CHUNKS = "fragmented-chunks"


@dataclass(frozen=True)
class AggregationStrategy:
    kind: StrategyKind
    chunk_bytes: int = DEFAULT_FRAGMENT_CHUNK  # only used by FRAGMENTED_CHUNKS

    def __post_init__(self) -> None:
        if self.chunk_bytes < 1:
            raise InvalidArgumentError("fragmentation chunk_bytes must be >= 1")

    @property
    def name(self) -> str:
        return self.kind.value

    @staticmethod
    def parse(text: str, chunk_bytes: int = DEFAULT_FRAGMENT_CHUNK) -> "AggregationStrategy":
        try:
            kind = StrategyKind(text)
        except ValueError:
            raise InvalidArgumentError(
                f"unknown strategy {text!r}; expected one of {[k.value for k in StrategyKind]}"
            ) from None
        return AggregationStrategy(kind, chunk_bytes)


@dataclass(frozen=True)
class PlacementEntry:
    object_id: str
    kind: ObjectKind
    file_key: str
    offset_bytes: int
    length_bytes: int
    padded_length_bytes: int
    object_offset: int = 0  # first object byte this entry covers (fragmentation)
    part_index: int = 0
    rank: int = 0
    shard_index: int = 0

    @property
    def end_offset(self) -> int:
        return self.offset_bytes + self.padded_length_bytes


@dataclass(frozen=True)
class LayoutPlan:
    strategy: AggregationStrategy
    alignment_bytes: int
    direct: bool
    entries: tuple[PlacementEntry, ...]
    file_count: int
    per_file_total: dict[str, int]
    # Single-shared-file only: byte offset where each rank's region begins,
    # and a marker that producing them is a serialized cross-rank prefix sum
    # whose cost the bench harness charges to the coordination phase.
    rank_base_offsets: dict[int, int] = field(default_factory=dict)
    serialized_offset_exchange: bool = False

    def entries_for_rank(self, rank: int) -> tuple[PlacementEntry, ...]:
        return tuple(e for e in self.entries if e.rank == rank)

    def file_keys(self) -> tuple[str, ...]:
        return tuple(self.per_file_total)

    def to_json(self) -> str:
        doc = {
            "schema_version": PLAN_SCHEMA_VERSION,
            "strategy": self.strategy.name,
            "fragment_chunk_bytes": self.strategy.chunk_bytes,
            "alignment_bytes": self.alignment_bytes,
            "direct": self.direct,
            "file_count": self.file_count,
            "per_file_total": self.per_file_total,
            "rank_base_offsets": {str(r): off for r, off in self.rank_base_offsets.items()},
            "serialized_offset_exchange": self.serialized_offset_exchange,
            "entries": [
                {
                    "object_id": e.object_id,
                    "kind": e.kind.value,
                    "file_key": e.file_key,
                    "offset_bytes": e.offset_bytes,
                    "length_bytes": e.length_bytes,
                    "padded_length_bytes": e.padded_length_bytes,
                    "object_offset": e.object_offset,
                    "part_index": e.part_index,
                    "rank": e.rank,
                    "shard_index": e.shard_index,
                }
                for e in self.entries
            ],
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(text: str) -> "LayoutPlan":
        doc = json.loads(text)
        if doc.get("schema_version") != PLAN_SCHEMA_VERSION:
            raise InvalidArgumentError(
                f"plan schema version {doc.get('schema_version')!r} != {PLAN_SCHEMA_VERSION}"
            )
        entries = tuple(
            PlacementEntry(
                object_id=e["object_id"],
                kind=ObjectKind(e["kind"]),
                file_key=e["file_key"],
                offset_bytes=e["offset_bytes"],
                length_bytes=e["length_bytes"],
                padded_length_bytes=e["padded_length_bytes"],
                object_offset=e["object_offset"],
                part_index=e["part_index"],
                rank=e["rank"],
                shard_index=e["shard_index"],
            )
            for e in doc["entries"]
        )
        return LayoutPlan(
            strategy=AggregationStrategy.parse(doc["strategy"], doc["fragment_chunk_bytes"]),
            alignment_bytes=doc["alignment_bytes"],
            direct=doc["direct"],
            entries=entries,
            file_count=doc["file_count"],
            per_file_total=dict(doc["per_file_total"]),
            rank_base_offsets={int(r): off for r, off in doc["rank_base_offsets"].items()},
            serialized_offset_exchange=doc["serialized_offset_exchange"],
        )


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _pad(n: int, alignment: int, direct: bool) -> int:
    if not direct:
        return n
    return (n + alignment - 1) // alignment * alignment


def plan_layout(
    workload: WorkloadSpec,
    strategy: AggregationStrategy,
    alignment_bytes: int = DEFAULT_ALIGNMENT,
    direct: bool = False,
) -> LayoutPlan:
    """Assign every object a placement under the chosen aggregation strategy."""
    if not _is_power_of_two(alignment_bytes) or alignment_bytes < 512:
        raise InvalidAlignmentError(f"alignment {alignment_bytes} is not a power of two >= 512")
    if not workload.objects:
        raise EmptyWorkloadError("cannot plan an empty workload")

    prefix = strategy.name
    entries: list[PlacementEntry] = []
    cursors: dict[str, int] = {}
    rank_bases: dict[int, int] = {}

    def append(obj, file_key: str, length: int, object_offset: int, part: int) -> None:
        offset = cursors.get(file_key, 0)
        padded = _pad(length, alignment_bytes, direct)
        entries.append(
            PlacementEntry(
                object_id=obj.object_id,
                kind=obj.kind,
                file_key=file_key,
                offset_bytes=offset,
                length_bytes=length,
                padded_length_bytes=padded,
                object_offset=object_offset,
                part_index=part,
                rank=obj.rank,
                shard_index=obj.shard_index,
            )
        )
        cursors[file_key] = offset + padded

    if strategy.kind is StrategyKind.FILE_PER_SHARD:
        for obj in workload.objects:
            append(obj, f"{prefix}/rank{obj.rank}-shard{obj.shard_index}.bin", obj.size_bytes, 0, 0)
    elif strategy.kind is StrategyKind.FILE_PER_PROCESS:
        for obj in workload.objects:
            append(obj, f"{prefix}/rank{obj.rank}.bin", obj.size_bytes, 0, 0)
    elif strategy.kind is StrategyKind.SINGLE_SHARED_FILE:
        shared = f"{prefix}/shared.bin"
        # Rank regions are laid out back to back; each rank's base is the
        # (already aligned, because padded) prefix sum of its predecessors.
        base = 0
        for rank in range(workload.num_ranks):
            rank_bases[rank] = base
            cursors[shared] = base
            for obj in workload.objects_for_rank(rank):
                append(obj, shared, obj.size_bytes, 0, 0)
            base = cursors[shared]
    elif strategy.kind is StrategyKind.FRAGMENTED_CHUNKS:
        chunk = strategy.chunk_bytes
        for obj in workload.objects:
            parts = (obj.size_bytes + chunk - 1) // chunk
            for k in range(parts):
                length = min(chunk, obj.size_bytes - k * chunk)
                file_key = f"{prefix}/obj-{obj.object_id}/chunk{k}.bin"
                append(obj, file_key, length, k * chunk, k)
    else:  # pragma: no cover - enum is closed
        raise InvalidArgumentError(f"unhandled strategy {strategy.kind}")

    per_file_total = dict(cursors)
    return LayoutPlan(
        strategy=strategy,
        alignment_bytes=alignment_bytes,
        direct=direct,
        entries=tuple(entries),
        file_count=len(per_file_total),
        per_file_total=per_file_total,
        rank_base_offsets=rank_bases,
        serialized_offset_exchange=strategy.kind is StrategyKind.SINGLE_SHARED_FILE,
    )


def total_padded_bytes(plan: LayoutPlan) -> int:
    return sum(e.padded_length_bytes for e in plan.entries)
