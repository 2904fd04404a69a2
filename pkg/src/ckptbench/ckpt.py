"""Staged checkpoint and restore pipelines with manifest commit and verification.

Both pipelines run from an explicit per-rank transfer schedule built ahead of
execution, so tests can count requests without performing I/O and the
executor provably issues exactly the scheduled transfers.

Checkpoint stages per rank: serialize (lean-object generation stand-in),
staging (seed-fill of source buffers), flush (engine data writes), sync
(device flush), commit (small metadata-class writes plus the manifest).
The manifest is written last, after all data is synced: it is the commit
point, and a checkpoint without a manifest is unusable by definition.

Restore stages per rank: manifest (read+parse), lean (early read of each
shard's lean object), read (data reads per emulation mode), alloc (buffer
acquisition per alloc mode), staging (copy into the preallocated destination
region standing in for the device), verify (checksum comparison).

Emulation modes reproduce the request patterns of the engines studied:
``batched`` coalesces contiguous data into region-sized transfers and leaves
small metadata-class objects to the commit stage; ``per-object`` issues one
transfer per object as soon as it is available and, on restore, waits for
each read before issuing the next, re-reading every manifest entry the way
naive per-entry engines do; ``fragmented`` is the per-object pattern over a
fixed-chunk fragmented layout with nested per-object directories.
"""

from __future__ import annotations

import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

import numpy as np

from .engine import (
    AlignedRegion,
    BufferPool,
    EngineConfig,
    EngineFile,
    IoEngine,
    IoOp,
    IoRequest,
    OpenMode,
)
from .errors import (
    InvalidArgumentError,
    ManifestMissingError,
    ShortManifestError,
)
from .layout import LayoutPlan, PlacementEntry, StrategyKind
from .workload import (
    ObjectKind,
    StreamingChecksum,
    WorkloadSpec,
    fill_object_range,
)

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
DEFAULT_REGION_BYTES = 64 * 1024 * 1024
DEFAULT_POOL_REGIONS = 4

FAULT_ENV = "CKPTBENCH_FAULT"
FAULT_BEFORE_MANIFEST = "kill-before-manifest"

CHECKPOINT_PHASES = ("serialize", "staging", "flush", "sync", "commit", "coordination")
RESTORE_PHASES = ("manifest", "lean", "read", "alloc", "staging", "verify", "coordination")


class EmulationMode(str, Enum):
    BATCHED = "batched"
    PER_OBJECT = "per-object"
    FRAGMENTED = "fragmented"


class AllocMode(str, Enum):
    POOLED = "pooled"
    PER_OBJECT = "per-object"


# ---------------------------------------------------------------------------
# timing / counters


@dataclass
class PhaseStat:
    seconds: float = 0.0
    ops: int = 0
    bytes: int = 0


class PhaseTimings:
    def __init__(self, phases: tuple[str, ...] = ()):
        self.phases: dict[str, PhaseStat] = {p: PhaseStat() for p in phases}

    def stat(self, phase: str) -> PhaseStat:
        if phase not in self.phases:
            self.phases[phase] = PhaseStat()
        return self.phases[phase]

    def add(self, phase: str, seconds: float = 0.0, ops: int = 0, nbytes: int = 0) -> None:
        s = self.stat(phase)
        s.seconds += seconds
        s.ops += ops
        s.bytes += nbytes

    @contextmanager
    def timed(self, phase: str):
        t0 = time.monotonic()
        try:
            yield
        finally:
            self.add(phase, seconds=time.monotonic() - t0)

    def total_seconds(self) -> float:
        return sum(s.seconds for s in self.phases.values())

    def to_dict(self) -> dict:
        return {
            name: {"seconds": s.seconds, "ops": s.ops, "bytes": s.bytes}
            for name, s in self.phases.items()
        }


@dataclass
class RankCounters:
    bytes_written: int = 0
    bytes_read: int = 0
    write_ops: int = 0
    read_ops: int = 0
    file_opens: int = 0
    allocations: int = 0
    reuses: int = 0
    manifest_bytes: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestPart:
    file_key: str
    offset: int
    length: int
    padded_length: int
    object_offset: int


@dataclass(frozen=True)
class ManifestEntry:
    object_id: str
    kind: ObjectKind
    rank: int
    shard_index: int
    length: int
    checksum: int
    parts: tuple[ManifestPart, ...]


@dataclass(frozen=True)
class Manifest:
    checkpoint_version: int
    workload_name: str
    strategy: str
    fragment_chunk_bytes: int
    alignment_bytes: int
    direct: bool
    created_at: str
    entries: tuple[ManifestEntry, ...]

    def entries_for_rank(self, rank: int) -> tuple[ManifestEntry, ...]:
        return tuple(e for e in self.entries if e.rank == rank)

    def ranks(self) -> tuple[int, ...]:
        return tuple(sorted({e.rank for e in self.entries}))


def manifest_entry_to_doc(e: ManifestEntry) -> dict:
    return {
        "object_id": e.object_id,
        "kind": e.kind.value,
        "rank": e.rank,
        "shard_index": e.shard_index,
        "length": e.length,
        "checksum": f"{e.checksum:016x}",
        "parts": [
            {
                "file_key": p.file_key,
                "offset": p.offset,
                "length": p.length,
                "padded_length": p.padded_length,
                "object_offset": p.object_offset,
            }
            for p in e.parts
        ],
    }


def manifest_entry_from_doc(e: dict) -> ManifestEntry:
    return ManifestEntry(
        object_id=e["object_id"],
        kind=ObjectKind(e["kind"]),
        rank=e["rank"],
        shard_index=e["shard_index"],
        length=e["length"],
        checksum=int(e["checksum"], 16),
        parts=tuple(
            ManifestPart(
                file_key=p["file_key"],
                offset=p["offset"],
                length=p["length"],
                padded_length=p["padded_length"],
                object_offset=p["object_offset"],
            )
            for p in e["parts"]
        ),
    )


def serialize_manifest(manifest: Manifest) -> str:
    # Field order is fixed for diff-stability; checksums are hex strings so
    # the document stays identical across JSON implementations.
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "checkpoint_version": manifest.checkpoint_version,
        "workload_name": manifest.workload_name,
        "strategy": manifest.strategy,
        "fragment_chunk_bytes": manifest.fragment_chunk_bytes,
        "alignment_bytes": manifest.alignment_bytes,
        "direct": manifest.direct,
        "created_at": manifest.created_at,
        "entries": [manifest_entry_to_doc(e) for e in manifest.entries],
    }
    return json.dumps(doc, indent=2) + "\n"


def parse_manifest(text: str) -> Manifest:
    try:
        doc = json.loads(text)
        if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise ShortManifestError(
                f"manifest schema version {doc.get('schema_version')!r} != {MANIFEST_SCHEMA_VERSION}"
            )
        entries = tuple(manifest_entry_from_doc(e) for e in doc["entries"])
        return Manifest(
            checkpoint_version=doc["checkpoint_version"],
            workload_name=doc["workload_name"],
            strategy=doc["strategy"],
            fragment_chunk_bytes=doc["fragment_chunk_bytes"],
            alignment_bytes=doc["alignment_bytes"],
            direct=doc["direct"],
            created_at=doc["created_at"],
            entries=entries,
        )
    except ShortManifestError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ShortManifestError(f"manifest unreadable: {exc}") from exc


def version_dirname(version: int) -> str:
    return f"ckpt-{version:03d}"


def manifest_path_for(root: Path, version: int) -> Path:
    return Path(root) / version_dirname(version) / MANIFEST_NAME


def load_manifest(path: str | Path) -> Manifest:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    if not p.exists():
        raise ManifestMissingError(f"no manifest at {p}")
    return parse_manifest(p.read_text())


def _maybe_inject_fault(point: str) -> None:
    # Test hook: emulates a rank dying at a precise pipeline point.
    if os.environ.get(FAULT_ENV) == point:
        os._exit(86)


def write_manifest(manifest: Manifest, version_dir: Path) -> Path:
    _maybe_inject_fault(FAULT_BEFORE_MANIFEST)
    version_dir.mkdir(parents=True, exist_ok=True)
    final = version_dir / MANIFEST_NAME
    tmp = version_dir / (MANIFEST_NAME + ".tmp")
    data = serialize_manifest(manifest).encode()
    fd = os.open(str(tmp), os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
    try:
        os.write(fd, data)
        os.fsync(fd)
    finally:
        os.close(fd)
    os.rename(tmp, final)
    dfd = os.open(str(version_dir), os.O_RDONLY)
    try:
        os.fsync(dfd)
    finally:
        os.close(dfd)
    return final


# ---------------------------------------------------------------------------
# transfer schedules


@dataclass(frozen=True)
class IoSlice:
    object_id: str
    content_seed: int  # 0 on the restore side (content comes from the file)
    object_offset: int
    length: int
    buf_offset: int


@dataclass(frozen=True)
class ScheduledIo:
    file_key: str
    offset: int
    length: int
    slices: tuple[IoSlice, ...]


@dataclass
class RankIoSchedule:
    rank: int
    flush: list[ScheduledIo] = field(default_factory=list)
    lean: list[ScheduledIo] = field(default_factory=list)
    commit: list[ScheduledIo] = field(default_factory=list)


def _effective_region(region_bytes: int, alignment: int, direct: bool) -> int:
    if region_bytes < 1:
        raise InvalidArgumentError("region_bytes must be >= 1")
    if not direct:
        return region_bytes
    return max(region_bytes // alignment * alignment, alignment)


def _entry_io(entry: PlacementEntry, seed: int) -> ScheduledIo:
    """A single transfer covering one placement entry (data plus its padding)."""
    return ScheduledIo(
        file_key=entry.file_key,
        offset=entry.offset_bytes,
        length=entry.padded_length_bytes,
        slices=(
            IoSlice(
                object_id=entry.object_id,
                content_seed=seed,
                object_offset=entry.object_offset,
                length=entry.length_bytes,
                buf_offset=0,
            ),
        ),
    )


def _coalesce_runs(entries: list[PlacementEntry]) -> list[list[PlacementEntry]]:
    """Group entries into maximal contiguous runs within each file."""
    runs: list[list[PlacementEntry]] = []
    by_file: dict[str, list[PlacementEntry]] = {}
    for e in entries:
        by_file.setdefault(e.file_key, []).append(e)
    for file_key in by_file:
        ordered = sorted(by_file[file_key], key=lambda e: e.offset_bytes)
        run: list[PlacementEntry] = []
        for e in ordered:
            if run and e.offset_bytes != run[-1].end_offset:
                runs.append(run)
                run = []
            run.append(e)
        if run:
            runs.append(run)
    return runs


def _split_run(
    run: list[PlacementEntry], region_bytes: int, seeds: dict[str, int]
) -> list[ScheduledIo]:
    """Split a contiguous run into region-sized transfers with object slices."""
    out: list[ScheduledIo] = []
    start = run[0].offset_bytes
    end = run[-1].end_offset
    p0 = start
    i = 0  # entries are offset-ordered; advance monotonically across pieces
    while p0 < end:
        p1 = min(p0 + region_bytes, end)
        slices: list[IoSlice] = []
        j = i
        while j < len(run):
            e = run[j]
            if e.offset_bytes >= p1:
                break
            data_start = max(p0, e.offset_bytes)
            data_end = min(p1, e.offset_bytes + e.length_bytes)
            if data_end > data_start:
                slices.append(
                    IoSlice(
                        object_id=e.object_id,
                        content_seed=seeds.get(e.object_id, 0),
                        object_offset=e.object_offset + (data_start - e.offset_bytes),
                        length=data_end - data_start,
                        buf_offset=data_start - p0,
                    )
                )
            if e.end_offset <= p1:
                j += 1
            else:
                break
        i = j
        out.append(
            ScheduledIo(file_key=run[0].file_key, offset=p0, length=p1 - p0, slices=tuple(slices))
        )
        p0 = p1
    return out


def build_checkpoint_schedule(
    workload: WorkloadSpec,
    plan: LayoutPlan,
    mode: EmulationMode,
    region_bytes: int = DEFAULT_REGION_BYTES,
) -> dict[int, RankIoSchedule]:
    """Per-rank write schedule; the executor issues exactly these transfers."""
    region = _effective_region(region_bytes, plan.alignment_bytes, plan.direct)
    seeds = {o.object_id: o.content_seed for o in workload.objects}
    schedules: dict[int, RankIoSchedule] = {}
    for rank in range(workload.num_ranks):
        entries = list(plan.entries_for_rank(rank))
        sched = RankIoSchedule(rank=rank)
        if mode is EmulationMode.BATCHED:
            tensors = [e for e in entries if e.kind is ObjectKind.TENSOR]
            small = [e for e in entries if e.kind is not ObjectKind.TENSOR]
            for run in _coalesce_runs(tensors):
                sched.flush.extend(_split_run(run, region, seeds))
            # Metadata-class objects ride the commit stage so the data path
            # stays a pure stream of region-sized transfers.
            sched.commit = [_entry_io(e, seeds[e.object_id]) for e in small]
        else:
            sched.flush = [_entry_io(e, seeds[e.object_id]) for e in entries]
        schedules[rank] = sched
    return schedules


def build_restore_schedule(
    manifest: Manifest,
    mode: EmulationMode,
    region_bytes: int = DEFAULT_REGION_BYTES,
) -> dict[int, RankIoSchedule]:
    """Per-rank read schedule derived from the manifest.

    The lean list models the early lean-object read every engine performs; in
    per-object mode the read stage then naively re-reads every manifest entry
    (the per-entry pattern of production engines), while batched mode
    coalesces contiguous placements into region-sized reads.
    """
    region = _effective_region(region_bytes, manifest.alignment_bytes, manifest.direct)
    schedules: dict[int, RankIoSchedule] = {}
    for rank in manifest.ranks():
        entries = list(manifest.entries_for_rank(rank))
        sched = RankIoSchedule(rank=rank)
        for e in entries:
            if e.kind is ObjectKind.LEAN_OBJECT:
                for p in e.parts:
                    sched.lean.append(
                        ScheduledIo(
                            file_key=p.file_key,
                            offset=p.offset,
                            length=p.padded_length,
                            slices=(),  # pattern-only read; verification happens in the read stage
                        )
                    )
        placements = [
            PlacementEntry(
                object_id=e.object_id,
                kind=e.kind,
                file_key=p.file_key,
                offset_bytes=p.offset,
                length_bytes=p.length,
                padded_length_bytes=p.padded_length,
                object_offset=p.object_offset,
                part_index=k,
                rank=e.rank,
                shard_index=e.shard_index,
            )
            for e in entries
            for k, p in enumerate(e.parts)
        ]
        if mode is EmulationMode.BATCHED:
            for run in _coalesce_runs(placements):
                sched.flush.extend(_split_run(run, region, {}))
        else:
            sched.flush = [_entry_io(p, 0) for p in placements]
        schedules[rank] = sched
    return schedules


# ---------------------------------------------------------------------------
# executors


class CheckpointWriteError(RuntimeError):
    def __init__(self, failures: list[str]):
        self.failures = failures
        super().__init__(f"{len(failures)} write(s) failed: {failures[:3]}")


@dataclass
class ObjectVerdict:
    object_id: str
    passed: bool
    reason: str = ""


@dataclass
class RankRunStats:
    rank: int
    timings: PhaseTimings
    counters: RankCounters


class _FileTable:
    """Lazy open-handle cache; creates parent directories on first touch."""

    def __init__(self, engine: IoEngine, version_dir: Path, write: bool, shared_keys: set[str]):
        self.engine = engine
        self.version_dir = version_dir
        self.write = write
        self.shared_keys = shared_keys
        self.handles: dict[str, EngineFile] = {}

    def get(self, file_key: str) -> EngineFile:
        h = self.handles.get(file_key)
        if h is None:
            path = self.version_dir / file_key
            if self.write:
                path.parent.mkdir(parents=True, exist_ok=True)
                # Shared files are pre-created and sized by rank 0; truncating
                # here would destroy other ranks' regions.
                mode = (
                    OpenMode.WRITE_NO_TRUNC
                    if file_key in self.shared_keys
                    else OpenMode.WRITE_CREATE
                )
            else:
                mode = OpenMode.READ_ONLY
            h = self.engine.open_file(path, mode)
            self.handles[file_key] = h
        return h

    def writable_handles(self) -> list[EngineFile]:
        return [h for h in self.handles.values() if h.writable and not h.closed]


def prepare_checkpoint_version(root: Path, version: int, plan: LayoutPlan) -> Path:
    """Create the version directory; pre-create and size any multi-writer file."""
    version_dir = Path(root) / version_dirname(version)
    version_dir.mkdir(parents=True, exist_ok=True)
    if plan.strategy.kind is StrategyKind.SINGLE_SHARED_FILE:
        for file_key, total in plan.per_file_total.items():
            path = version_dir / file_key
            path.parent.mkdir(parents=True, exist_ok=True)
            fd = os.open(str(path), os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
            try:
                os.ftruncate(fd, total)
            finally:
                os.close(fd)
    return version_dir


def _shared_keys(plan: LayoutPlan) -> set[str]:
    if plan.strategy.kind is StrategyKind.SINGLE_SHARED_FILE:
        return set(plan.per_file_total)
    return set()


def _zero_gaps(buf_arr: np.ndarray, io: ScheduledIo) -> None:
    # Padding inside a transfer is zeroed so file bytes are deterministic.
    pos = 0
    for s in io.slices:
        if s.buf_offset > pos:
            buf_arr[pos : s.buf_offset] = 0
        pos = s.buf_offset + s.length
    if pos < io.length:
        buf_arr[pos : io.length] = 0


def _run_write_schedule(
    ios: list[ScheduledIo],
    phase: str,
    engine: IoEngine,
    pool: BufferPool,
    files: _FileTable,
    timings: PhaseTimings,
    counters: RankCounters,
    checksums: dict[str, StreamingChecksum],
    filled: dict[str, int],
) -> list[str]:
    """Fill and write every scheduled transfer; returns failure descriptions."""
    failures: list[str] = []
    inflight: dict[int, AlignedRegion] = {}

    def harvest(min_count: int) -> None:
        t0 = time.monotonic()
        recs = engine.await_completions(min_count)
        timings.add(phase, seconds=time.monotonic() - t0)
        for rec in recs:
            region = inflight.pop(rec.tag)
            pool.release(region)
            if rec.ok:
                timings.add(phase, ops=1, nbytes=rec.bytes_transferred)
                counters.write_ops += 1
                counters.bytes_written += rec.bytes_transferred
            else:
                failures.append(f"{phase} tag={rec.tag}: {rec.error}")

    for seq, io in enumerate(ios):
        if len(inflight) >= pool.region_count:
            harvest(1)
        t0 = time.monotonic()
        region = pool.acquire(io.length)
        buf = region.view[: io.length]
        arr = np.frombuffer(buf, dtype=np.uint8)
        for s in io.slices:
            view = arr[s.buf_offset : s.buf_offset + s.length]
            fill_object_range(view, s.content_seed, s.object_offset)
            cs = checksums.setdefault(s.object_id, StreamingChecksum())
            # Schedule order is object-offset order, so streaming works.
            assert filled.get(s.object_id, 0) == s.object_offset
            cs.update(view)
            filled[s.object_id] = s.object_offset + s.length
        _zero_gaps(arr, io)
        timings.add("staging", seconds=time.monotonic() - t0)
        t0 = time.monotonic()
        handle = files.get(io.file_key)
        engine.submit_batch(
            [IoRequest(handle, IoOp.WRITE, io.offset, buf, io.length, tag=seq)]
        )
        inflight[seq] = region
        timings.add(phase, seconds=time.monotonic() - t0)
    while inflight:
        harvest(1)
    return failures


def checkpoint_rank(
    rank: int,
    workload: WorkloadSpec,
    plan: LayoutPlan,
    config: EngineConfig,
    mode: EmulationMode,
    version_dir: Path,
    *,
    schedule: RankIoSchedule | None = None,
    region_bytes: int = DEFAULT_REGION_BYTES,
    pool_regions: int = DEFAULT_POOL_REGIONS,
    pool: BufferPool | None = None,
) -> tuple[list[ManifestEntry], RankRunStats]:
    """Run the four checkpoint stages for one rank; returns manifest entries."""
    if schedule is None:
        schedule = build_checkpoint_schedule(workload, plan, mode, region_bytes)[rank]
    timings = PhaseTimings(CHECKPOINT_PHASES)
    counters = RankCounters()
    if pool is None:
        region = _effective_region(region_bytes, plan.alignment_bytes, plan.direct)
        pool = BufferPool(region, pool_regions, plan.alignment_bytes)
        pool.warm_up()
    rank_objects = workload.objects_for_rank(rank)

    with IoEngine(config) as engine:
        files = _FileTable(engine, version_dir, write=True, shared_keys=_shared_keys(plan))

        # Stage 1: lean-object serialization stand-in (timed separately).
        lean_objs = [o for o in rank_objects if o.kind is ObjectKind.LEAN_OBJECT]
        if lean_objs:
            scratch = AlignedRegion(max(o.size_bytes for o in lean_objs), plan.alignment_bytes)
            with timings.timed("serialize"):
                for o in lean_objs:
                    fill_object_range(scratch.view[: o.size_bytes], o.content_seed, 0)

        # Stages 2+3: staging fills interleaved with engine flushes.
        checksums: dict[str, StreamingChecksum] = {}
        filled: dict[str, int] = {}
        failures = _run_write_schedule(
            schedule.flush, "flush", engine, pool, files, timings, counters, checksums, filled
        )
        failures += _run_write_schedule(
            schedule.commit, "commit", engine, pool, files, timings, counters, checksums, filled
        )

        # Data sync: every written file reaches stable media before commit.
        with timings.timed("sync"):
            for handle in files.writable_handles():
                engine.sync_file(handle)

        counters.file_opens = engine.file_opens

    counters.allocations = pool.allocations
    counters.reuses = pool.reuses

    if failures:
        raise CheckpointWriteError(failures)

    entries: list[ManifestEntry] = []
    parts_by_object: dict[str, list[PlacementEntry]] = {}
    for e in plan.entries_for_rank(rank):
        parts_by_object.setdefault(e.object_id, []).append(e)
    for obj in rank_objects:
        placements = sorted(parts_by_object[obj.object_id], key=lambda e: e.object_offset)
        if filled.get(obj.object_id, 0) != obj.size_bytes:
            raise CheckpointWriteError([f"object {obj.object_id} only partially staged"])
        entries.append(
            ManifestEntry(
                object_id=obj.object_id,
                kind=obj.kind,
                rank=obj.rank,
                shard_index=obj.shard_index,
                length=obj.size_bytes,
                checksum=checksums[obj.object_id].digest(),
                parts=tuple(
                    ManifestPart(
                        file_key=p.file_key,
                        offset=p.offset_bytes,
                        length=p.length_bytes,
                        padded_length=p.padded_length_bytes,
                        object_offset=p.object_offset,
                    )
                    for p in placements
                ),
            )
        )
    return entries, RankRunStats(rank=rank, timings=timings, counters=counters)


def build_manifest(
    workload: WorkloadSpec,
    plan: LayoutPlan,
    version: int,
    entries: list[ManifestEntry],
) -> Manifest:
    order = {o.object_id: i for i, o in enumerate(workload.objects)}
    return Manifest(
        checkpoint_version=version,
        workload_name=workload.name,
        strategy=plan.strategy.name,
        fragment_chunk_bytes=plan.strategy.chunk_bytes,
        alignment_bytes=plan.alignment_bytes,
        direct=plan.direct,
        created_at=datetime.now(timezone.utc).isoformat(),
        entries=tuple(sorted(entries, key=lambda e: order[e.object_id])),
    )


@dataclass
class CheckpointResult:
    manifest: Manifest
    manifest_path: Path
    per_rank: dict[int, RankRunStats]


def checkpoint(
    workload: WorkloadSpec,
    plan: LayoutPlan,
    config: EngineConfig,
    mode: EmulationMode,
    root: str | Path,
    version: int = 0,
    *,
    region_bytes: int = DEFAULT_REGION_BYTES,
    pool_regions: int = DEFAULT_POOL_REGIONS,
    ranks: list[int] | None = None,
) -> CheckpointResult:
    """In-process checkpoint of all (or selected) ranks, then manifest commit."""
    if mode is EmulationMode.FRAGMENTED and plan.strategy.kind is not StrategyKind.FRAGMENTED_CHUNKS:
        raise InvalidArgumentError("fragmented emulation requires the fragmented-chunks strategy")
    covered: dict[str, int] = {}
    for e in plan.entries:
        covered[e.object_id] = covered.get(e.object_id, 0) + e.length_bytes
    if covered != {o.object_id: o.size_bytes for o in workload.objects}:
        raise InvalidArgumentError("plan does not cover exactly this workload's objects")
    root = Path(root)
    version_dir = prepare_checkpoint_version(root, version, plan)
    schedules = build_checkpoint_schedule(workload, plan, mode, region_bytes)
    all_entries: list[ManifestEntry] = []
    per_rank: dict[int, RankRunStats] = {}
    for rank in ranks if ranks is not None else range(workload.num_ranks):
        entries, stats = checkpoint_rank(
            rank,
            workload,
            plan,
            config,
            mode,
            version_dir,
            schedule=schedules[rank],
            region_bytes=region_bytes,
            pool_regions=pool_regions,
        )
        all_entries.extend(entries)
        per_rank[rank] = stats
    manifest = build_manifest(workload, plan, version, all_entries)
    t0 = time.monotonic()
    manifest_path = write_manifest(manifest, version_dir)
    if per_rank:
        first = min(per_rank)
        per_rank[first].timings.add("commit", seconds=time.monotonic() - t0)
        per_rank[first].counters.manifest_bytes = manifest_path.stat().st_size
    return CheckpointResult(manifest=manifest, manifest_path=manifest_path, per_rank=per_rank)


# ---------------------------------------------------------------------------
# restore


@dataclass
class RankRestoreResult:
    stats: RankRunStats
    verdicts: dict[str, ObjectVerdict]


@dataclass
class RestoreResources:
    """Buffers a restore needs before its timed window opens.

    The destination region stands in for device memory (it would already
    exist on a real resume); the pool is pre-warmed in pooled alloc mode so
    no pool allocation happens inside the measured window.
    """

    pool: BufferPool
    dest: AlignedRegion
    lean_scratch: AlignedRegion


def prepare_restore_resources(
    plan: LayoutPlan,
    rank: int,
    alloc: AllocMode,
    region_bytes: int = DEFAULT_REGION_BYTES,
    pool_regions: int = DEFAULT_POOL_REGIONS,
) -> RestoreResources:
    """Size restore buffers from the plan (ranks know it before the manifest)."""
    entries = plan.entries_for_rank(rank)
    alignment = plan.alignment_bytes
    dest_total = sum(e.length_bytes for e in entries)
    lean_max = max(
        (e.padded_length_bytes for e in entries if e.kind is ObjectKind.LEAN_OBJECT), default=0
    )
    region = _effective_region(region_bytes, alignment, plan.direct)
    pool = BufferPool(region, pool_regions, alignment)
    if alloc is AllocMode.POOLED:
        pool.warm_up()
    return RestoreResources(
        pool=pool,
        dest=AlignedRegion(max(dest_total, 1), alignment),
        lean_scratch=AlignedRegion(max(lean_max, 1), alignment),
    )


def _read_manifest_stage(
    manifest_path: Path, timings: PhaseTimings, counters: RankCounters
) -> Manifest:
    # Metadata reads are plain buffered I/O regardless of engine config: the
    # manifest is small JSON with no alignment guarantees.
    with timings.timed("manifest"):
        data = manifest_path.read_bytes()
        manifest = parse_manifest(data.decode())
    timings.add("manifest", ops=1, nbytes=len(data))
    counters.read_ops += 1
    counters.manifest_bytes = len(data)
    return manifest


def restore_rank(
    rank: int,
    manifest_path: Path,
    config: EngineConfig,
    alloc: AllocMode,
    mode: EmulationMode,
    *,
    region_bytes: int = DEFAULT_REGION_BYTES,
    pool_regions: int = DEFAULT_POOL_REGIONS,
    resources: RestoreResources | None = None,
) -> RankRestoreResult:
    """Run the restore stages for one rank and verify every object.

    ``resources`` may be preallocated by the caller (the bench harness does,
    outside its timed window); otherwise they are sized from the manifest
    here, before any timed stage.
    """
    timings = PhaseTimings(RESTORE_PHASES)
    counters = RankCounters()
    version_dir = manifest_path.parent

    if resources is None:
        pre = parse_manifest(manifest_path.read_text())
        pre_entries = pre.entries_for_rank(rank)
        alignment = pre.alignment_bytes
        dest_total = sum(e.length for e in pre_entries)
        lean_max = max(
            (p.padded_length for e in pre_entries if e.kind is ObjectKind.LEAN_OBJECT for p in e.parts),
            default=0,
        )
        pool = BufferPool(
            _effective_region(region_bytes, alignment, pre.direct), pool_regions, alignment
        )
        if alloc is AllocMode.POOLED:
            pool.warm_up()
        resources = RestoreResources(
            pool=pool,
            dest=AlignedRegion(max(dest_total, 1), alignment),
            lean_scratch=AlignedRegion(max(lean_max, 1), alignment),
        )

    manifest = _read_manifest_stage(manifest_path, timings, counters)
    entries = manifest.entries_for_rank(rank)
    schedule = build_restore_schedule(manifest, mode, region_bytes)[rank]
    alignment = manifest.alignment_bytes

    pool = resources.pool
    dest = resources.dest
    lean_scratch = resources.lean_scratch
    dest_arr = np.frombuffer(dest.view, dtype=np.uint8)
    dest_offsets: dict[str, int] = {}
    cursor = 0
    for e in entries:
        dest_offsets[e.object_id] = cursor
        cursor += e.length

    expected = {e.object_id: e for e in entries}
    received: dict[str, int] = {e.object_id: 0 for e in entries}
    verdicts: dict[str, ObjectVerdict] = {}

    def fail(object_id: str, reason: str) -> None:
        if object_id not in verdicts or verdicts[object_id].passed:
            verdicts[object_id] = ObjectVerdict(object_id, passed=False, reason=reason)

    def finish_object(object_id: str) -> None:
        e = expected[object_id]
        base = dest_offsets[object_id]
        t0 = time.monotonic()
        actual = StreamingChecksum()
        actual.update(dest_arr[base : base + e.length])
        timings.add("verify", seconds=time.monotonic() - t0)
        if actual.digest() != e.checksum:
            fail(object_id, "checksum-mismatch")
        elif object_id not in verdicts:
            verdicts[object_id] = ObjectVerdict(object_id, passed=True)

    with IoEngine(config) as engine:
        files = _FileTable(engine, version_dir, write=False, shared_keys=set())

        def open_or_fail(io: ScheduledIo) -> EngineFile | None:
            try:
                return files.get(io.file_key)
            except OSError:
                for s in io.slices:
                    fail(s.object_id, "missing-file")
                return None

        # Stage 2: early lean-object reads (the few-KB entries).
        for i, io in enumerate(schedule.lean):
            t0 = time.monotonic()
            handle = open_or_fail(io)
            if handle is None:
                timings.add("lean", seconds=time.monotonic() - t0)
                continue
            buf = lean_scratch.view[: io.length]
            engine.submit_batch([IoRequest(handle, IoOp.READ, io.offset, buf, io.length, tag=("lean", i))])
            recs = engine.await_completions(1)
            timings.add("lean", seconds=time.monotonic() - t0)
            for rec in recs:
                counters.read_ops += 1
                if rec.ok:
                    timings.add("lean", ops=1, nbytes=rec.bytes_transferred)
                    counters.bytes_read += rec.bytes_transferred

        # Stage 3: data reads per emulation mode.
        inflight: dict[int, tuple[ScheduledIo, AlignedRegion]] = {}

        def process(rec) -> None:
            io, buffer = inflight.pop(rec.tag)
            counters.read_ops += 1
            if not rec.ok:
                for s in io.slices:
                    fail(s.object_id, f"read-error: {rec.error}")
                pool.release(buffer)
                return
            timings.add("read", ops=1, nbytes=rec.bytes_transferred)
            counters.bytes_read += rec.bytes_transferred
            arr = np.frombuffer(buffer.view[: io.length], dtype=np.uint8)
            t0 = time.monotonic()
            done: list[str] = []
            for s in io.slices:
                base = dest_offsets[s.object_id]
                dest_arr[base + s.object_offset : base + s.object_offset + s.length] = arr[
                    s.buf_offset : s.buf_offset + s.length
                ]
                received[s.object_id] += s.length
                if received[s.object_id] == expected[s.object_id].length:
                    done.append(s.object_id)
            timings.add("staging", seconds=time.monotonic() - t0)
            for object_id in done:
                finish_object(object_id)
            pool.release(buffer)

        def acquire_buffer(length: int) -> AlignedRegion:
            t0 = time.monotonic()
            if alloc is AllocMode.PER_OBJECT:
                buffer = AlignedRegion(length, alignment)
                counters.allocations += 1
            else:
                buffer = pool.acquire(length)
            timings.add("alloc", seconds=time.monotonic() - t0)
            return buffer

        serial = mode is not EmulationMode.BATCHED
        max_inflight = pool.region_count if alloc is AllocMode.POOLED else config.queue_depth
        for seq, io in enumerate(schedule.flush):
            if not serial and len(inflight) >= max_inflight:
                t0 = time.monotonic()
                recs = engine.await_completions(1)
                timings.add("read", seconds=time.monotonic() - t0)
                for rec in recs:
                    process(rec)
            handle = open_or_fail(io)
            if handle is None:
                continue
            buffer = acquire_buffer(io.length)
            t0 = time.monotonic()
            engine.submit_batch(
                [IoRequest(handle, IoOp.READ, io.offset, buffer.view[: io.length], io.length, tag=seq)]
            )
            timings.add("read", seconds=time.monotonic() - t0)
            inflight[seq] = (io, buffer)
            if serial:
                t0 = time.monotonic()
                recs = engine.await_completions(1)
                timings.add("read", seconds=time.monotonic() - t0)
                for rec in recs:
                    process(rec)
        while inflight:
            t0 = time.monotonic()
            recs = engine.await_completions(1)
            timings.add("read", seconds=time.monotonic() - t0)
            for rec in recs:
                process(rec)

        counters.file_opens = engine.file_opens

    if alloc is AllocMode.POOLED:
        counters.allocations = pool.allocations
        counters.reuses = pool.reuses

    for e in entries:
        if e.object_id not in verdicts:
            fail(e.object_id, "incomplete-read")
    return RankRestoreResult(
        stats=RankRunStats(rank=rank, timings=timings, counters=counters), verdicts=verdicts
    )


@dataclass
class RestoreResult:
    per_object: dict[str, ObjectVerdict]
    per_rank: dict[int, RankRunStats]

    @property
    def all_passed(self) -> bool:
        return bool(self.per_object) and all(v.passed for v in self.per_object.values())

    def failures(self) -> list[ObjectVerdict]:
        return [v for v in self.per_object.values() if not v.passed]


def restore(
    source: str | Path,
    config: EngineConfig,
    alloc: AllocMode = AllocMode.POOLED,
    mode: EmulationMode = EmulationMode.BATCHED,
    *,
    region_bytes: int = DEFAULT_REGION_BYTES,
    pool_regions: int = DEFAULT_POOL_REGIONS,
    ranks: list[int] | None = None,
) -> RestoreResult:
    """In-process restore + verification of all (or selected) ranks."""
    manifest_path = Path(source)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    if not manifest_path.exists():
        raise ManifestMissingError(f"no manifest at {manifest_path}")
    manifest = parse_manifest(manifest_path.read_text())
    per_object: dict[str, ObjectVerdict] = {}
    per_rank: dict[int, RankRunStats] = {}
    for rank in ranks if ranks is not None else manifest.ranks():
        result = restore_rank(
            rank,
            manifest_path,
            config,
            alloc,
            mode,
            region_bytes=region_bytes,
            pool_regions=pool_regions,
        )
        per_object.update(result.verdicts)
        per_rank[rank] = result.stats
    return RestoreResult(per_object=per_object, per_rank=per_rank)


# ---------------------------------------------------------------------------
# standalone verification (fsck-style, untimed)


@dataclass
class VerifyReport:
    usable: bool
    reason: str
    objects: dict[str, ObjectVerdict]

    @property
    def all_passed(self) -> bool:
        return self.usable and bool(self.objects) and all(v.passed for v in self.objects.values())


def verify_checkpoint(source: str | Path) -> VerifyReport:
    """Re-read every manifest entry and recompute checksums; never raises on
    a broken checkpoint — unusable states are reported, not thrown."""
    path = Path(source)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        return VerifyReport(usable=False, reason="missing-manifest", objects={})
    try:
        manifest = parse_manifest(path.read_text())
    except ShortManifestError as exc:
        return VerifyReport(usable=False, reason=f"short-manifest: {exc}", objects={})
    version_dir = path.parent
    objects: dict[str, ObjectVerdict] = {}
    fds: dict[str, int] = {}
    chunk = 8 * 1024 * 1024
    try:
        for e in manifest.entries:
            cs = StreamingChecksum()
            failure = ""
            for p in sorted(e.parts, key=lambda p: p.object_offset):
                fd = fds.get(p.file_key)
                if fd is None:
                    try:
                        fd = os.open(str(version_dir / p.file_key), os.O_RDONLY)
                    except OSError:
                        failure = "missing-file"
                        break
                    fds[p.file_key] = fd
                done = 0
                while done < p.length:
                    data = os.pread(fd, min(chunk, p.length - done), p.offset + done)
                    if not data:
                        break
                    cs.update(data)
                    done += len(data)
                if done != p.length:
                    failure = "short-read"
                    break
            if failure:
                objects[e.object_id] = ObjectVerdict(e.object_id, passed=False, reason=failure)
            elif cs.digest() != e.checksum:
                objects[e.object_id] = ObjectVerdict(e.object_id, passed=False, reason="checksum-mismatch")
            else:
                objects[e.object_id] = ObjectVerdict(e.object_id, passed=True)
    finally:
        for fd in fds.values():
            os.close(fd)
    return VerifyReport(usable=True, reason="", objects=objects)
