"""Checkpoint workload generation with deterministic, verifiable content.

Every byte of every workload object is a pure function of a 64-bit seed, so
restore verification never needs the original buffers. Both primitives are
pinned bit-exactly so an independent reimplementation can act as an oracle:

Content stream for seed ``s`` (splitmix-style):
    word[i]  = mix64((s + (i+1) * 0x9E3779B97F4A7C15) mod 2^64)   for i >= 0
    mix64(z) : z ^= z >> 30; z *= 0xBF58476D1CE4E5B9  (mod 2^64)
               z ^= z >> 27; z *= 0x94D049BB133111EB  (mod 2^64)
               z ^= z >> 31
    bytes    = little-endian concatenation of word[0], word[1], ...,
               truncated to the object length.

Checksum: 64-bit FNV-1a over the object bytes:
    h = 0xCBF29CE484222325
    for each byte b: h = ((h ^ b) * 0x100000001B3) mod 2^64
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, MalformedProfileError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

DEFAULT_LEAN_BYTES = 64 * 1024
DEFAULT_META_BYTES = 4 * 1024

# Below this size the pure-Python FNV loop beats the JIT call overhead and we
# avoid triggering compilation from tiny property-test inputs.
_JIT_THRESHOLD = 1024

_fnv_jit = None


def _mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, *components: int) -> int:
    """Fold integer components into a stream seed, splitmix-style.

    derive_seed(m, rank, shard, index) is the documented seed of one object.
    """
    s = _mix64(master_seed & MASK64)
    for c in components:
        s = _mix64((s + GOLDEN_GAMMA + (c & MASK64)) & MASK64)
    return s


def _word_block(seed: int, first_word: int, count: int) -> np.ndarray:
    """Words [first_word, first_word+count) of the seed's stream, little-endian u8 view."""
    idx = np.arange(first_word + 1, first_word + 1 + count, dtype=np.uint64)
    state = np.uint64(seed & MASK64) + idx * np.uint64(GOLDEN_GAMMA)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
    z = z ^ (z >> np.uint64(31))
    return z.astype("<u8", copy=False).view(np.uint8)


def fill_object_range(buffer, seed: int, object_offset: int = 0) -> None:
    """Fill ``buffer`` with the object's bytes [object_offset, object_offset+len)."""
    n = len(buffer)
    if n == 0:
        return
    w0 = object_offset // 8
    w1 = (object_offset + n + 7) // 8
    raw = _word_block(seed, w0, w1 - w0)
    lo = object_offset - w0 * 8
    out = np.frombuffer(buffer, dtype=np.uint8)
    out[:] = raw[lo : lo + n]


def _fnv1a_py(state: int, data) -> int:
    h = state
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & MASK64
    return h


def _get_fnv_jit():
    """Lazily compile the FNV-1a kernel; returns None if numba is unusable."""
    global _fnv_jit
    if _fnv_jit is None:
        try:
            from numba import njit

            @njit(cache=True, nogil=True)
            def kernel(arr, state):  # pragma: no cover - jitted
                h = state
                p = np.uint64(FNV_PRIME)
                for i in range(arr.size):
                    h = (h ^ np.uint64(arr[i])) * p
                return h

            kernel(np.zeros(1, dtype=np.uint8), np.uint64(FNV_OFFSET_BASIS))
            _fnv_jit = kernel
        except Exception:
            _fnv_jit = False
    return _fnv_jit or None


def warm_checksum_kernel() -> None:
    """Force JIT compilation/load now, outside any timed window."""
    _get_fnv_jit()


def fnv1a_update(state: int, data) -> int:
    """Advance an FNV-1a 64 state over ``data`` (bytes-like or memoryview)."""
    arr = np.frombuffer(data, dtype=np.uint8)
    if arr.size >= _JIT_THRESHOLD:
        kernel = _get_fnv_jit()
        if kernel is not None:
            return int(kernel(arr, np.uint64(state)))
    return _fnv1a_py(state, arr.tobytes())


def checksum_bytes(data) -> int:
    return fnv1a_update(FNV_OFFSET_BASIS, data)


class StreamingChecksum:
    """Incremental FNV-1a, used when an object is transferred in pieces."""

    __slots__ = ("state",)

    def __init__(self) -> None:
        self.state = FNV_OFFSET_BASIS

    def update(self, data) -> None:
        self.state = fnv1a_update(self.state, data)

    def digest(self) -> int:
        return self.state


def fill_buffer(buffer, seed: int) -> int:
    """Fill a writable byte region from ``seed`` and return its checksum."""
    if len(buffer) < 1:
        raise InvalidArgumentError("fill_buffer requires a region of at least 1 byte")
    fill_object_range(buffer, seed, 0)
    return checksum_bytes(buffer)


def object_checksum(seed: int, size_bytes: int, scratch_bytes: int = 8 * 1024 * 1024) -> int:
    """Checksum of a whole object without materializing it at once."""
    if size_bytes < 1:
        raise InvalidArgumentError("object size must be >= 1")
    state = FNV_OFFSET_BASIS
    scratch = np.empty(min(size_bytes, scratch_bytes), dtype=np.uint8)
    off = 0
    while off < size_bytes:
        n = min(len(scratch), size_bytes - off)
        view = scratch[:n]
        fill_object_range(view, seed, off)
        state = fnv1a_update(state, view)
        off += n
    return state


class ObjectKind(str, Enum):
    TENSOR = "tensor"
    LEAN_OBJECT = "lean"
    METADATA_HEADER = "meta"


@dataclass(frozen=True)
class ObjectSpec:
    object_id: str
    rank: int
    shard_index: int
    kind: ObjectKind
    size_bytes: int
    content_seed: int


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    num_ranks: int
    shards_per_rank: int
    objects: tuple[ObjectSpec, ...]
    master_seed: int

    def __post_init__(self) -> None:
        if self.num_ranks < 1:
            raise InvalidArgumentError("num_ranks must be >= 1")
        seen: set[tuple[int, int, str]] = set()
        total = 0
        for obj in self.objects:
            if obj.size_bytes < 1:
                raise InvalidArgumentError(f"object {obj.object_id} has size < 1")
            if not (0 <= obj.rank < self.num_ranks):
                raise InvalidArgumentError(f"object {obj.object_id} rank out of range")
            key = (obj.rank, obj.shard_index, obj.object_id)
            if key in seen:
                raise InvalidArgumentError(f"duplicate object key {key}")
            seen.add(key)
            total += obj.size_bytes
        if total <= 0:
            raise InvalidArgumentError("workload has no bytes")

    def objects_for_rank(self, rank: int) -> tuple[ObjectSpec, ...]:
        return tuple(o for o in self.objects if o.rank == rank)

    def shard_indices(self, rank: int) -> tuple[int, ...]:
        return tuple(sorted({o.shard_index for o in self.objects_for_rank(rank)}))

    def total_bytes(self, rank: int | None = None) -> int:
        objs = self.objects if rank is None else self.objects_for_rank(rank)
        return sum(o.size_bytes for o in objs)

    def count(self, kind: ObjectKind | None = None) -> int:
        if kind is None:
            return len(self.objects)
        return sum(1 for o in self.objects if o.kind is kind)


def _shard_objects(
    rank: int,
    shard: int,
    tensor_sizes: list[int],
    master_seed: int,
    lean_bytes: int,
    meta_bytes: int,
) -> list[ObjectSpec]:
    """Canonical per-shard object list: lean, metadata header, then tensors."""
    objs = [
        ObjectSpec(
            object_id=f"r{rank}-s{shard}-lean",
            rank=rank,
            shard_index=shard,
            kind=ObjectKind.LEAN_OBJECT,
            size_bytes=lean_bytes,
            content_seed=derive_seed(master_seed, rank, shard, 0),
        ),
        ObjectSpec(
            object_id=f"r{rank}-s{shard}-meta",
            rank=rank,
            shard_index=shard,
            kind=ObjectKind.METADATA_HEADER,
            size_bytes=meta_bytes,
            content_seed=derive_seed(master_seed, rank, shard, 1),
        ),
    ]
    for i, size in enumerate(tensor_sizes):
        objs.append(
            ObjectSpec(
                object_id=f"r{rank}-s{shard}-t{i:05d}",
                rank=rank,
                shard_index=shard,
                kind=ObjectKind.TENSOR,
                size_bytes=size,
                content_seed=derive_seed(master_seed, rank, shard, 2 + i),
            )
        )
    return objs


def generate_synthetic(
    total_bytes_per_rank: int,
    chunk_bytes: int,
    num_ranks: int,
    master_seed: int,
    *,
    lean_bytes: int = DEFAULT_LEAN_BYTES,
    meta_bytes: int = DEFAULT_META_BYTES,
) -> WorkloadSpec:
    """One shard per rank, tensors of chunk_bytes each (last possibly short)."""
    if chunk_bytes < 1 or total_bytes_per_rank < 1:
        raise InvalidArgumentError("sizes must be >= 1")
    if chunk_bytes > total_bytes_per_rank:
        raise InvalidArgumentError("chunk_bytes exceeds total_bytes_per_rank")
    if num_ranks < 1:
        raise InvalidArgumentError("num_ranks must be >= 1")
    if lean_bytes < 1 or meta_bytes < 1:
        raise InvalidArgumentError("lean/meta sizes must be >= 1")

    full, rem = divmod(total_bytes_per_rank, chunk_bytes)
    tensor_sizes = [chunk_bytes] * full + ([rem] if rem else [])
    objects: list[ObjectSpec] = []
    for rank in range(num_ranks):
        objects.extend(
            _shard_objects(rank, 0, tensor_sizes, master_seed, lean_bytes, meta_bytes)
        )
    name = f"synthetic-{total_bytes_per_rank}x{num_ranks}-c{chunk_bytes}"
    return WorkloadSpec(
        name=name,
        num_ranks=num_ranks,
        shards_per_rank=1,
        objects=tuple(objects),
        master_seed=master_seed,
    )


@dataclass(frozen=True)
class ProfileEntry:
    rank: int
    shard_index: int
    kind: ObjectKind
    size_bytes: int


@dataclass(frozen=True)
class ModelProfile:
    """Per-rank object size layout of a model checkpoint.

    provenance is "built-in" for the shipped approximate profiles and
    "loaded-from-file" for user-supplied ones.
    """

    name: str
    num_ranks: int
    entries: tuple[ProfileEntry, ...]
    provenance: str = "built-in"

    def __post_init__(self) -> None:
        if self.num_ranks < 1:
            raise MalformedProfileError("profile needs at least one rank")
        ranks = {e.rank for e in self.entries}
        if ranks != set(range(self.num_ranks)):
            raise MalformedProfileError(
                f"profile ranks {sorted(ranks)} do not cover 0..{self.num_ranks - 1}"
            )
        for e in self.entries:
            if e.size_bytes < 1:
                raise MalformedProfileError("profile contains a zero-size object")

    def total_bytes(self) -> int:
        return sum(e.size_bytes for e in self.entries)

    def file_count(self) -> int:
        """Number of (rank, shard) files in the profile's native layout."""
        return len({(e.rank, e.shard_index) for e in self.entries})


def generate_from_profile(profile: ModelProfile, master_seed: int) -> WorkloadSpec:
    """One ObjectSpec per profile entry; shard boundaries follow the profile."""
    objects: list[ObjectSpec] = []
    per_shard_counter: dict[tuple[int, int], int] = {}
    kind_tag = {
        ObjectKind.TENSOR: "t",
        ObjectKind.LEAN_OBJECT: "lean",
        ObjectKind.METADATA_HEADER: "meta",
    }
    for e in profile.entries:
        key = (e.rank, e.shard_index)
        idx = per_shard_counter.get(key, 0)
        per_shard_counter[key] = idx + 1
        tag = kind_tag[e.kind]
        suffix = tag if tag != "t" else f"t{idx:05d}"
        objects.append(
            ObjectSpec(
                object_id=f"r{e.rank}-s{e.shard_index}-{suffix}",
                rank=e.rank,
                shard_index=e.shard_index,
                kind=e.kind,
                size_bytes=e.size_bytes,
                content_seed=derive_seed(master_seed, e.rank, e.shard_index, idx),
            )
        )
    shards_per_rank = max(
        len({e.shard_index for e in profile.entries if e.rank == r})
        for r in range(profile.num_ranks)
    )
    return WorkloadSpec(
        name=profile.name,
        num_ranks=profile.num_ranks,
        shards_per_rank=shards_per_rank,
        objects=tuple(objects),
        master_seed=master_seed,
    )


_KIND_NAMES = {k.value: k for k in ObjectKind}


def parse_profile_text(text: str, name: str, provenance: str = "loaded-from-file") -> ModelProfile:
    """Parse the line-oriented profile format: ``rank shard kind size_bytes``."""
    entries: list[ProfileEntry] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise MalformedProfileError(f"line {lineno}: expected 'rank shard kind size_bytes'")
        try:
            rank, shard = int(parts[0]), int(parts[1])
            size = int(parts[3])
        except ValueError as exc:
            raise MalformedProfileError(f"line {lineno}: non-integer field") from exc
        kind = _KIND_NAMES.get(parts[2])
        if kind is None:
            raise MalformedProfileError(
                f"line {lineno}: unknown kind {parts[2]!r} (expected tensor|lean|meta)"
            )
        if rank < 0 or shard < 0:
            raise MalformedProfileError(f"line {lineno}: negative rank or shard")
        if size < 1:
            raise MalformedProfileError(f"line {lineno}: size must be >= 1")
        entries.append(ProfileEntry(rank, shard, kind, size))
    if not entries:
        raise MalformedProfileError("profile file has no entries")
    num_ranks = max(e.rank for e in entries) + 1
    return ModelProfile(name=name, num_ranks=num_ranks, entries=tuple(entries), provenance=provenance)


def format_profile_text(profile: ModelProfile) -> str:
    lines = [f"# profile {profile.name} ({profile.provenance})"]
    for e in profile.entries:
        lines.append(f"{e.rank} {e.shard_index} {e.kind.value} {e.size_bytes}")
    return "\n".join(lines) + "\n"


def load_profile(path: str | Path) -> ModelProfile:
    p = Path(path)
    return parse_profile_text(p.read_text(), name=p.stem)
