"""Built-in approximate model checkpoint profiles.

Per-file size distributions of the reference models are not published as
machine-readable data, so these profiles are synthesized to satisfy the
documented aggregates and are labeled "built-in" (approximate) in reports:

* 3b:  4 ranks, 33 shard files per rank (132 files), tensor payload
       42.0 GB total; largest single file 8 GB per rank.
* 7b:  8 ranks, 24 shard files per rank (192 files), ~63.5 GB total.
* 13b: 16 ranks, 34 shard files per rank (544 files), ~121 GB total;
       20 of 34 tensors per rank (59%) are <= 5 MB, so more than half of
       the data files are small-object traffic.

Exact replications can be loaded from a profile file instead (see
workload.parse_profile_text).
"""

from __future__ import annotations

from pathlib import Path

from .workload import (
    DEFAULT_LEAN_BYTES,
    DEFAULT_META_BYTES,
    ModelProfile,
    ObjectKind,
    ProfileEntry,
    load_profile,
)

MB = 1_000_000

# 32 mid/small tensors accompanying the 8 GB main shard; sums to 2500 MB so
# each rank carries exactly 10.5 GB of tensor payload (4 x 10.5 = 42 GB).
_3B_TAIL_MB = [
    500, 350, 250, 200, 150, 125, 100, 90, 80, 70, 65, 60, 55, 50, 50, 45,
    40, 35, 30, 25, 20, 18, 16, 14, 12, 10, 9, 8, 7, 6, 5, 5,
]
assert sum(_3B_TAIL_MB) == 2500 and len(_3B_TAIL_MB) == 32

_7B_SHARDS_MB = [
    6000, 450, 300, 250, 200, 150, 120, 100, 80, 60, 50, 40,
    30, 25, 20, 15, 12, 10, 8, 6, 5, 4, 3, 2,
]

_13B_LARGE_MB = [4000, 2000]
_13B_MID_MB = [500, 300, 200, 150, 100, 80, 60, 50, 40, 30, 20, 10]
_13B_SMALL_MB = [5, 5, 4, 4, 3, 3, 3, 2, 2, 2, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1]

# Fraction of per-rank tensors at or below 5 MB in the 13b profile.
SMALL_TENSOR_FRACTION_13B = len(_13B_SMALL_MB) / (
    len(_13B_LARGE_MB) + len(_13B_MID_MB) + len(_13B_SMALL_MB)
)
SMALL_TENSOR_LIMIT_BYTES = 5 * MB


def _uniform_profile(name: str, num_ranks: int, shard_tensor_mb: list[int]) -> ModelProfile:
    entries: list[ProfileEntry] = []
    for rank in range(num_ranks):
        for shard, size_mb in enumerate(shard_tensor_mb):
            entries.append(ProfileEntry(rank, shard, ObjectKind.LEAN_OBJECT, DEFAULT_LEAN_BYTES))
            entries.append(ProfileEntry(rank, shard, ObjectKind.METADATA_HEADER, DEFAULT_META_BYTES))
            entries.append(ProfileEntry(rank, shard, ObjectKind.TENSOR, size_mb * MB))
    return ModelProfile(name=name, num_ranks=num_ranks, entries=tuple(entries), provenance="built-in")


def _build_3b() -> ModelProfile:
    return _uniform_profile("3b", 4, [8000] + _3B_TAIL_MB)


def _build_7b() -> ModelProfile:
    return _uniform_profile("7b", 8, _7B_SHARDS_MB)


def _build_13b() -> ModelProfile:
    return _uniform_profile("13b", 16, _13B_LARGE_MB + _13B_MID_MB + _13B_SMALL_MB)


_BUILTIN = {"3b": _build_3b, "7b": _build_7b, "13b": _build_13b}


def builtin_profile_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILTIN))


def get_builtin_profile(name: str) -> ModelProfile:
    try:
        return _BUILTIN[name.lower()]()
    except KeyError:
        raise KeyError(f"unknown built-in profile {name!r}; have {sorted(_BUILTIN)}") from None


def resolve_profile(name_or_path: str) -> ModelProfile:
    """Accept a built-in name (3b, 7b, 13b) or a path to a profile file."""
    if name_or_path.lower() in _BUILTIN:
        return get_builtin_profile(name_or_path)
    p = Path(name_or_path)
    if not p.exists():
        raise FileNotFoundError(
            f"{name_or_path!r} is neither a built-in profile ({sorted(_BUILTIN)}) nor a file"
        )
    return load_profile(p)


def scale_profile(profile: ModelProfile, divisor: int) -> ModelProfile:
    """Divide every object size by ``divisor`` (floor, min 1 byte) for desk-scale runs."""
    if divisor < 1:
        raise ValueError("divisor must be >= 1")
    if divisor == 1:
        return profile
    entries = tuple(
        ProfileEntry(e.rank, e.shard_index, e.kind, max(1, e.size_bytes // divisor))
        for e in profile.entries
    )
    return ModelProfile(
        name=f"{profile.name}/{divisor}",
        num_ranks=profile.num_ranks,
        entries=entries,
        provenance=profile.provenance,
    )
