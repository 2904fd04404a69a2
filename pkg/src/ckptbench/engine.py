"""Batched asynchronous I/O engine with a blocking baseline and an aligned buffer pool.

The ring backend pins the submission/completion semantics of a kernel
submission ring: callers submit batches of positioned read/write requests,
at most ``queue_depth`` are outstanding at once (excess requests wait in a
backpressure queue, never error), and completions are harvested separately.
Requests are serviced by a small worker-thread pool using positioned
preadv/pwritev syscalls, which release the GIL, so batched requests overlap.

The blocking backend executes each request synchronously at submit time but
preserves the same call contract, serving as the POSIX-style baseline.

Direct mode opens files with O_DIRECT and enforces offset/length/buffer
alignment on every request; an unsupported filesystem surfaces a
DirectUnsupportedError, never a silent fallback to buffered I/O.
"""

from __future__ import annotations

import ctypes
import errno as _errno
import mmap
import os
import threading
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    AlignmentViolationError,
    DirectUnsupportedError,
    InvalidArgumentError,
    InvalidHandleError,
)

_MAX_WORKERS = 8
_DIRECT_OPEN_ERRNOS = {_errno.EINVAL, _errno.ENOTSUP, _errno.EOPNOTSUPP}

DEFAULT_POOL_REGION_BYTES = 64 * 1024 * 1024
DEFAULT_POOL_REGION_COUNT = 4


class Backend(str, Enum):
    RING = "ring"
    BLOCKING = "blocking"


class OpenMode(Enum):
    READ_ONLY = "read-only"
    WRITE_CREATE = "write-create"  # creates, truncating any existing file
    WRITE_NO_TRUNC = "write-no-trunc"  # shared-file writers after rank 0 created it


class IoOp(Enum):
    WRITE = "write"
    READ = "read"


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class EngineConfig:
    backend: Backend = Backend.RING
    queue_depth: int = 64
    direct: bool = False
    alignment_bytes: int = 4096
    sync_on_close: bool = True

    def __post_init__(self) -> None:
        if self.queue_depth < 1:
            raise InvalidArgumentError("queue_depth must be >= 1")
        if self.direct and (not _is_power_of_two(self.alignment_bytes) or self.alignment_bytes < 512):
            raise InvalidArgumentError("direct mode needs a power-of-two alignment >= 512")


@dataclass
class EngineFile:
    path: str
    mode: OpenMode
    fd: int
    direct: bool
    closed: bool = False

    @property
    def writable(self) -> bool:
        return self.mode is not OpenMode.READ_ONLY


@dataclass
class IoRequest:
    file: EngineFile
    op: IoOp
    offset_bytes: int
    buffer: memoryview
    length_bytes: int
    tag: object = None


@dataclass
class CompletionRecord:
    tag: object
    op: IoOp
    bytes_transferred: int
    error: str | None
    error_errno: int | None
    submit_time: float
    complete_time: float

    @property
    def ok(self) -> bool:
        return self.error is None


def buffer_address(buf) -> int:
    """Base address of any buffer-protocol object, without copying."""
    return np.frombuffer(buf, dtype=np.uint8).ctypes.data


class AlignedRegion:
    """A page-backed byte region whose base address satisfies a given alignment."""

    __slots__ = ("_mm", "view", "address", "size", "pooled")

    def __init__(self, size: int, alignment: int, pooled: bool = False):
        self._mm = mmap.mmap(-1, size + alignment)
        base = ctypes.addressof(ctypes.c_char.from_buffer(self._mm))
        off = (-base) % alignment
        self.view = memoryview(self._mm)[off : off + size]
        self.address = base + off
        self.size = size
        self.pooled = pooled


class BufferPool:
    """Bounded pool of reusable aligned regions (LIFO reuse).

    Regions are created lazily; after warm-up, acquire/release cycles only
    ever increment ``reuses``. ``acquire`` blocks while all regions are in
    use — backpressure is the contract, not an error.
    """

    def __init__(
        self,
        region_size_bytes: int = DEFAULT_POOL_REGION_BYTES,
        region_count: int = DEFAULT_POOL_REGION_COUNT,
        alignment_bytes: int = 4096,
    ):
        if region_size_bytes < 1 or region_count < 1:
            raise InvalidArgumentError("pool needs region_size_bytes >= 1 and region_count >= 1")
        self.region_size_bytes = region_size_bytes
        self.region_count = region_count
        self.alignment_bytes = alignment_bytes
        self.allocations = 0
        self.reuses = 0
        self._free: list[AlignedRegion] = []
        self._created = 0
        self._cv = threading.Condition()

    def warm_up(self) -> None:
        with self._cv:
            while self._created < self.region_count:
                self._free.append(self._new_region())

    def _new_region(self) -> AlignedRegion:
        region = AlignedRegion(self.region_size_bytes, self.alignment_bytes, pooled=True)
        self._created += 1
        self.allocations += 1
        return region

    def acquire(self, min_bytes: int | None = None) -> AlignedRegion:
        if min_bytes is not None and min_bytes > self.region_size_bytes:
            # Oversize requests get a dedicated region; it is not recycled.
            with self._cv:
                self.allocations += 1
            return AlignedRegion(min_bytes, self.alignment_bytes, pooled=False)
        with self._cv:
            while True:
                if self._free:
                    self.reuses += 1
                    return self._free.pop()
                if self._created < self.region_count:
                    return self._new_region()
                self._cv.wait()

    def release(self, region: AlignedRegion) -> None:
        if not region.pooled:
            return
        with self._cv:
            self._free.append(region)
            self._cv.notify()

    @property
    def in_use(self) -> int:
        with self._cv:
            return self._created - len(self._free)


class IoEngine:
    """One engine instance per rank; confined to a single submitting thread."""

    def __init__(self, config: EngineConfig):
        self.config = config
        self.file_opens = 0
        self._files: list[EngineFile] = []
        self._cv = threading.Condition()
        self._backpressure: deque[tuple[IoRequest, float]] = deque()
        self._ready: deque[tuple[IoRequest, float]] = deque()
        self._inflight = 0  # promoted into the ring, not yet completed
        self._completed: list[CompletionRecord] = []
        self._shutdown = False
        self._workers: list[threading.Thread] = []
        if config.backend is Backend.RING:
            for i in range(min(config.queue_depth, _MAX_WORKERS)):
                t = threading.Thread(target=self._worker, name=f"ckptbench-io-{i}", daemon=True)
                t.start()
                self._workers.append(t)

    # -- file handles ------------------------------------------------------

    def open_file(self, path: str | Path, mode: OpenMode) -> EngineFile:
        flags = os.O_CLOEXEC
        if mode is OpenMode.READ_ONLY:
            flags |= os.O_RDONLY
        elif mode is OpenMode.WRITE_CREATE:
            flags |= os.O_WRONLY | os.O_CREAT | os.O_TRUNC
        else:
            flags |= os.O_WRONLY | os.O_CREAT
        if self.config.direct:
            flags |= os.O_DIRECT
        try:
            fd = os.open(str(path), flags, 0o644)
        except OSError as exc:
            if self.config.direct and exc.errno in _DIRECT_OPEN_ERRNOS:
                raise DirectUnsupportedError(
                    exc.errno, f"filesystem rejected O_DIRECT open of {path}: {exc.strerror}"
                ) from exc
            raise
        handle = EngineFile(path=str(path), mode=mode, fd=fd, direct=self.config.direct)
        self._files.append(handle)
        self.file_opens += 1
        return handle

    def close_file(self, handle: EngineFile) -> None:
        if handle.closed:
            return
        if self.config.sync_on_close and handle.writable:
            os.fsync(handle.fd)
        os.close(handle.fd)
        handle.closed = True
        handle.fd = -1

    def sync_file(self, handle: EngineFile) -> None:
        os.fsync(handle.fd)

    # -- submission / completion -------------------------------------------

    def _validate(self, req: IoRequest) -> None:
        f = req.file
        if f.closed or f.fd < 0:
            raise InvalidHandleError(f"request {req.tag!r} targets a closed handle")
        if req.op is IoOp.WRITE and not f.writable:
            raise InvalidHandleError(f"write request {req.tag!r} on read-only handle {f.path}")
        if req.op is IoOp.READ and f.writable:
            raise InvalidHandleError(f"read request {req.tag!r} on write handle {f.path}")
        if req.length_bytes < 1:
            raise InvalidArgumentError("request length must be >= 1")
        if len(req.buffer) != req.length_bytes:
            raise InvalidArgumentError(
                f"buffer length {len(req.buffer)} != request length {req.length_bytes}"
            )
        if req.offset_bytes < 0:
            raise InvalidArgumentError("negative offset")
        if f.direct:
            a = self.config.alignment_bytes
            if req.offset_bytes % a or req.length_bytes % a:
                raise AlignmentViolationError(
                    f"direct request {req.tag!r}: offset {req.offset_bytes} / "
                    f"length {req.length_bytes} not multiples of {a}"
                )
            if buffer_address(req.buffer) % a:
                raise AlignmentViolationError(
                    f"direct request {req.tag!r}: buffer base address not {a}-aligned"
                )

    def submit_batch(self, requests: list[IoRequest]) -> int:
        """Queue a batch; at most queue_depth are in flight, the rest backpressure."""
        for req in requests:
            self._validate(req)
        now = time.monotonic()
        if self.config.backend is Backend.BLOCKING:
            for req in requests:
                rec = self._execute(req, now)
                with self._cv:
                    self._completed.append(rec)
                    self._cv.notify_all()
        else:
            with self._cv:
                for req in requests:
                    self._backpressure.append((req, now))
                self._promote_locked()
                self._cv.notify_all()
        return len(requests)

    def _promote_locked(self) -> None:
        while self._backpressure and self._inflight < self.config.queue_depth:
            self._ready.append(self._backpressure.popleft())
            self._inflight += 1
        assert self._inflight <= self.config.queue_depth

    def _worker(self) -> None:
        while True:
            with self._cv:
                while not self._ready and not self._shutdown:
                    self._cv.wait()
                if self._shutdown and not self._ready:
                    return
                req, submit_t = self._ready.popleft()
            rec = self._execute(req, submit_t)
            with self._cv:
                self._inflight -= 1
                self._completed.append(rec)
                self._promote_locked()
                self._cv.notify_all()

    def _execute(self, req: IoRequest, submit_time: float) -> CompletionRecord:
        transferred = 0
        err = None
        err_no = None
        try:
            mv = req.buffer
            length = req.length_bytes
            fd = req.file.fd
            pos = 0
            # Short transfers are resubmitted with adjusted offset/length so
            # callers always see all-or-error; iteration count is bounded.
            guard = length // 512 + 2
            iters = 0
            while pos < length:
                iters += 1
                if iters > guard:
                    raise OSError(_errno.EIO, f"short-transfer loop exceeded {guard} rounds")
                if req.op is IoOp.WRITE:
                    n = os.pwritev(fd, [mv[pos:length]], req.offset_bytes + pos)
                else:
                    n = os.preadv(fd, [mv[pos:length]], req.offset_bytes + pos)
                if n <= 0:
                    raise OSError(
                        _errno.EIO,
                        f"short {req.op.value}: got {pos} of {length} bytes at offset {req.offset_bytes}",
                    )
                pos += n
            transferred = pos
        except OSError as exc:
            err_no = exc.errno
            name = _errno.errorcode.get(exc.errno or 0, str(exc.errno))
            err = f"{name}: {exc.strerror or exc}"
        except Exception as exc:  # worker must never die: surface in the record
            err = f"{type(exc).__name__}: {exc}"
        return CompletionRecord(
            tag=req.tag,
            op=req.op,
            bytes_transferred=transferred,
            error=err,
            error_errno=err_no,
            submit_time=submit_time,
            complete_time=time.monotonic(),
        )

    def outstanding(self) -> int:
        with self._cv:
            return self._inflight + len(self._backpressure) + len(self._completed)

    def await_completions(self, min_count: int) -> list[CompletionRecord]:
        """Block until >= min_count completions are harvestable; return all available."""
        with self._cv:
            if min_count > self._inflight + len(self._backpressure) + len(self._completed):
                raise InvalidArgumentError(
                    f"await_completions({min_count}) exceeds outstanding request count"
                )
            while len(self._completed) < min_count:
                self._cv.wait()
            out = self._completed
            self._completed = []
            return out

    def drain(self) -> list[CompletionRecord]:
        """Harvest every outstanding completion."""
        with self._cv:
            while self._inflight or self._backpressure:
                self._cv.wait()
            out = self._completed
            self._completed = []
            return out

    def close(self) -> None:
        self.drain()
        for handle in self._files:
            self.close_file(handle)
        with self._cv:
            self._shutdown = True
            self._cv.notify_all()
        for t in self._workers:
            t.join(timeout=5.0)
        self._workers.clear()

    def __enter__(self) -> "IoEngine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def direct_io_supported(directory: str | Path, alignment: int = 4096) -> bool:
    """Probe whether the filesystem under ``directory`` accepts O_DIRECT."""
    probe = Path(directory) / f".direct-probe-{os.getpid()}"
    try:
        fd = os.open(str(probe), os.O_WRONLY | os.O_CREAT | os.O_TRUNC | os.O_DIRECT, 0o644)
    except OSError:
        return False
    try:
        region = AlignedRegion(alignment, alignment)
        os.pwritev(fd, [region.view], 0)
        return True
    except OSError:
        return False
    finally:
        os.close(fd)
        probe.unlink(missing_ok=True)
