"""Experiment orchestration: rank processes, filesystem rendezvous, reports.

The orchestrator spawns one child process per rank (this module doubles as
that child's entry point). Ranks never share memory; they coordinate through
atomic marker files in a per-run coordination directory, and the shared-file
prefix-sum exchange runs as a serialized chain whose wait time is charged to
the coordination phase.

Throughput accounting: every rank records its own barrier-to-barrier wall
time for the checkpoint (and restore) data path; the aggregate throughput is
total bytes divided by the maximum per-rank wall time, i.e. straggler-bound,
which is how aggregate GB/s is meaningful for concurrent writers.
"""

from __future__ import annotations

import dataclasses
import json
import os
import platform
import socket
import statistics
import subprocess
import sys
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .ckpt import (
    AllocMode,
    CheckpointWriteError,
    DEFAULT_POOL_REGIONS,
    EmulationMode,
    MANIFEST_NAME,
    _effective_region,
    build_checkpoint_schedule,
    build_manifest,
    checkpoint_rank,
    manifest_entry_from_doc,
    manifest_entry_to_doc,
    prepare_checkpoint_version,
    prepare_restore_resources,
    restore_rank,
    version_dirname,
    write_manifest,
)
from .engine import Backend, BufferPool, EngineConfig
from .errors import (
    InvalidArgumentError,
    RankFailureError,
    RendezvousTimeoutError,
)
from .layout import AggregationStrategy, LayoutPlan, plan_layout
from .profiles import resolve_profile, scale_profile
from .workload import (
    DEFAULT_LEAN_BYTES,
    DEFAULT_META_BYTES,
    WorkloadSpec,
    generate_from_profile,
    generate_synthetic,
    warm_checksum_kernel,
)

RUN_SCHEMA_VERSION = 1

ENV_RANK = "CKPTBENCH_RANK"
ENV_WORLD = "CKPTBENCH_WORLD"
ENV_RUN_ID = "CKPTBENCH_RUN_ID"

_POLL_S = 0.002


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """One experiment cell; embedded verbatim in its RunReport."""

    workload_kind: str = "synthetic"  # synthetic | profile
    total_bytes_per_rank: int = 256 * 1024 * 1024
    chunk_bytes: int = 64 * 1024 * 1024  # synthetic tensor size and batching region
    profile: str = ""
    profile_scale: int = 1
    lean_bytes: int = DEFAULT_LEAN_BYTES
    meta_bytes: int = DEFAULT_META_BYTES
    strategy: str = "single-shared-file"
    fragment_chunk_bytes: int = 512 * 1024 * 1024
    backend: str = "ring"
    direct: bool = False
    queue_depth: int = 64
    alignment_bytes: int = 4096
    emulation: str = "batched"
    alloc: str = "pooled"
    num_ranks: int = 1
    repetitions: int = 3
    do_restore: bool = True
    pool_regions: int = DEFAULT_POOL_REGIONS
    master_seed: int = 20240901
    stripe_hint: str = ""
    rendezvous_timeout_s: float = 60.0
    data_dir: str = "ckptbench-runs"
    cleanup_data: bool = False
    label: str = ""

    def __post_init__(self) -> None:
        if self.num_ranks < 1:
            raise InvalidArgumentError("num_ranks must be >= 1")
        if self.repetitions < 1:
            raise InvalidArgumentError("repetitions must be >= 1")
        if self.workload_kind not in ("synthetic", "profile"):
            raise InvalidArgumentError(f"unknown workload kind {self.workload_kind!r}")
        if self.workload_kind == "profile" and not self.profile:
            raise InvalidArgumentError("profile workload needs --profile NAME|PATH")
        AggregationStrategy.parse(self.strategy)  # validates the name
        for enum_type, value in ((Backend, self.backend), (EmulationMode, self.emulation), (AllocMode, self.alloc)):
            try:
                enum_type(value)
            except ValueError:
                raise InvalidArgumentError(
                    f"{value!r} is not one of {[m.value for m in enum_type]}"
                ) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(RunConfig)}
        return RunConfig(**{k: v for k, v in doc.items() if k in known})

    def cell_label(self) -> str:
        if self.label:
            return self.label
        mode = "direct" if self.direct else "buffered"
        return f"{self.strategy}/{self.backend}/{mode}/{self.emulation}"

    def build_workload(self) -> WorkloadSpec:
        if self.workload_kind == "synthetic":
            return generate_synthetic(
                self.total_bytes_per_rank,
                self.chunk_bytes,
                self.num_ranks,
                self.master_seed,
                lean_bytes=self.lean_bytes,
                meta_bytes=self.meta_bytes,
            )
        profile = scale_profile(resolve_profile(self.profile), self.profile_scale)
        return generate_from_profile(profile, self.master_seed)

    def build_plan(self, workload: WorkloadSpec) -> LayoutPlan:
        strategy = AggregationStrategy.parse(self.strategy, self.fragment_chunk_bytes)
        return plan_layout(workload, strategy, self.alignment_bytes, self.direct)

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            backend=Backend(self.backend),
            queue_depth=self.queue_depth,
            direct=self.direct,
            alignment_bytes=self.alignment_bytes,
        )


# ---------------------------------------------------------------------------
# filesystem rendezvous


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.rename(tmp, path)


class Rendezvous:
    """Barrier and broadcast over atomic marker files in a shared directory."""

    def __init__(self, coord_dir: Path, rank: int, world: int, timeout_s: float = 60.0):
        self.coord_dir = Path(coord_dir)
        self.rank = rank
        self.world = world
        self.timeout_s = timeout_s
        self.coord_dir.mkdir(parents=True, exist_ok=True)

    def _wait_for(self, path: Path, what: str) -> None:
        deadline = time.monotonic() + self.timeout_s
        while not path.exists():
            if time.monotonic() > deadline:
                raise RendezvousTimeoutError(
                    f"rank {self.rank}: timed out after {self.timeout_s}s waiting for {what}"
                )
            time.sleep(_POLL_S)

    def barrier(self, name: str) -> float:
        """Block until all ranks arrive; returns seconds spent waiting."""
        t0 = time.monotonic()
        _atomic_write(self.coord_dir / f"{name}.r{self.rank}", b"1")
        for r in range(self.world):
            self._wait_for(self.coord_dir / f"{name}.r{r}", f"barrier {name} rank {r}")
        return time.monotonic() - t0

    def broadcast_json(self, name: str, payload: dict | None = None) -> dict:
        """Rank 0 publishes a JSON document; every rank returns it."""
        path = self.coord_dir / f"{name}.json"
        if self.rank == 0:
            _atomic_write(path, json.dumps(payload).encode())
            return payload  # type: ignore[return-value]
        self._wait_for(path, f"broadcast {name}")
        return json.loads(path.read_bytes())

    def chain_prefix(self, name: str, my_total: int) -> int:
        """Serialized prefix-sum chain: each rank waits for its predecessor.

        Returns this rank's base offset (sum of all predecessors' totals).
        """
        if self.rank == 0:
            base = 0
        else:
            prev = self.coord_dir / f"{name}.r{self.rank - 1}.sum"
            self._wait_for(prev, f"prefix chain rank {self.rank - 1}")
            base = int(prev.read_text())
        _atomic_write(self.coord_dir / f"{name}.r{self.rank}.sum", str(base + my_total).encode())
        return base


def rank_rendezvous(rank: int, world: int, run_id: str, coord_dir: str | Path, timeout_s: float = 60.0) -> Rendezvous:
    if world < 1 or not (0 <= rank < world):
        raise InvalidArgumentError(f"invalid rank {rank} for world {world}")
    return Rendezvous(Path(coord_dir) / run_id, rank, world, timeout_s)


# ---------------------------------------------------------------------------
# rank process body


def _rank_padded_total(plan: LayoutPlan, rank: int) -> int:
    return sum(e.padded_length_bytes for e in plan.entries_for_rank(rank))


def run_rank(config: RunConfig, rank: int, world: int, run_dir: Path) -> int:
    """Body of one rank process across all repetitions; returns an exit code."""
    coord = run_dir / "coord"
    rdv = Rendezvous(coord, rank, world, config.rendezvous_timeout_s)
    workload = config.build_workload()
    # The orchestrator distributes the plan as a JSON document; fall back to
    # recomputing it (deterministic) when running a rank by hand.
    plan_path = run_dir / "plan.json"
    if plan_path.exists():
        plan = LayoutPlan.from_json(plan_path.read_text())
    else:
        plan = config.build_plan(workload)
    econfig = config.engine_config()
    emulation = EmulationMode(config.emulation)
    alloc = AllocMode(config.alloc)
    schedules = build_checkpoint_schedule(workload, plan, emulation, config.chunk_bytes)
    warm_checksum_kernel()  # JIT compile/load happens outside every timed window
    verification_failed = False

    for rep in range(config.repetitions):
        version_dir = run_dir / version_dirname(rep)
        if rank == 0:
            prepare_checkpoint_version(run_dir, rep, plan)
        # Buffer pool is warmed outside the timed window: pooled-mode runs
        # must not allocate inside it.
        pool = BufferPool(
            _effective_region(config.chunk_bytes, config.alignment_bytes, config.direct),
            config.pool_regions,
            config.alignment_bytes,
        )
        pool.warm_up()
        rdv.barrier(f"rep{rep}-setup")

        coordination_s = 0.0
        if plan.serialized_offset_exchange:
            t0 = time.monotonic()
            base = rdv.chain_prefix(f"rep{rep}-prefix", _rank_padded_total(plan, rank))
            coordination_s += time.monotonic() - t0
            if base != plan.rank_base_offsets[rank]:
                print(
                    f"rank {rank}: exchanged base offset {base} != planned "
                    f"{plan.rank_base_offsets[rank]}",
                    file=sys.stderr,
                )
                return 3

        rdv.barrier(f"rep{rep}-ckpt-start")
        w0 = time.monotonic()
        entries, ckpt_stats = checkpoint_rank(
            rank,
            workload,
            plan,
            econfig,
            emulation,
            version_dir,
            schedule=schedules[rank],
            region_bytes=config.chunk_bytes,
            pool=pool,
        )
        ckpt_window = time.monotonic() - w0
        ckpt_stats.timings.add("coordination", seconds=coordination_s)
        _atomic_write(
            coord / f"rep{rep}-entries.r{rank}.json",
            json.dumps([manifest_entry_to_doc(e) for e in entries]).encode(),
        )
        rdv.barrier(f"rep{rep}-data-done")

        if rank == 0:
            merged = []
            for r in range(world):
                docs = json.loads((coord / f"rep{rep}-entries.r{r}.json").read_bytes())
                merged.extend(manifest_entry_from_doc(d) for d in docs)
            t0 = time.monotonic()
            manifest = build_manifest(workload, plan, rep, merged)
            write_manifest(manifest, version_dir)
            ckpt_stats.timings.add("commit", seconds=time.monotonic() - t0)
        rdv.barrier(f"rep{rep}-manifest-done")

        restore_doc = None
        if config.do_restore:
            # Destination/pool/scratch buffers exist before the window opens.
            resources = prepare_restore_resources(
                plan, rank, alloc, config.chunk_bytes, config.pool_regions
            )
            rdv.barrier(f"rep{rep}-restore-start")
            r0 = time.monotonic()
            rres = restore_rank(
                rank,
                version_dir / MANIFEST_NAME,
                econfig,
                alloc,
                emulation,
                region_bytes=config.chunk_bytes,
                pool_regions=config.pool_regions,
                resources=resources,
            )
            restore_window = time.monotonic() - r0
            rdv.barrier(f"rep{rep}-restore-done")
            failed = [v.object_id for v in rres.verdicts.values() if not v.passed]
            if failed:
                verification_failed = True
            restore_doc = {
                "window_s": restore_window,
                "phases": rres.stats.timings.to_dict(),
                "counters": rres.stats.counters.to_dict(),
                "failed_objects": failed,
            }

        metrics = {
            "rank": rank,
            "rep": rep,
            "checkpoint": {
                "window_s": ckpt_window,
                "phases": ckpt_stats.timings.to_dict(),
                "counters": ckpt_stats.counters.to_dict(),
            },
            "restore": restore_doc,
        }
        _atomic_write(coord / f"rep{rep}-metrics.r{rank}.json", json.dumps(metrics).encode())

    return 2 if verification_failed else 0


def child_main(argv: list[str]) -> int:
    config_path = Path(argv[0])
    config = RunConfig.from_dict(json.loads(config_path.read_text()))
    rank = int(os.environ[ENV_RANK])
    world = int(os.environ[ENV_WORLD])
    try:
        return run_rank(config, rank, world, config_path.parent)
    except RendezvousTimeoutError as exc:
        print(f"rank {rank}: {exc}", file=sys.stderr)
        return 4
    except (OSError, CheckpointWriteError) as exc:
        print(f"rank {rank}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


# ---------------------------------------------------------------------------
# orchestrator


def _spawn_rank(config_path: Path, rank: int, world: int, run_id: str, log_dir: Path) -> tuple:
    env = dict(os.environ)
    env[ENV_RANK] = str(rank)
    env[ENV_WORLD] = str(world)
    env[ENV_RUN_ID] = run_id
    src_root = str(Path(__file__).resolve().parents[1])
    env["PYTHONPATH"] = os.pathsep.join(filter(None, [src_root, env.get("PYTHONPATH", "")]))
    err_path = log_dir / f"rank{rank}.err"
    err_file = open(err_path, "wb")
    proc = subprocess.Popen(
        [sys.executable, "-m", "ckptbench.bench", str(config_path)],
        env=env,
        stdout=subprocess.DEVNULL,
        stderr=err_file,
    )
    return proc, err_file, err_path


def _median_block(values: list[float]) -> dict:
    usable = [v for v in values if v is not None]
    if not usable:
        return {"min": None, "median": None, "max": None}
    return {"min": min(usable), "median": statistics.median(usable), "max": max(usable)}


def run_experiment(config: RunConfig) -> dict:
    """Spawn rank processes, run the configured repetitions, merge the report."""
    run_id = os.environ.get(ENV_RUN_ID) or f"{time.strftime('%Y%m%d-%H%M%S')}-{uuid.uuid4().hex[:6]}"
    run_dir = Path(config.data_dir) / f"run-{run_id}"
    (run_dir / "coord").mkdir(parents=True, exist_ok=True)
    log_dir = run_dir / "logs"
    log_dir.mkdir(exist_ok=True)
    config_path = run_dir / "config.json"
    config_path.write_text(json.dumps(config.to_dict(), indent=2))
    (run_dir / "plan.json").write_text(config.build_plan(config.build_workload()).to_json())

    procs = []
    for rank in range(config.num_ranks):
        procs.append(_spawn_rank(config_path, rank, config.num_ranks, run_id, log_dir))

    # Generous deadline: children enforce their own rendezvous timeout.
    deadline = time.monotonic() + config.rendezvous_timeout_s * (config.repetitions + 2) + 600
    exit_codes: dict[int, int] = {}
    for rank, (proc, err_file, err_path) in enumerate(procs):
        remaining = max(deadline - time.monotonic(), 1.0)
        try:
            exit_codes[rank] = proc.wait(timeout=remaining)
        except subprocess.TimeoutExpired:
            proc.kill()
            exit_codes[rank] = -9
        err_file.close()

    for rank, code in exit_codes.items():
        if code not in (0, 2):
            tail = (log_dir / f"rank{rank}.err").read_text()[-2000:]
            for proc, err_file, _ in procs:
                if proc.poll() is None:
                    proc.kill()
            raise RankFailureError(rank, code, tail)

    verification_failed = any(code == 2 for code in exit_codes.values())
    report = _build_report(config, run_dir, verification_failed)
    if config.cleanup_data:
        import shutil

        for rep in range(config.repetitions):
            shutil.rmtree(run_dir / version_dirname(rep), ignore_errors=True)
    return report


def _build_report(config: RunConfig, run_dir: Path, verification_failed: bool) -> dict:
    coord = run_dir / "coord"
    reps = []
    failed_objects: list[str] = []
    for rep in range(config.repetitions):
        per_rank = []
        for rank in range(config.num_ranks):
            path = coord / f"rep{rep}-metrics.r{rank}.json"
            if not path.exists():
                raise RankFailureError(rank, 0, f"missing metrics file for rep {rep}")
            m = json.loads(path.read_bytes())
            ckpt = m["checkpoint"]
            rst = m["restore"]
            if rst:
                failed_objects.extend(rst["failed_objects"])
            row = {
                "rank": rank,
                "bytes_written": ckpt["counters"]["bytes_written"],
                "bytes_read": rst["counters"]["bytes_read"] if rst else 0,
                "write_ops": ckpt["counters"]["write_ops"],
                "read_ops": rst["counters"]["read_ops"] if rst else 0,
                "file_opens": ckpt["counters"]["file_opens"]
                + (rst["counters"]["file_opens"] if rst else 0),
                "allocations": (rst["counters"]["allocations"] if rst else ckpt["counters"]["allocations"]),
                "reuses": (rst["counters"]["reuses"] if rst else ckpt["counters"]["reuses"]),
                "checkpoint": ckpt,
                "restore": rst,
            }
            per_rank.append(row)
        bytes_written = sum(r["bytes_written"] for r in per_rank)
        bytes_read = sum(r["bytes_read"] for r in per_rank)
        ckpt_wall = max(r["checkpoint"]["window_s"] for r in per_rank)
        restore_wall = (
            max(r["restore"]["window_s"] for r in per_rank) if config.do_restore else None
        )
        reps.append(
            {
                "rep": rep,
                "per_rank": per_rank,
                "aggregate": {
                    "bytes_written": bytes_written,
                    "bytes_read": bytes_read,
                    "write_wall_s": ckpt_wall,
                    "read_wall_s": restore_wall,
                    "write_throughput_bytes_per_s": bytes_written / ckpt_wall if ckpt_wall else 0.0,
                    "read_throughput_bytes_per_s": (
                        bytes_read / restore_wall if restore_wall else None
                    ),
                    "wall_time_s": ckpt_wall + (restore_wall or 0.0),
                },
            }
        )
    report = {
        "schema_version": RUN_SCHEMA_VERSION,
        "label": config.cell_label(),
        "config": config.to_dict(),
        "environment": {
            "hostname": socket.gethostname(),
            "platform": platform.platform(),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "stripe_hint": config.stripe_hint,
        },
        "repetitions": reps,
        "aggregate": {
            "write_throughput_bytes_per_s": _median_block(
                [r["aggregate"]["write_throughput_bytes_per_s"] for r in reps]
            ),
            "read_throughput_bytes_per_s": _median_block(
                [r["aggregate"]["read_throughput_bytes_per_s"] for r in reps]
            ),
            "wall_time_s": _median_block([r["aggregate"]["wall_time_s"] for r in reps]),
        },
        "verification": {
            "passed": not verification_failed,
            "failed_objects": sorted(set(failed_objects)),
        },
    }
    return report


# ---------------------------------------------------------------------------
# report emission


_CSV_COLUMNS = [
    "label",
    "strategy",
    "backend",
    "direct",
    "emulation",
    "alloc",
    "queue_depth",
    "alignment_bytes",
    "num_ranks",
    "rep",
    "rank",
    "bytes_written",
    "bytes_read",
    "write_ops",
    "read_ops",
    "file_opens",
    "allocations",
    "reuses",
    "checkpoint_window_s",
    "restore_window_s",
    "write_throughput_bytes_per_s",
    "read_throughput_bytes_per_s",
]


def report_csv_rows(report: dict) -> list[dict]:
    """Flatten a report into one row per (repetition, rank)."""
    cfg = report["config"]
    rows = []
    for rep in report["repetitions"]:
        agg = rep["aggregate"]
        for r in rep["per_rank"]:
            rows.append(
                {
                    "label": report["label"],
                    "strategy": cfg["strategy"],
                    "backend": cfg["backend"],
                    "direct": cfg["direct"],
                    "emulation": cfg["emulation"],
                    "alloc": cfg["alloc"],
                    "queue_depth": cfg["queue_depth"],
                    "alignment_bytes": cfg["alignment_bytes"],
                    "num_ranks": cfg["num_ranks"],
                    "rep": rep["rep"],
                    "rank": r["rank"],
                    "bytes_written": r["bytes_written"],
                    "bytes_read": r["bytes_read"],
                    "write_ops": r["write_ops"],
                    "read_ops": r["read_ops"],
                    "file_opens": r["file_opens"],
                    "allocations": r["allocations"],
                    "reuses": r["reuses"],
                    "checkpoint_window_s": r["checkpoint"]["window_s"],
                    "restore_window_s": r["restore"]["window_s"] if r["restore"] else None,
                    "write_throughput_bytes_per_s": agg["write_throughput_bytes_per_s"],
                    "read_throughput_bytes_per_s": agg["read_throughput_bytes_per_s"],
                }
            )
    return rows


def emit_report(report: dict, fmt: str, out_path: str | Path) -> Path:
    """Write a report as canonical JSON or as a flattened CSV."""
    import csv

    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        out.write_text(json.dumps(report, indent=2) + "\n")
    elif fmt == "csv":
        with open(out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=_CSV_COLUMNS)
            writer.writeheader()
            for row in report_csv_rows(report):
                writer.writerow(row)
    else:
        raise InvalidArgumentError(f"unknown report format {fmt!r}")
    return out


# ---------------------------------------------------------------------------
# presets: one-command reproductions of the figure configuration spaces


PRESET_NAMES = ("aggregation-sweep", "odirect-sweep", "engine-comparison", "llm-profiles")

_AGG_STRATEGIES = ("file-per-shard", "file-per-process", "single-shared-file")


def preset_configs(name: str, base: RunConfig) -> list[RunConfig]:
    """Expand a named experiment matrix around a base configuration."""
    out: list[RunConfig] = []
    if name == "aggregation-sweep":
        for strategy in _AGG_STRATEGIES:
            out.append(
                dataclasses.replace(
                    base,
                    strategy=strategy,
                    emulation="batched",
                    label=f"aggregation-sweep/{strategy}",
                )
            )
    elif name == "odirect-sweep":
        for strategy in _AGG_STRATEGIES:
            for direct in (False, True):
                mode = "direct" if direct else "buffered"
                out.append(
                    dataclasses.replace(
                        base,
                        strategy=strategy,
                        direct=direct,
                        emulation="batched",
                        label=f"odirect-sweep/{strategy}/{mode}",
                    )
                )
    elif name == "engine-comparison":
        cells = [
            ("batched", "single-shared-file", "pooled"),
            ("batched", "single-shared-file", "per-object"),
            ("per-object", "file-per-shard", "per-object"),
            ("fragmented", "fragmented-chunks", "per-object"),
        ]
        for emulation, strategy, alloc in cells:
            out.append(
                dataclasses.replace(
                    base,
                    emulation=emulation,
                    strategy=strategy,
                    alloc=alloc,
                    label=f"engine-comparison/{emulation}-{alloc}",
                )
            )
    elif name == "llm-profiles":
        for profile in ("3b", "7b", "13b"):
            out.append(
                dataclasses.replace(
                    base,
                    workload_kind="profile",
                    profile=profile,
                    strategy="single-shared-file",
                    emulation="batched",
                    label=f"llm-profiles/{profile}",
                )
            )
    else:
        raise InvalidArgumentError(f"unknown preset {name!r}; have {PRESET_NAMES}")
    return out


if __name__ == "__main__":
    sys.exit(child_main(sys.argv[1:]))
