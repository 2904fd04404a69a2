"""Command-line front end.

Subcommands: ``synthetic`` and ``llm`` run experiments (single cell or a
named preset matrix), ``verify`` re-checks an existing checkpoint, and
``report`` re-emits stored JSON reports (optionally merged) as CSV or JSON.

Exit codes: 0 success, 2 verification failure, 3 I/O error, 4 rendezvous
timeout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import (
    PRESET_NAMES,
    RunConfig,
    emit_report,
    preset_configs,
    report_csv_rows,
    run_experiment,
)
from .ckpt import verify_checkpoint, version_dirname
from .errors import (
    CkptBenchError,
    DirectUnsupportedError,
    InvalidArgumentError,
    RankFailureError,
    RendezvousTimeoutError,
)

EXIT_OK = 0
EXIT_VERIFICATION = 2
EXIT_IO = 3
EXIT_RENDEZVOUS = 4

_SIZE_SUFFIXES = {
    "k": 1024,
    "kib": 1024,
    "m": 1024**2,
    "mib": 1024**2,
    "g": 1024**3,
    "gib": 1024**3,
    "kb": 1000,
    "mb": 1000**2,
    "gb": 1000**3,
}


def parse_size(text: str) -> int:
    """Accept plain byte counts and binary/decimal suffixes (64M, 8GiB, 1GB)."""
    s = text.strip().lower().replace("_", "")
    for suffix in sorted(_SIZE_SUFFIXES, key=len, reverse=True):
        if s.endswith(suffix):
            return int(float(s[: -len(suffix)]) * _SIZE_SUFFIXES[suffix])
    return int(s)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--strategy",
        default="single-shared-file",
        choices=["file-per-shard", "file-per-process", "single-shared-file", "fragmented-chunks"],
    )
    p.add_argument("--backend", default="ring", choices=["ring", "blocking"])
    direct = p.add_mutually_exclusive_group()
    direct.add_argument("--direct", dest="direct", action="store_true")
    direct.add_argument("--buffered", dest="direct", action="store_false")
    p.set_defaults(direct=False)
    p.add_argument("--queue-depth", type=int, default=64, metavar="N")
    p.add_argument("--alignment", type=parse_size, default=4096, metavar="N")
    p.add_argument("--chunk-size", type=parse_size, default=64 * 1024 * 1024, metavar="BYTES")
    p.add_argument("--ranks", type=int, default=1, metavar="N")
    p.add_argument("--emulation", default="batched", choices=["batched", "per-object", "fragmented"])
    p.add_argument("--alloc", default="pooled", choices=["pooled", "per-object"])
    p.add_argument("--runs", type=int, default=3, metavar="N", help="repetitions per cell")
    p.add_argument("--dir", default="ckptbench-runs", metavar="PATH", help="target data directory")
    p.add_argument("--out", default="", metavar="PATH", help="report file (or directory for presets)")
    p.add_argument("--format", default="json", choices=["json", "csv"])
    p.add_argument("--preset", default="", metavar="NAME", help=f"one of {', '.join(PRESET_NAMES)}")
    p.add_argument("--no-restore", dest="restore", action="store_false", help="checkpoint only")
    p.add_argument("--cleanup", action="store_true", help="delete checkpoint data after each run")
    p.add_argument("--seed", type=int, default=20240901)
    p.add_argument("--pool-regions", type=int, default=4)
    p.add_argument("--fragment-chunk", type=parse_size, default=512 * 1024 * 1024, metavar="BYTES")
    p.add_argument("--stripe-hint", default="", help="recorded in reports; not enforced")
    p.add_argument("--timeout", type=float, default=60.0, help="rendezvous timeout seconds")


def _base_config(args: argparse.Namespace, workload_kind: str) -> RunConfig:
    return RunConfig(
        workload_kind=workload_kind,
        total_bytes_per_rank=getattr(args, "total_size", 0) or 256 * 1024 * 1024,
        chunk_bytes=args.chunk_size,
        profile=getattr(args, "profile", ""),
        profile_scale=getattr(args, "scale", 1),
        strategy=args.strategy,
        fragment_chunk_bytes=args.fragment_chunk,
        backend=args.backend,
        direct=args.direct,
        queue_depth=args.queue_depth,
        alignment_bytes=args.alignment,
        emulation=args.emulation,
        alloc=args.alloc,
        num_ranks=args.ranks,
        repetitions=args.runs,
        do_restore=args.restore,
        pool_regions=args.pool_regions,
        master_seed=args.seed,
        stripe_hint=args.stripe_hint,
        rendezvous_timeout_s=args.timeout,
        data_dir=args.dir,
        cleanup_data=args.cleanup,
    )


def _run_cells(configs: list[RunConfig], args: argparse.Namespace) -> int:
    multi = len(configs) > 1
    out_arg = args.out
    exit_code = EXIT_OK
    for config in configs:
        report = run_experiment(config)
        if multi:
            out_dir = Path(out_arg or "reports")
            stem = report["label"].replace("/", "_")
            path = out_dir / f"{stem}.{args.format}"
        else:
            path = Path(out_arg or f"report.{args.format}")
        emit_report(report, args.format, path)
        agg = report["aggregate"]["write_throughput_bytes_per_s"]
        ok = report["verification"]["passed"]
        print(
            f"{report['label']}: write {_fmt_rate(agg['median'])} "
            f"(min {_fmt_rate(agg['min'])}, max {_fmt_rate(agg['max'])}), "
            f"verification {'PASS' if ok else 'FAIL'} -> {path}"
        )
        if not ok:
            exit_code = EXIT_VERIFICATION
    return exit_code


def _fmt_rate(v: float | None) -> str:
    if v is None:
        return "n/a"
    for unit in ("B/s", "KiB/s", "MiB/s", "GiB/s"):
        if v < 1024 or unit == "GiB/s":
            return f"{v:.1f} {unit}"
        v /= 1024
    return f"{v:.1f} GiB/s"


def cmd_synthetic(args: argparse.Namespace) -> int:
    base = _base_config(args, "synthetic")
    configs = preset_configs(args.preset, base) if args.preset else [base]
    return _run_cells(configs, args)


def cmd_llm(args: argparse.Namespace) -> int:
    base = _base_config(args, "profile" if args.profile else "synthetic")
    if not args.profile and not args.preset:
        raise InvalidArgumentError("llm needs --profile NAME|PATH or --preset llm-profiles")
    if args.preset:
        configs = preset_configs(args.preset, base)
        # the llm-profiles preset supplies its own workload selectors
        if args.preset != "llm-profiles" and not args.profile:
            raise InvalidArgumentError(f"preset {args.preset} under llm needs --profile")
    else:
        configs = [base]
    return _run_cells(configs, args)


def cmd_verify(args: argparse.Namespace) -> int:
    root = Path(args.dir)
    target = root
    if args.version is not None:
        target = root / version_dirname(args.version)
    elif not (root / "manifest.json").exists():
        versions = sorted(root.glob("ckpt-*/manifest.json"))
        candidates = sorted(root.glob("ckpt-*"))
        if versions:
            target = versions[-1].parent
        elif candidates:
            target = candidates[-1]
    report = verify_checkpoint(target)
    if not report.usable:
        print(f"{target}: UNUSABLE ({report.reason})")
        return EXIT_VERIFICATION
    failed = [v for v in report.objects.values() if not v.passed]
    print(f"{target}: {len(report.objects) - len(failed)}/{len(report.objects)} objects pass")
    for v in failed[:20]:
        print(f"  FAIL {v.object_id}: {v.reason}")
    return EXIT_VERIFICATION if failed else EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    src = Path(getattr(args, "in"))
    paths = sorted(src.glob("*.json")) if src.is_dir() else [src]
    reports = [json.loads(p.read_text()) for p in paths]
    if not reports:
        raise InvalidArgumentError(f"no reports under {src}")
    out = Path(args.out or f"merged.{args.format}")
    if args.format == "json":
        out.write_text(json.dumps(reports if len(reports) > 1 else reports[0], indent=2) + "\n")
    else:
        import csv

        rows = [row for r in reports for row in report_csv_rows(r)]
        with open(out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    print(f"wrote {out} ({len(reports)} report(s))")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ckptbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthetic", help="uniform-chunk workload benchmark")
    p.add_argument("--total-size", type=parse_size, default=256 * 1024 * 1024, metavar="BYTES",
                   help="bytes per rank")
    _add_run_flags(p)
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("llm", help="model-profile workload benchmark")
    p.add_argument("--profile", default="", metavar="NAME|PATH", help="3b, 7b, 13b, or a profile file")
    p.add_argument("--scale", type=int, default=1, metavar="N", help="divide profile sizes by N")
    _add_run_flags(p)
    p.set_defaults(func=cmd_llm)

    p = sub.add_parser("verify", help="re-check an existing checkpoint")
    p.add_argument("--dir", required=True, metavar="PATH", help="run dir or ckpt-NNN dir")
    p.add_argument("--version", type=int, default=None, metavar="N")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="re-emit stored reports")
    p.add_argument("--in", required=True, metavar="PATH", help="report file or directory")
    p.add_argument("--out", default="", metavar="PATH")
    p.add_argument("--format", default="csv", choices=["json", "csv"])
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RendezvousTimeoutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RENDEZVOUS
    except RankFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RENDEZVOUS if exc.exit_code == 4 else EXIT_IO
    except (DirectUnsupportedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CkptBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
