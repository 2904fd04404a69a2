#!/usr/bin/env python3
"""Run experiment presets at desk scale and collect reports (and figures).

Examples:
    python scripts/run_preset.py --preset aggregation-sweep --out results/
    python scripts/run_preset.py --preset all --total-size 64MiB --ranks 2
"""

import argparse
import subprocess
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ckptbench.bench import PRESET_NAMES, RunConfig, emit_report, preset_configs, run_experiment
from ckptbench.cli import parse_size

ANALYSIS = Path(__file__).resolve().parents[1] / "analysis"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--preset", default="all", help=f"all or one of {', '.join(PRESET_NAMES)}")
    parser.add_argument("--out", default="results", help="output directory for reports/figures")
    parser.add_argument("--data", default="", help="checkpoint data directory (default <out>/data)")
    parser.add_argument("--total-size", type=parse_size, default=64 * 2**20, help="synthetic bytes/rank")
    parser.add_argument("--chunk-size", type=parse_size, default=8 * 2**20)
    parser.add_argument("--ranks", type=int, default=2)
    parser.add_argument("--runs", type=int, default=3)
    parser.add_argument("--profile-scale", type=int, default=1000,
                        help="divide built-in profile sizes for the llm-profiles preset")
    parser.add_argument("--direct", action="store_true")
    parser.add_argument("--no-plot", action="store_true")
    args = parser.parse_args()

    out_dir = Path(args.out)
    names = list(PRESET_NAMES) if args.preset == "all" else [args.preset]
    for name in names:
        base = RunConfig(
            total_bytes_per_rank=args.total_size,
            chunk_bytes=args.chunk_size,
            num_ranks=args.ranks,
            repetitions=args.runs,
            direct=args.direct,
            profile_scale=args.profile_scale,
            data_dir=args.data or str(out_dir / "data"),
            cleanup_data=True,
        )
        report_dir = out_dir / name
        report_dir.mkdir(parents=True, exist_ok=True)
        for config in preset_configs(name, base):
            report = run_experiment(config)
            path = report_dir / (report["label"].replace("/", "_") + ".json")
            emit_report(report, "json", path)
            ok = "PASS" if report["verification"]["passed"] else "FAIL"
            tp = report["aggregate"]["write_throughput_bytes_per_s"]["median"]
            print(f"{report['label']}: {tp / 2**20:.1f} MiB/s write, verification {ok}")
        if not args.no_plot:
            group_by = "direct" if name == "odirect-sweep" else "strategy"
            fig = out_dir / f"{name}.svg"
            subprocess.run(
                [sys.executable, str(ANALYSIS / "plot.py"), "--in", str(report_dir),
                 "--group-by", group_by, "--metric", "write_throughput", "--out", str(fig)],
                check=True,
            )
            print(f"figure: {fig}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
