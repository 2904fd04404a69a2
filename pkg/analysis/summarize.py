#!/usr/bin/env python3
"""Speedup table: each configuration's median metric as a ratio of a baseline.

Usage:
    summarize.py --in reports/ --baseline single-shared-file/ring/buffered/batched
    summarize.py --in reports/ --baseline LABEL --metric read_throughput --out table.csv
"""

from __future__ import annotations

import argparse
import csv
import statistics
import sys

from reportlib import (
    AnalysisError,
    MissingBaselineError,
    ReportSet,
    format_bytes_per_s,
    metric_values,
)


def summarize(reports: ReportSet, baseline_label: str, metric: str) -> list[dict]:
    """Rows of {label, median, ratio}; ratio is vs. the named baseline."""
    medians = {
        r["label"]: statistics.median(metric_values(r, metric)) for r in reports.reports
    }
    if baseline_label not in medians:
        raise MissingBaselineError(
            f"baseline {baseline_label!r} not among {sorted(medians)}"
        )
    base = medians[baseline_label]
    return [
        {"label": label, "median": median, "ratio": median / base}
        for label, median in medians.items()
    ]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--in", dest="source", required=True)
    parser.add_argument("--baseline", required=True, help="label of the baseline report")
    parser.add_argument(
        "--metric",
        default="write_throughput",
        choices=["write_throughput", "read_throughput", "wall_time"],
    )
    parser.add_argument("--out", default="", help="optional CSV output path")
    args = parser.parse_args(argv)
    try:
        rows = summarize(ReportSet.load(args.source), args.baseline, args.metric)
    except AnalysisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    width = max(len(r["label"]) for r in rows)
    for r in sorted(rows, key=lambda r: -r["ratio"]):
        rate = format_bytes_per_s(r["median"]) if "throughput" in args.metric else f"{r['median']:.3f}s"
        print(f"{r['label']:<{width}}  {rate:>14}  {r['ratio']:.2f}x")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["label", "median", "ratio"])
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
