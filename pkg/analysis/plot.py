#!/usr/bin/env python3
"""Render bench reports as a grouped bar chart (static SVG/PNG).

Usage:
    plot.py --in reports/ --group-by strategy --metric write_throughput --out fig.svg

Bars show the median across repetitions with min-max whiskers; values come
solely from the report JSON files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.ticker import FuncFormatter

from reportlib import (
    AnalysisError,
    MetricStats,
    ReportSet,
    format_bytes_per_s,
    group_metric,
)


def render_chart(
    groups: dict[str, dict[str, MetricStats]], metric: str, out_path: Path
) -> None:
    group_labels = list(groups)
    bar_labels: list[str] = []
    for bars in groups.values():
        for b in bars:
            if b not in bar_labels:
                bar_labels.append(b)
    width = 0.8 / max(len(bar_labels), 1)

    fig, ax = plt.subplots(figsize=(max(6, 1.8 * len(group_labels) * max(len(bar_labels), 1)), 4.5))
    for bi, bar in enumerate(bar_labels):
        xs, medians, err_lo, err_hi = [], [], [], []
        for gi, group in enumerate(group_labels):
            stats = groups[group].get(bar)
            if stats is None:
                continue
            xs.append(gi + bi * width)
            medians.append(stats.median)
            err_lo.append(stats.median - stats.minimum)
            err_hi.append(stats.maximum - stats.median)
        show_whiskers = any(lo or hi for lo, hi in zip(err_lo, err_hi))
        ax.bar(
            xs,
            medians,
            width=width * 0.95,
            label=bar,
            yerr=[err_lo, err_hi] if show_whiskers else None,
            capsize=3,
        )
    ax.set_xticks([i + width * (len(bar_labels) - 1) / 2 for i in range(len(group_labels))])
    ax.set_xticklabels(group_labels, rotation=15, ha="right")
    if metric in ("write_throughput", "read_throughput"):
        ax.yaxis.set_major_formatter(FuncFormatter(lambda v, _: format_bytes_per_s(v)))
        ax.set_ylabel(f"{metric.replace('_', ' ')} (bytes/s, binary units)")
    else:
        ax.set_ylabel("seconds")
    if len(bar_labels) > 1 or bar_labels != group_labels:
        ax.legend(fontsize=8)
    ax.set_title(f"{metric.replace('_', ' ')}, median of repetitions (whiskers: min-max)")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_throughput(
    reports: ReportSet, group_by: str, metric: str, out_path: Path
) -> dict[str, dict[str, MetricStats]]:
    """Render the grouped bar chart; returns the plotted group statistics."""
    groups = group_metric(reports, group_by, metric)
    render_chart(groups, metric, out_path)
    return groups


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--in", dest="source", required=True, help="report file or directory")
    parser.add_argument("--group-by", default="strategy")
    parser.add_argument(
        "--metric",
        default="write_throughput",
        choices=["write_throughput", "read_throughput", "wall_time"],
    )
    parser.add_argument("--out", required=True, help="output .svg or .png")
    args = parser.parse_args(argv)
    try:
        reports = ReportSet.load(args.source)
        groups = plot_throughput(reports, args.group_by, args.metric, Path(args.out))
    except AnalysisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    total_bars = sum(len(bars) for bars in groups.values())
    print(f"wrote {args.out}: {len(groups)} group(s), {total_bars} bar(s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
