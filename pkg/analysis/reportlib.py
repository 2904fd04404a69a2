"""Shared parsing/grouping for the analysis scripts.

These scripts consume only the JSON reports emitted by the bench CLI
(schema_version 1); nothing here re-times or re-runs anything.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass
from pathlib import Path

EXPECTED_SCHEMA = 1

AXES = ("strategy", "backend", "direct", "emulation", "alloc", "model")


class AnalysisError(Exception):
    pass


class EmptySetError(AnalysisError):
    pass


class SchemaMismatchError(AnalysisError):
    pass


class MissingBaselineError(AnalysisError):
    pass


def axis_value(report: dict, axis: str) -> str:
    cfg = report["config"]
    if axis == "direct":
        return "direct" if cfg["direct"] else "buffered"
    if axis == "model":
        if cfg["workload_kind"] == "profile":
            return cfg["profile"]
        return f"synthetic-{cfg['total_bytes_per_rank']}"
    if axis == "label":
        return report["label"]
    if axis in cfg:
        return str(cfg[axis])
    raise AnalysisError(f"unknown axis {axis!r}; have {AXES + ('label',)}")


def metric_values(report: dict, metric: str) -> list[float]:
    """Per-repetition values of a metric, straight from the report document."""
    key = {
        "write_throughput": "write_throughput_bytes_per_s",
        "read_throughput": "read_throughput_bytes_per_s",
        "wall_time": "wall_time_s",
    }.get(metric)
    if key is None:
        raise AnalysisError(f"unknown metric {metric!r}")
    values = [rep["aggregate"][key] for rep in report["repetitions"]]
    values = [v for v in values if v is not None]
    if not values:
        raise AnalysisError(f"report {report.get('label')} has no values for {metric}")
    return values


@dataclass(frozen=True)
class MetricStats:
    median: float
    minimum: float
    maximum: float
    count: int

    @staticmethod
    def of(values: list[float]) -> "MetricStats":
        return MetricStats(
            median=statistics.median(values),
            minimum=min(values),
            maximum=max(values),
            count=len(values),
        )


@dataclass
class ReportSet:
    reports: list[dict]

    def __post_init__(self) -> None:
        if not self.reports:
            raise EmptySetError("no reports to analyze")
        versions = {r.get("schema_version") for r in self.reports}
        if len(versions) != 1:
            raise SchemaMismatchError(f"mixed report schema versions: {sorted(map(str, versions))}")
        if versions != {EXPECTED_SCHEMA}:
            raise SchemaMismatchError(
                f"unsupported schema version {versions.pop()!r} (expected {EXPECTED_SCHEMA})"
            )

    @staticmethod
    def load(source: str | Path) -> "ReportSet":
        src = Path(source)
        paths = sorted(src.glob("*.json")) if src.is_dir() else [src]
        reports = [json.loads(p.read_text()) for p in paths]
        return ReportSet(reports)

    def labels(self) -> list[str]:
        return [r["label"] for r in self.reports]

    def varying_axes(self, exclude: tuple[str, ...] = ()) -> list[str]:
        out = []
        for axis in AXES:
            if axis in exclude:
                continue
            if len({axis_value(r, axis) for r in self.reports}) > 1:
                out.append(axis)
        return out


def group_metric(
    reports: ReportSet, group_by: str, metric: str
) -> dict[str, dict[str, MetricStats]]:
    """groups[group_label][bar_label] -> stats.

    Bars within a group are distinguished by whichever other axes actually
    vary across the set; if none do, each group is a single bar.
    """
    bar_axes = reports.varying_axes(exclude=(group_by,))
    groups: dict[str, dict[str, MetricStats]] = {}
    for report in reports.reports:
        group = axis_value(report, group_by)
        bar = "/".join(axis_value(report, a) for a in bar_axes) or axis_value(report, group_by)
        stats = MetricStats.of(metric_values(report, metric))
        groups.setdefault(group, {})
        if bar in groups[group]:
            raise AnalysisError(
                f"two reports land on the same cell (group={group!r}, bar={bar!r}); "
                "group by a distinguishing axis"
            )
        groups[group][bar] = stats
    return groups


_BINARY_UNITS = ["B/s", "KiB/s", "MiB/s", "GiB/s", "TiB/s"]


def format_bytes_per_s(value: float) -> str:
    unit = _BINARY_UNITS[0]
    for candidate in _BINARY_UNITS[1:]:
        if value < 1024:
            break
        value /= 1024
        unit = candidate
    return f"{value:.4g} {unit}"
