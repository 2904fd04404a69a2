"""Analysis script tests, including the secondary acceptance criterion."""

import json
import statistics
import subprocess
import sys
from pathlib import Path

import pytest

import plot
import reportlib
import summarize as summarize_mod
from reportlib import (
    EmptySetError,
    MetricStats,
    MissingBaselineError,
    ReportSet,
    SchemaMismatchError,
    format_bytes_per_s,
    group_metric,
    metric_values,
)


def fake_report(label, strategy="single-shared-file", direct=False, writes=(4.0e9,), reads=(2.0e9,),
                schema=reportlib.EXPECTED_SCHEMA):
    return {
        "schema_version": schema,
        "label": label,
        "config": {
            "workload_kind": "synthetic",
            "total_bytes_per_rank": 1 << 30,
            "profile": "",
            "strategy": strategy,
            "backend": "ring",
            "direct": direct,
            "emulation": "batched",
            "alloc": "pooled",
        },
        "repetitions": [
            {
                "rep": i,
                "per_rank": [],
                "aggregate": {
                    "write_throughput_bytes_per_s": w,
                    "read_throughput_bytes_per_s": r,
                    "wall_time_s": 1.0,
                },
            }
            for i, (w, r) in enumerate(zip(writes, reads))
        ],
        "aggregate": {},
        "verification": {"passed": True, "failed_objects": []},
    }


def test_empty_set_rejected():
    with pytest.raises(EmptySetError):
        ReportSet([])


def test_schema_mismatch_rejected():
    with pytest.raises(SchemaMismatchError):
        ReportSet([fake_report("a"), fake_report("b", schema=2)])
    with pytest.raises(SchemaMismatchError):
        ReportSet([fake_report("a", schema=99)])


def test_grouping_odirect_shape():
    # Six reports (3 strategies x direct/buffered) grouped by mode: 2 groups x 3 bars.
    reports = ReportSet(
        [
            fake_report(f"{s}/{m}", strategy=s, direct=(m == "direct"))
            for s in ("file-per-shard", "file-per-process", "single-shared-file")
            for m in ("buffered", "direct")
        ]
    )
    groups = group_metric(reports, "direct", "write_throughput")
    assert len(groups) == 2
    assert all(len(bars) == 3 for bars in groups.values())
    by_strategy = group_metric(reports, "strategy", "write_throughput")
    assert len(by_strategy) == 3
    assert all(len(bars) == 2 for bars in by_strategy.values())


def test_single_report_single_bar(tmp_path):
    reports = ReportSet([fake_report("solo", writes=(3.0e9,), reads=(1.0e9,))])
    groups = group_metric(reports, "strategy", "write_throughput")
    assert len(groups) == 1
    (bars,) = groups.values()
    assert len(bars) == 1
    (stats,) = bars.values()
    assert stats.minimum == stats.maximum == stats.median == 3.0e9
    plot.render_chart(groups, "write_throughput", tmp_path / "solo.svg")
    assert (tmp_path / "solo.svg").stat().st_size > 0


def test_metric_median_min_max():
    r = fake_report("x", writes=(1.0, 5.0, 3.0), reads=(1.0, 1.0, 1.0))
    stats = MetricStats.of(metric_values(r, "write_throughput"))
    assert (stats.median, stats.minimum, stats.maximum) == (3.0, 1.0, 5.0)


def test_summarize_ratios_and_identity():
    reports = ReportSet(
        [
            fake_report("base", writes=(4 * 2**30,)),
            fake_report("slow", strategy="file-per-shard", writes=(1 * 2**30,)),
        ]
    )
    rows = {r["label"]: r for r in summarize_mod.summarize(reports, "base", "write_throughput")}
    assert rows["slow"]["ratio"] == pytest.approx(0.25)
    assert rows["base"]["ratio"] == 1.0  # identity is exact


def test_summarize_missing_baseline():
    reports = ReportSet([fake_report("a"), fake_report("b", strategy="file-per-shard")])
    with pytest.raises(MissingBaselineError):
        summarize_mod.summarize(reports, "nope", "write_throughput")


def test_ratios_invariant_under_unit_change():
    scale = 1024  # pretend the values had been recorded in KiB/s
    a = [fake_report("base", writes=(8.0e9, 6.0e9)), fake_report("c", strategy="x", writes=(3.0e9, 2.0e9))]
    b = [
        fake_report("base", writes=(8.0e9 / scale, 6.0e9 / scale)),
        fake_report("c", strategy="x", writes=(3.0e9 / scale, 2.0e9 / scale)),
    ]
    ra = {r["label"]: r["ratio"] for r in summarize_mod.summarize(ReportSet(a), "base", "write_throughput")}
    rb = {r["label"]: r["ratio"] for r in summarize_mod.summarize(ReportSet(b), "base", "write_throughput")}
    assert ra == rb


def test_binary_unit_formatting():
    assert format_bytes_per_s(512) == "512 B/s"
    assert format_bytes_per_s(4 * 2**30) == "4 GiB/s"
    assert format_bytes_per_s(1536) == "1.5 KiB/s"


def test_plot_cli_schema_mismatch(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps(fake_report("a")))
    (tmp_path / "b.json").write_text(json.dumps(fake_report("b", schema=7)))
    rc = plot.main(["--in", str(tmp_path), "--out", str(tmp_path / "f.svg")])
    assert rc == 1


# --- secondary acceptance criterion ----------------------------------------


def test_acceptance_secondary_aggregation_sweep_plot_and_summary(tmp_path):
    """Render the aggregation-sweep preset's reports: one bar per strategy,
    medians matching an independent parse; summarize identity is exactly 1.0x."""
    reports_dir = tmp_path / "reports"
    proc = subprocess.run(
        [
            sys.executable, "-m", "ckptbench.cli", "synthetic",
            "--preset", "aggregation-sweep",
            "--total-size", "2MiB", "--chunk-size", "1MiB",
            "--ranks", "1", "--runs", "3", "--backend", "blocking",
            "--dir", str(tmp_path / "data"), "--out", str(reports_dir),
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    paths = sorted(reports_dir.glob("*.json"))
    assert len(paths) == 3

    reports = ReportSet.load(reports_dir)
    groups = group_metric(reports, "strategy", "write_throughput")
    assert sorted(groups) == ["file-per-process", "file-per-shard", "single-shared-file"]
    assert all(len(bars) == 1 for bars in groups.values())  # one bar per strategy

    # independent parse: recompute medians straight from the JSON documents
    for path in paths:
        doc = json.loads(path.read_text())
        strategy = doc["config"]["strategy"]
        expected = statistics.median(
            rep["aggregate"]["write_throughput_bytes_per_s"] for rep in doc["repetitions"]
        )
        (stats,) = groups[strategy].values()
        assert stats.median == expected

    out_svg = tmp_path / "fig.svg"
    rc = plot.main(
        ["--in", str(reports_dir), "--group-by", "strategy",
         "--metric", "write_throughput", "--out", str(out_svg)]
    )
    assert rc == 0
    assert out_svg.stat().st_size > 0
    assert b"<svg" in out_svg.read_bytes()[:500]

    baseline = "aggregation-sweep/single-shared-file"
    rows = {r["label"]: r for r in summarize_mod.summarize(reports, baseline, "write_throughput")}
    assert rows[baseline]["ratio"] == 1.0
    assert len(rows) == 3
    print(
        "\n[ACCEPTANCE] SECONDARY plot+summarize: PASS "
        f"(3 strategy bars, medians cross-checked, identity ratio exactly 1.0)"
    )
