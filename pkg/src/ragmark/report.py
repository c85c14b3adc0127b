"""Consolidates a run into per-question exports and cross-framework aggregates.

The CSV stays a flat per-question table (one row per record, sparse metric
columns) so it drops straight into spreadsheets and data frames; the JSON
export additionally carries the per-framework summaries. Absent metric
scores are empty cells / absent keys, never zeros: "not computed" and
"scored 0" must not be conflated in a comparison.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .metrics import LatencySummary, latency_summary
from .runner import EvaluationRecord, RunResult

CSV_BASE_HEADER = [
    "framework",
    "query_id",
    "query_text",
    "document_id",
    "is_warmup",
    "answer",
    "expected_answer",
    "latency_ms",
    "error",
]

CSV_FILE_NAME = "test_results.csv"
JSON_FILE_NAME = "test_results.json"


@dataclass(frozen=True)
class FrameworkSummary:
    """Aggregates for one framework, aligned for side-by-side comparison.

    `queries_total`/`queries_failed` count every record of the framework
    (warmups included) as run-health indicators. Latency and metric means are
    quality aggregates: they cover non-warmup, non-error records unless
    warmups are explicitly included, and warmup latencies are reported
    separately because warmups exist to absorb cold starts.
    """

    framework: str
    queries_total: int
    queries_failed: int
    latency: LatencySummary
    warmup_latency: LatencySummary
    metric_means: dict[str, float]
    metric_counts: dict[str, int]


@dataclass(frozen=True)
class ComparisonReport:
    summaries: list[FrameworkSummary]
    generated_at: datetime
    config_digest: str


def aggregate(result: RunResult, include_warmup: bool = False) -> ComparisonReport:
    """Build one summary per configured framework (in config order), including
    frameworks whose every query failed."""
    summaries = []
    for framework in result.frameworks:
        records = [record for record in result.records if record.framework == framework]
        in_scope = [r for r in records if (include_warmup or not r.is_warmup) and r.error is None]
        warmup_ok = [r for r in records if r.is_warmup and r.error is None]
        metric_names = sorted({name for record in in_scope for name in record.scores})
        means: dict[str, float] = {}
        counts: dict[str, int] = {}
        for name in metric_names:
            values = [record.scores[name] for record in in_scope if name in record.scores]
            counts[name] = len(values)
            means[name] = sum(values) / len(values)
        summaries.append(
            FrameworkSummary(
                framework=framework,
                queries_total=len(records),
                queries_failed=sum(1 for record in records if record.error is not None),
                latency=latency_summary([record.latency_ms for record in in_scope]),
                warmup_latency=latency_summary([record.latency_ms for record in warmup_ok]),
                metric_means=means,
                metric_counts=counts,
            )
        )
    return ComparisonReport(
        summaries=summaries,
        generated_at=datetime.now(timezone.utc),
        config_digest=result.config_digest,
    )


def write_csv(result: RunResult, path: str | Path) -> None:
    """One row per record in run order; RFC 4180 quoting, CRLF line endings.

    Metric columns are the sorted union of score names seen in the run;
    records without a given score leave the cell empty.
    """
    metric_names = sorted({name for record in result.records for name in record.scores})
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_BASE_HEADER + metric_names)
        for record in result.records:
            row = [
                record.framework,
                record.query_id,
                record.query_text,
                record.document_id if record.document_id is not None else "",
                "true" if record.is_warmup else "false",
                record.answer,
                record.expected_answer if record.expected_answer is not None else "",
                repr(record.latency_ms),
                record.error if record.error is not None else "",
            ]
            row.extend(
                repr(record.scores[name]) if name in record.scores else "" for name in metric_names
            )
            writer.writerow(row)


def _latency_json(summary: LatencySummary) -> dict:
    return {
        "count": summary.count,
        "mean_ms": summary.mean_ms,
        "median_ms": summary.median_ms,
        "p95_ms": summary.p95_ms,
        "min_ms": summary.min_ms,
        "max_ms": summary.max_ms,
    }


def _record_json(record: EvaluationRecord) -> dict:
    return {
        "framework": record.framework,
        "query_id": record.query_id,
        "query_text": record.query_text,
        "document_id": record.document_id,
        "is_warmup": record.is_warmup,
        "answer": record.answer,
        "expected_answer": record.expected_answer,
        "contexts": record.contexts,
        "latency_ms": record.latency_ms,
        "error": record.error,
        "scores": {name: record.scores[name] for name in sorted(record.scores)},
        "judge_failures": [[metric, reason] for metric, reason in record.judge_failures],
    }


def _summary_json(summary: FrameworkSummary) -> dict:
    return {
        "framework": summary.framework,
        "queries_total": summary.queries_total,
        "queries_failed": summary.queries_failed,
        "latency": _latency_json(summary.latency),
        "warmup_latency": _latency_json(summary.warmup_latency),
        "metric_means": {name: summary.metric_means[name] for name in sorted(summary.metric_means)},
        "metric_counts": {name: summary.metric_counts[name] for name in sorted(summary.metric_counts)},
    }


def write_json(result: RunResult, report: ComparisonReport, path: str | Path) -> None:
    """Single JSON document: {meta, records, summaries}. Key order is fixed
    and numbers keep full precision, so identical runs serialize to identical
    bytes apart from meta.generated_at."""
    document = {
        "meta": {
            "generated_at": report.generated_at.isoformat(),
            "config_digest": report.config_digest,
        },
        "records": [_record_json(record) for record in result.records],
        "summaries": [_summary_json(summary) for summary in report.summaries],
    }
    Path(path).write_text(json.dumps(document, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def render_table(report: ComparisonReport) -> str:
    """Plain-text comparison table for standard output."""
    metric_names = sorted({name for summary in report.summaries for name in summary.metric_means})
    header = ["framework", "queries", "failed", "mean_ms", "median_ms", "p95_ms"] + metric_names
    rows = [header]
    for summary in report.summaries:
        row = [
            summary.framework,
            str(summary.queries_total),
            str(summary.queries_failed),
            f"{summary.latency.mean_ms:.1f}",
            f"{summary.latency.median_ms:.1f}",
            f"{summary.latency.p95_ms:.1f}",
        ]
        for name in metric_names:
            row.append(f"{summary.metric_means[name]:.4f}" if name in summary.metric_means else "-")
        rows.append(row)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for index, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip())
        if index == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines)
