"""Run reports, multi-run aggregation, and coverage renderings.

The JSON report is canonical; CSV tables and a plain-text summary are
renderings of it. Wall-clock data lives in an isolated ``timings`` field so
determinism checks can compare everything else byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .catalog import OperatorCategory
from .errors import CatalogMismatch, ParseError

REPORT_SCHEMA_VERSION = 1

CATEGORY_ORDER = (
    OperatorCategory.ELEMENTWISE,
    OperatorCategory.DEEP_LEARNING,
    OperatorCategory.LINEAR_ALGEBRA,
    OperatorCategory.SHAPE_MANIPULATION,
    OperatorCategory.REDUCTION,
    OperatorCategory.INDEXING_SELECTION,
    OperatorCategory.OTHER,
)


@dataclass(frozen=True)
class OperatorEntry:
    status: str  # passed | failed
    llm_calls_used: int
    attempts: int
    category: str
    failure_stage: str | None = None
    calls_to_success: int | None = None

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "llm_calls_used": self.llm_calls_used,
            "attempts": self.attempts,
            "category": self.category,
            "failure_stage": self.failure_stage,
            "calls_to_success": self.calls_to_success,
        }

    @staticmethod
    def from_json(doc: dict) -> "OperatorEntry":
        return OperatorEntry(
            status=doc["status"],
            llm_calls_used=doc["llm_calls_used"],
            attempts=doc["attempts"],
            category=doc["category"],
            failure_stage=doc.get("failure_stage"),
            calls_to_success=doc.get("calls_to_success"),
        )


@dataclass
class RunReport:
    run_id: str
    catalog_fingerprint: str
    config: dict
    operators: dict = field(default_factory=dict)  # name -> OperatorEntry
    timings: dict = field(default_factory=dict)
    incomplete: bool = False

    @property
    def total(self) -> int:
        return len(self.operators)

    @property
    def passed(self) -> int:
        return sum(1 for e in self.operators.values() if e.status == "passed")

    @property
    def coverage(self) -> float:
        return self.passed / self.total if self.total else 0.0

    def infrastructure_failures(self) -> int:
        from .fsm import INFRASTRUCTURE_STAGES

        return sum(
            1
            for e in self.operators.values()
            if e.status == "failed" and e.failure_stage in INFRASTRUCTURE_STAGES
        )

    def max_calls(self) -> int:
        session = self.config.get("session", {})
        return int(session.get("max_attempts", 3)) * int(session.get("max_llm_calls", 15))

    def to_json(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "run_id": self.run_id,
            "catalog_fingerprint": self.catalog_fingerprint,
            "config": self.config,
            "operators": {
                name: self.operators[name].to_json() for name in sorted(self.operators)
            },
            "totals": {
                "operators": self.total,
                "passed": self.passed,
                "coverage": self.coverage,
                "infrastructure_failures": self.infrastructure_failures(),
            },
            "incomplete": self.incomplete,
            "timings": self.timings,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(doc: dict) -> "RunReport":
        if doc.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ParseError(f"unsupported report schema_version {doc.get('schema_version')!r}")
        return RunReport(
            run_id=doc["run_id"],
            catalog_fingerprint=doc["catalog_fingerprint"],
            config=doc.get("config", {}),
            operators={
                name: OperatorEntry.from_json(entry)
                for name, entry in doc.get("operators", {}).items()
            },
            timings=doc.get("timings", {}),
            incomplete=bool(doc.get("incomplete", False)),
        )

    @staticmethod
    def loads(text: str) -> "RunReport":
        return RunReport.from_json(json.loads(text))


@dataclass
class AggregateReport:
    """Union of passing operators across member runs (test-time scaling)."""

    catalog_fingerprint: str
    member_runs: list = field(default_factory=list)      # run_id, in input order
    member_coverage: dict = field(default_factory=dict)  # run_id -> coverage
    operators: dict = field(default_factory=dict)        # name -> OperatorEntry (best)
    max_calls: int = 0

    @property
    def total(self) -> int:
        return len(self.operators)

    @property
    def passed(self) -> int:
        return sum(1 for e in self.operators.values() if e.status == "passed")

    @property
    def coverage(self) -> float:
        return self.passed / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "kind": "aggregate",
            "catalog_fingerprint": self.catalog_fingerprint,
            "member_runs": sorted(self.member_runs),
            "member_coverage": {k: v for k, v in sorted(self.member_coverage.items())},
            "operators": {name: self.operators[name].to_json() for name in sorted(self.operators)},
            "totals": {
                "operators": self.total,
                "passed": self.passed,
                "coverage": self.coverage,
            },
            "max_calls": self.max_calls,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"


def aggregate_runs(reports) -> AggregateReport:
    """Union semantics: an operator passes if it passed in ANY member run;
    calls-to-success is the per-operator minimum. Commutative, associative,
    idempotent."""
    reports = list(reports)
    if not reports:
        raise ParseError("nothing to aggregate")
    fingerprint = reports[0].catalog_fingerprint
    for r in reports[1:]:
        if r.catalog_fingerprint != fingerprint:
            raise CatalogMismatch(
                f"report {r.run_id!r} was produced against a different catalog"
            )
    agg = AggregateReport(
        catalog_fingerprint=fingerprint,
        member_runs=[r.run_id for r in reports],
        member_coverage={r.run_id: r.coverage for r in reports},
        max_calls=max(r.max_calls() for r in reports),
    )
    for report in reports:
        for name, entry in report.operators.items():
            current = agg.operators.get(name)
            if current is None:
                agg.operators[name] = entry
                continue
            agg.operators[name] = _merge_entries(current, entry)
    return agg


def _merge_entries(a: OperatorEntry, b: OperatorEntry) -> OperatorEntry:
    if (a.status == "passed") != (b.status == "passed"):
        return a if a.status == "passed" else b
    if a.status == "passed":
        ca = a.calls_to_success if a.calls_to_success is not None else 1 << 30
        cb = b.calls_to_success if b.calls_to_success is not None else 1 << 30
        return a if ca <= cb else b
    return a


def coverage_by_category(report) -> list[dict]:
    """Seven rows, fixed order: operator count, passes, coverage percent."""
    rows = []
    for category in CATEGORY_ORDER:
        ops = [e for e in report.operators.values() if e.category == category.value]
        passed = sum(1 for e in ops if e.status == "passed")
        rows.append(
            {
                "category": category.value,
                "op_count": len(ops),
                "passed": passed,
                "coverage_pct": (100.0 * passed / len(ops)) if ops else 0.0,
            }
        )
    return rows


def cumulative_curve(report) -> list[tuple[int, int]]:
    """Nondecreasing step series: x is LLM calls spent, y is how many
    operators had passed within x calls. Works for runs and aggregates."""
    if isinstance(report, AggregateReport):
        max_calls = report.max_calls or 1
    else:
        max_calls = report.max_calls()
    counts = [0] * (max_calls + 1)
    for entry in report.operators.values():
        if entry.status != "passed" or entry.calls_to_success is None:
            continue
        x = min(max(entry.calls_to_success, 1), max_calls)
        counts[x] += 1
    series = []
    running = 0
    for x in range(1, max_calls + 1):
        running += counts[x]
        series.append((x, running))
    return series


# -- renderings ---------------------------------------------------------------


def category_csv(report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["category", "op_count", "passed", "coverage_pct"])
    for row in coverage_by_category(report):
        writer.writerow([row["category"], row["op_count"], row["passed"], f"{row['coverage_pct']:.1f}"])
    return buf.getvalue()


def curve_csv(report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["llm_calls", "cumulative_passes"])
    for x, y in cumulative_curve(report):
        writer.writerow([x, y])
    return buf.getvalue()


def text_summary(report) -> str:
    lines = []
    if isinstance(report, AggregateReport):
        lines.append(f"aggregate of runs: {', '.join(sorted(report.member_runs))}")
        for run_id in sorted(report.member_coverage):
            lines.append(f"  {run_id}: {100 * report.member_coverage[run_id]:.1f}%")
    else:
        lines.append(f"run: {report.run_id}")
        if report.incomplete:
            lines.append("  WARNING: report is incomplete (worker pool lost mid-run)")
    lines.append(f"operators: {report.total}  passed: {report.passed}  "
                 f"coverage: {100 * report.coverage:.1f}%")
    lines.append("")
    lines.append(f"{'category':<20} {'ops':>5} {'passed':>7} {'coverage':>9}")
    for row in coverage_by_category(report):
        lines.append(
            f"{row['category']:<20} {row['op_count']:>5} {row['passed']:>7} "
            f"{row['coverage_pct']:>8.1f}%"
        )
    return "\n".join(lines) + "\n"
