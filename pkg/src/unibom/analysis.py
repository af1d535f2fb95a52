"""Vulnerability reports over SBOMs and the database.

Per-SBOM vulnerability reports, per-product version history with memory
taxonomy, two-way SBOM comparison, the what-if memory-safety projection,
and the time-series and severity-Pareto aggregations. Every report is a
pure value with a stable JSON form (the HTTP API's response bodies) and
an aligned-column text rendering for the CLI.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .classify import (
    SEVERITY_RANK,
    ClassifierPort,
    MemoryClass,
    SeverityBucket,
    classify_cve,
    classify_cwe,
    default_port,
    severity_bucket,
)
from .cpe import CpeName
from .sbom import Component, SbomDocument, Source
from .vulndb import CveRecord, VulnDatabase

NVD_DETAIL_URL = "https://nvd.nist.gov/vuln/detail/"

_SEVERITY_ORDER = (
    SeverityBucket.NONE,
    SeverityBucket.LOW,
    SeverityBucket.MEDIUM,
    SeverityBucket.HIGH,
    SeverityBucket.CRITICAL,
    SeverityBucket.UNKNOWN,
)
_MEMORY_ORDER = (
    MemoryClass.SPATIAL,
    MemoryClass.TEMPORAL,
    MemoryClass.OTHER_MEMORY,
    MemoryClass.NOT_MEMORY,
    MemoryClass.UNKNOWN,
)
#: Pareto display order; None and Unknown share the lowest bucket.
_PARETO_ORDER = (
    (SeverityBucket.CRITICAL,),
    (SeverityBucket.HIGH,),
    (SeverityBucket.MEDIUM,),
    (SeverityBucket.LOW,),
    (SeverityBucket.NONE, SeverityBucket.UNKNOWN),
)


@dataclass(frozen=True)
class Finding:
    component: Component
    cve_id: str
    cwe_ids: tuple[str, ...]
    base_score: float | None
    severity: SeverityBucket
    memory_class: MemoryClass

    @property
    def nvd_url(self) -> str:
        return NVD_DETAIL_URL + self.cve_id


@dataclass(frozen=True)
class VulnerabilityReport:
    sbom_ref: str
    findings: tuple[Finding, ...]

    @property
    def counts_by_severity(self) -> dict[SeverityBucket, int]:
        counts = Counter(f.severity for f in self.findings)
        return {bucket: counts.get(bucket, 0) for bucket in _SEVERITY_ORDER}

    @property
    def counts_by_memory(self) -> dict[MemoryClass, int]:
        counts = Counter(f.memory_class for f in self.findings)
        return {cls: counts.get(cls, 0) for cls in _MEMORY_ORDER}


@dataclass(frozen=True)
class HistoryRow:
    version: str
    cve_id: str
    cwe_id: str
    memory_class: MemoryClass


@dataclass(frozen=True)
class HistoryReport:
    vendor: str
    product: str
    rows: tuple[HistoryRow, ...]


@dataclass(frozen=True)
class CompareRow:
    name: str
    version_a: str
    version_b: str
    cves_a: tuple[str, ...]
    cves_b: tuple[str, ...]


@dataclass(frozen=True)
class ComparisonReport:
    ref_a: str
    ref_b: str
    rows: tuple[CompareRow, ...]


@dataclass(frozen=True)
class WhatIfReport:
    threshold: SeverityBucket
    eliminated_total: int
    eliminated_by_severity: dict[SeverityBucket, int]
    residual_total: int


@dataclass(frozen=True)
class SeriesPoint:
    version: str
    cve_count: int
    mean_score: float | None


@dataclass(frozen=True)
class ParetoBucket:
    label: str
    count: int
    cumulative: int


def _finding_severity(record: CveRecord) -> SeverityBucket:
    if record.base_score is not None:
        return severity_bucket(record.base_score)
    return record.base_severity


def analyze_sbom(doc: SbomDocument, db: VulnDatabase,
                 port: ClassifierPort | None = None) -> VulnerabilityReport:
    """Match every component against the database and grade each hit."""
    port = port or default_port()
    findings = []
    for component in doc.components:
        for record in db.find_cves(component.effective_cpe()):
            findings.append(Finding(
                component=component,
                cve_id=record.cve_id,
                cwe_ids=record.cwe_ids,
                base_score=record.base_score,
                severity=_finding_severity(record),
                memory_class=classify_cve(record, port),
            ))
    return VulnerabilityReport(sbom_ref=doc.target_name, findings=tuple(findings))


def history(vendor: str, product: str, db: VulnDatabase,
            port: ClassifierPort | None = None) -> HistoryReport:
    """Version-by-version weakness taxonomy for one product.

    Walks every version the database mentions for (vendor, product) and
    emits one row per (version, CVE, CWE) triple, version-ascending.
    """
    port = port or default_port()
    vendor = vendor.lower()
    product = product.lower()
    rows = []
    for version in db.list_versions(vendor, product):
        candidate = CpeName.application(vendor, product, version)
        for record in db.find_cves(candidate):
            for cwe_id in record.cwe_ids or ("CWE-noinfo",):
                rows.append(HistoryRow(
                    version=version,
                    cve_id=record.cve_id,
                    cwe_id=cwe_id,
                    memory_class=classify_cwe(cwe_id, record.description, port),
                ))
    return HistoryReport(vendor=vendor, product=product, rows=tuple(rows))


def _versions_of(doc: SbomDocument, name: str) -> str:
    versions = sorted({c.version or "unknown" for c in doc.components if c.name == name})
    return ", ".join(versions) if versions else "none"


def _cves_of(report: VulnerabilityReport, name: str) -> tuple[str, ...]:
    return tuple(sorted({f.cve_id for f in report.findings if f.component.name == name}))


def compare(doc_a: SbomDocument, doc_b: SbomDocument, db: VulnDatabase,
            port: ClassifierPort | None = None) -> ComparisonReport:
    """Component-by-component diff of two SBOMs with per-side CVE lists."""
    port = port or default_port()
    report_a = analyze_sbom(doc_a, db, port)
    report_b = analyze_sbom(doc_b, db, port)
    names = sorted({c.name for c in doc_a.components} | {c.name for c in doc_b.components})
    rows = []
    for name in names:
        in_a = any(c.name == name for c in doc_a.components)
        in_b = any(c.name == name for c in doc_b.components)
        rows.append(CompareRow(
            name=name,
            version_a=_versions_of(doc_a, name) if in_a else "none",
            version_b=_versions_of(doc_b, name) if in_b else "none",
            cves_a=_cves_of(report_a, name) if in_a else (),
            cves_b=_cves_of(report_b, name) if in_b else (),
        ))
    return ComparisonReport(ref_a=doc_a.target_name, ref_b=doc_b.target_name,
                            rows=tuple(rows))


def whatif_memory_safe(report: VulnerabilityReport,
                       threshold: SeverityBucket = SeverityBucket.MEDIUM) -> WhatIfReport:
    """Findings a memory-safe platform would eliminate, gated by severity.

    A finding counts when its memory class is spatial, temporal, or
    other-memory and its severity ranks at or above the threshold;
    Unknown severity never passes the gate.
    """
    if threshold not in SEVERITY_RANK:
        raise ValueError(f"threshold must be a ranked severity, not {threshold}")
    gate = SEVERITY_RANK[threshold]
    eliminated = [
        f for f in report.findings
        if f.memory_class.is_memory_related
        and f.severity in SEVERITY_RANK
        and SEVERITY_RANK[f.severity] >= gate
    ]
    by_severity = Counter(f.severity for f in eliminated)
    return WhatIfReport(
        threshold=threshold,
        eliminated_total=len(eliminated),
        eliminated_by_severity={b: by_severity.get(b, 0) for b in _SEVERITY_ORDER},
        residual_total=len(report.findings) - len(eliminated),
    )


def time_series(report: HistoryReport, db: VulnDatabase) -> tuple[SeriesPoint, ...]:
    """Distinct-CVE count and mean base score per version, version order."""
    per_version: dict[str, set[str]] = {}
    for row in report.rows:
        per_version.setdefault(row.version, set()).add(row.cve_id)
    points = []
    for version, cve_ids in per_version.items():
        scores = [db.records[cve_id].base_score for cve_id in cve_ids
                  if db.records[cve_id].base_score is not None]
        mean = sum(scores) / len(scores) if scores else None
        points.append(SeriesPoint(version=version, cve_count=len(cve_ids), mean_score=mean))
    return tuple(points)


def _pareto_of(severities) -> tuple[ParetoBucket, ...]:
    counts = Counter(severities)
    buckets = []
    running = 0
    for group in _PARETO_ORDER:
        count = sum(counts.get(bucket, 0) for bucket in group)
        if count == 0:
            continue
        running += count
        buckets.append(ParetoBucket(
            label="/".join(bucket.value for bucket in group),
            count=count,
            cumulative=running,
        ))
    return tuple(buckets)


def pareto(report: VulnerabilityReport) -> tuple[ParetoBucket, ...]:
    """Severity buckets in descending criticality with running totals.

    Zero-count buckets are omitted; the final cumulative value equals the
    report's finding count.
    """
    return _pareto_of(f.severity for f in report.findings)


def history_pareto(report: HistoryReport, db: VulnDatabase) -> tuple[ParetoBucket, ...]:
    """Severity Pareto over the distinct CVEs of a product history."""
    cve_ids = sorted({row.cve_id for row in report.rows})
    return _pareto_of(_finding_severity(db.records[cve_id]) for cve_id in cve_ids)


# --- JSON forms (stable key order; also the HTTP API response bodies) ---

def _round_score(score: float | None) -> float | None:
    return None if score is None else round(score, 4)


def finding_to_json(finding: Finding) -> dict:
    return {
        "component": {
            "name": finding.component.name,
            "version": finding.component.version or "unknown",
        },
        "cveId": finding.cve_id,
        "cweIds": list(finding.cwe_ids),
        "baseScore": _round_score(finding.base_score),
        "severity": finding.severity.value,
        "memoryClass": finding.memory_class.value,
        "nvdUrl": finding.nvd_url,
    }


def report_to_json(report: VulnerabilityReport) -> dict:
    return {
        "sbomRef": report.sbom_ref,
        "total": len(report.findings),
        "countsBySeverity": {b.value: n for b, n in report.counts_by_severity.items()},
        "countsByMemory": {c.value: n for c, n in report.counts_by_memory.items()},
        "findings": [finding_to_json(f) for f in report.findings],
    }


def report_from_json(payload: dict) -> VulnerabilityReport:
    """Rebuild a report value from its JSON form.

    Lets consumers of a stored analysis derive follow-up views (the
    what-if projection) without re-matching against the database.
    """
    findings = []
    for entry in payload.get("findings", []):
        component = entry.get("component", {})
        version = component.get("version")
        findings.append(Finding(
            component=Component(
                name=component.get("name", ""),
                version=None if version in (None, "unknown") else version,
                source=Source.EXTERNAL_SBOM,
            ),
            cve_id=entry["cveId"],
            cwe_ids=tuple(entry.get("cweIds", [])),
            base_score=entry.get("baseScore"),
            severity=SeverityBucket(entry["severity"]),
            memory_class=MemoryClass(entry["memoryClass"]),
        ))
    return VulnerabilityReport(sbom_ref=payload.get("sbomRef", "sbom"),
                               findings=tuple(findings))


def history_to_json(report: HistoryReport) -> dict:
    return {
        "vendor": report.vendor,
        "product": report.product,
        "rows": [
            {
                "version": row.version,
                "cveId": row.cve_id,
                "cweId": row.cwe_id,
                "memoryClass": row.memory_class.value,
                "nvdUrl": NVD_DETAIL_URL + row.cve_id,
            }
            for row in report.rows
        ],
    }


def comparison_to_json(report: ComparisonReport) -> dict:
    return {
        "refA": report.ref_a,
        "refB": report.ref_b,
        "rows": [
            {
                "name": row.name,
                "versionA": row.version_a,
                "versionB": row.version_b,
                "cvesA": list(row.cves_a),
                "cvesB": list(row.cves_b),
            }
            for row in report.rows
        ],
    }


def whatif_to_json(report: WhatIfReport) -> dict:
    return {
        "threshold": report.threshold.value,
        "eliminatedTotal": report.eliminated_total,
        "eliminatedBySeverity": {b.value: n for b, n in report.eliminated_by_severity.items()},
        "residualTotal": report.residual_total,
    }


def series_to_json(points: tuple[SeriesPoint, ...]) -> dict:
    return {
        "series": [
            {
                "version": p.version,
                "cveCount": p.cve_count,
                "meanScore": _round_score(p.mean_score),
            }
            for p in points
        ],
    }


def pareto_to_json(buckets: tuple[ParetoBucket, ...]) -> dict:
    return {
        "buckets": [
            {"severity": b.label, "count": b.count, "cumulative": b.cumulative}
            for b in buckets
        ],
    }


def history_payload(report: HistoryReport, db: VulnDatabase) -> dict:
    """Combined history body: taxonomy rows plus both chart series."""
    return {
        "history": history_to_json(report),
        "series": series_to_json(time_series(report, db)),
        "pareto": pareto_to_json(history_pareto(report, db)),
    }


# --- text tables ---

def render_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"


def render_report(report: VulnerabilityReport) -> str:
    rows = [
        [
            f.component.name,
            f.component.version or "unknown",
            f.cve_id,
            ", ".join(f.cwe_ids) or "-",
            "-" if f.base_score is None else f"{f.base_score:.1f}",
            f.severity.value,
            f.memory_class.value,
        ]
        for f in report.findings
    ]
    table = render_table(
        ["COMPONENT", "VERSION", "CVE", "CWE", "SCORE", "SEVERITY", "MEMORY"], rows)
    severity = ", ".join(
        f"{b.value}={n}" for b, n in report.counts_by_severity.items() if n)
    memory = ", ".join(
        f"{c.value}={n}" for c, n in report.counts_by_memory.items() if n)
    return (
        f"{table}\n"
        f"findings: {len(report.findings)}\n"
        f"by severity: {severity or 'none'}\n"
        f"by memory class: {memory or 'none'}\n"
    )


def render_history(report: HistoryReport) -> str:
    rows = [[r.version, r.cve_id, r.cwe_id, r.memory_class.value] for r in report.rows]
    table = render_table(["VERSION", "CVE", "CWE", "MEMORY CLASS"], rows)
    return f"{report.vendor}:{report.product}\n{table}"


def render_comparison(report: ComparisonReport) -> str:
    rows = [
        [
            row.name,
            row.version_a,
            row.version_b,
            ", ".join(row.cves_a) or "none",
            ", ".join(row.cves_b) or "none",
        ]
        for row in report.rows
    ]
    return render_table(
        ["COMPONENT", report.ref_a.upper(), report.ref_b.upper(),
         f"CVES ({report.ref_a.upper()})", f"CVES ({report.ref_b.upper()})"],
        rows,
    )


def render_whatif(report: WhatIfReport) -> str:
    eliminated = ", ".join(
        f"{b.value}={n}" for b, n in report.eliminated_by_severity.items() if n)
    return (
        f"threshold: {report.threshold.value}\n"
        f"eliminated: {report.eliminated_total} ({eliminated or 'none'})\n"
        f"residual: {report.residual_total}\n"
    )
