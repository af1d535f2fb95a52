"""Offline vulnerability database.

Ingests an NVD-style JSON feed into an immutable in-memory database,
indexes match criteria by (vendor, product), answers CVE queries for
concrete components, and enumerates the historical versions a product's
criteria mention. The index is an optimization only: query results are
defined by a brute-force scan of every criterion with match_cpe.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .classify import OutOfRange, SeverityBucket, severity_bucket
from .cpe import (
    CpeError,
    CpeName,
    MatchCriterion,
    VersionBound,
    VersionKey,
    match_cpe,
    parse_cpe,
)


class MalformedFeed(ValueError):
    """The feed file is not in the expected JSON shape."""


class DuplicateCveId(MalformedFeed):
    """Two feed records share one CVE id."""


_CVE_ID_RE = re.compile(r"CVE-\d{4}-\d{4,}$")


@dataclass(frozen=True)
class CveRecord:
    cve_id: str
    description: str
    cwe_ids: tuple[str, ...]
    base_score: float | None
    base_severity: SeverityBucket
    published_year: int
    criteria: tuple[MatchCriterion, ...]

    def __post_init__(self):
        if not _CVE_ID_RE.match(self.cve_id):
            raise MalformedFeed(f"bad CVE id: {self.cve_id!r}")
        if self.base_score is not None and not 0.0 <= self.base_score <= 10.0:
            raise MalformedFeed(f"{self.cve_id}: base score {self.base_score} outside [0.0, 10.0]")


def _index_key(pattern: CpeName) -> tuple[str, str]:
    # Non-literal vendor/product go into wildcard buckets that every
    # query also scans; match_cpe stays the final authority.
    vendor = pattern.vendor.literal if pattern.vendor.is_literal else "*"
    product = pattern.product.literal if pattern.product.is_literal else "*"
    return vendor, product


@dataclass
class VulnDatabase:
    """Immutable after ingest; concurrent queries need no locking."""

    records: dict[str, CveRecord] = field(default_factory=dict)
    product_index: dict[tuple[str, str], list[tuple[str, MatchCriterion]]] = field(default_factory=dict)

    @classmethod
    def from_records(cls, records: list[CveRecord]) -> "VulnDatabase":
        db = cls()
        for record in records:
            if record.cve_id in db.records:
                raise DuplicateCveId(f"feed repeats {record.cve_id}")
            db.records[record.cve_id] = record
            for criterion in record.criteria:
                db.product_index.setdefault(_index_key(criterion.pattern), []).append(
                    (record.cve_id, criterion)
                )
        return db

    def find_cves(self, component: CpeName, match_unversioned: bool = False) -> list[CveRecord]:
        """All records with a criterion matching the component, by cve_id."""
        vendor = component.vendor.literal if component.vendor.is_literal else "*"
        product = component.product.literal if component.product.is_literal else "*"
        keys = {(vendor, product), ("*", product), (vendor, "*"), ("*", "*")}
        hits: set[str] = set()
        for key in keys:
            for cve_id, criterion in self.product_index.get(key, ()):
                if cve_id in hits:
                    continue
                if match_cpe(component, criterion, match_unversioned):
                    hits.add(cve_id)
        return [self.records[cve_id] for cve_id in sorted(hits)]

    def list_versions(self, vendor: str, product: str) -> list[str]:
        """Distinct versions mentioned by (vendor, product) criteria.

        Concrete pattern versions plus range endpoints, ascending, with
        duplicates collapsed by version-key equality.
        """
        vendor = vendor.lower()
        product = product.lower()
        seen: dict[tuple, str] = {}
        for record in self.records.values():
            for criterion in record.criteria:
                pattern = criterion.pattern
                if not (pattern.vendor.is_literal and pattern.vendor.literal == vendor):
                    continue
                if not (pattern.product.is_literal and pattern.product.literal == product):
                    continue
                texts = []
                if pattern.version.is_literal:
                    texts.append(pattern.version.literal)
                if criterion.version_start is not None:
                    texts.append(criterion.version_start.version)
                if criterion.version_end is not None:
                    texts.append(criterion.version_end.version)
                for text in texts:
                    seen.setdefault(VersionKey.from_text(text).segments, text)
        return [seen[key] for key in sorted(seen)]


def find_cves(db: VulnDatabase, component: CpeName, match_unversioned: bool = False) -> list[CveRecord]:
    return db.find_cves(component, match_unversioned)


def list_versions(db: VulnDatabase, vendor: str, product: str) -> list[str]:
    return db.list_versions(vendor, product)


def find_cves_brute_force(db: VulnDatabase, component: CpeName,
                          match_unversioned: bool = False) -> list[CveRecord]:
    """Index-free reference query; defines what find_cves must return."""
    out = []
    for cve_id in sorted(db.records):
        record = db.records[cve_id]
        if any(match_cpe(component, criterion, match_unversioned) for criterion in record.criteria):
            out.append(record)
    return out


_BOUND_KEYS = (
    ("versionStartIncluding", "versionStartExcluding"),
    ("versionEndIncluding", "versionEndExcluding"),
)


def _criterion_from_entry(entry: dict, cve_id: str) -> MatchCriterion:
    if not isinstance(entry, dict) or "cpe23" not in entry:
        raise MalformedFeed(f"{cve_id}: criterion must be an object with a cpe23 key")
    try:
        pattern = parse_cpe(entry["cpe23"])
    except CpeError as exc:
        raise MalformedFeed(f"{cve_id}: {exc}") from exc
    bounds = []
    for including, excluding in _BOUND_KEYS:
        if entry.get(including) is not None and entry.get(excluding) is not None:
            raise MalformedFeed(f"{cve_id}: both {including} and {excluding} present")
        if entry.get(including) is not None:
            bounds.append(VersionBound(str(entry[including]), inclusive=True))
        elif entry.get(excluding) is not None:
            bounds.append(VersionBound(str(entry[excluding]), inclusive=False))
        else:
            bounds.append(None)
    try:
        return MatchCriterion(pattern, version_start=bounds[0], version_end=bounds[1])
    except CpeError as exc:
        raise MalformedFeed(f"{cve_id}: {exc}") from exc


def _published_year(entry: dict, cve_id: str) -> int:
    published = entry.get("published")
    if isinstance(published, int):
        return published
    if isinstance(published, str) and len(published) >= 4 and published[:4].isdigit():
        return int(published[:4])
    if published is None:
        # CVE ids carry the year of discovery; use it when the feed
        # omits a publication date.
        return int(cve_id.split("-")[1])
    raise MalformedFeed(f"{cve_id}: unreadable published value {published!r}")


def _record_from_entry(entry) -> CveRecord:
    if not isinstance(entry, dict):
        raise MalformedFeed("feed records must be JSON objects")
    cve_id = entry.get("cveId")
    if not isinstance(cve_id, str):
        raise MalformedFeed("feed record missing cveId")
    base_score = entry.get("baseScore")
    if base_score is not None:
        try:
            base_score = float(base_score)
        except (TypeError, ValueError) as exc:
            raise MalformedFeed(f"{cve_id}: unreadable baseScore") from exc
    severity_text = entry.get("baseSeverity")
    if severity_text is None:
        try:
            severity = severity_bucket(base_score)
        except OutOfRange as exc:
            raise MalformedFeed(f"{cve_id}: {exc}") from exc
    else:
        try:
            severity = SeverityBucket(str(severity_text).lower())
        except ValueError as exc:
            raise MalformedFeed(f"{cve_id}: unknown baseSeverity {severity_text!r}") from exc
    cwes = entry.get("cwes", [])
    if not isinstance(cwes, list) or not all(isinstance(c, str) for c in cwes):
        raise MalformedFeed(f"{cve_id}: cwes must be a list of strings")
    criteria = entry.get("criteria", [])
    if not isinstance(criteria, list):
        raise MalformedFeed(f"{cve_id}: criteria must be a list")
    return CveRecord(
        cve_id=cve_id,
        description=str(entry.get("description", "")),
        cwe_ids=tuple(cwes),
        base_score=base_score,
        base_severity=severity,
        published_year=_published_year(entry, cve_id),
        criteria=tuple(_criterion_from_entry(c, cve_id) for c in criteria),
    )


def loads_feed(text: str) -> VulnDatabase:
    try:
        parsed = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFeed(f"feed is not valid JSON: {exc}") from exc
    if not isinstance(parsed, list):
        raise MalformedFeed("feed must be a JSON array of records")
    return VulnDatabase.from_records([_record_from_entry(entry) for entry in parsed])


def ingest_feed(path: str | Path) -> VulnDatabase:
    """Build a database from a feed file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedFeed(f"cannot read feed {path}: {exc}") from exc
    return loads_feed(text)
