"""In-memory SBOM document model with a minimal CycloneDX-style interchange format.

Documents are immutable; loading, merging, and scanning all funnel through
the same normalization step, so every document satisfies the component
uniqueness invariant by construction.
"""

from __future__ import annotations

import enum
import json
import os
import tempfile
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from .cpe import CpeError, CpeName, format_cpe, parse_cpe

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


class MalformedDocument(ValueError):
    """The file is not a parseable SBOM document."""


class MissingComponentName(MalformedDocument):
    """A component entry has no usable name."""


class Source(enum.Enum):
    """Which scanner produced a component, in decreasing confidence order."""

    FILESYSTEM_CATALOG = "filesystem-catalog"
    BINARY_STRING = "binary-string"
    CCPP_BUILD_FILE = "ccpp-build-file"
    EXTERNAL_SBOM = "external-sbom"


_CONFIDENCE = {
    Source.FILESYSTEM_CATALOG: 0,
    Source.BINARY_STRING: 1,
    Source.CCPP_BUILD_FILE: 2,
    Source.EXTERNAL_SBOM: 3,
}


@dataclass(frozen=True)
class Component:
    """A single catalogued software component.

    ``version`` is None when unknown. The name is lowercase-normalized;
    when a CPE is attached its product/version must agree with the
    component identity.
    """

    name: str
    version: str | None
    source: Source
    cpe: CpeName | None = None
    evidence: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise MissingComponentName("component name must be non-empty")
        object.__setattr__(self, "name", self.name.lower())
        object.__setattr__(self, "evidence", tuple(self.evidence))
        if self.cpe is not None:
            if not self.cpe.product.is_literal or self.cpe.product.literal != self.name:
                raise MalformedDocument(
                    f"cpe product {self.cpe.product!r} does not match component {self.name!r}"
                )
            if self.version is None:
                if not self.cpe.version.is_any:
                    raise MalformedDocument("unknown-version component needs a wildcard cpe version")
            elif not (self.cpe.version.is_literal and self.cpe.version.literal == self.version.lower()):
                raise MalformedDocument(
                    f"cpe version {self.cpe.version!r} does not match component version {self.version!r}"
                )

    @property
    def key(self) -> tuple[str, str | None]:
        return (self.name, self.version)

    def effective_cpe(self) -> CpeName:
        """The attached CPE, or one synthesized from name/version."""
        if self.cpe is not None:
            return self.cpe
        return CpeName.application(self.name, self.name, self.version)


def _sort_key(component: Component):
    return (
        component.name,
        component.version is None,
        component.version or "",
        _CONFIDENCE[component.source],
    )


def _dedupe_evidence(paths) -> tuple[str, ...]:
    seen = {}
    for p in paths:
        seen.setdefault(p, None)
    return tuple(seen)


def _normalize(components) -> tuple[Component, ...]:
    """Collapse duplicate (name, version, source) entries and sort."""
    merged: dict[tuple, Component] = {}
    for c in components:
        identity = (c.name, c.version, c.source)
        prior = merged.get(identity)
        if prior is None:
            merged[identity] = c
        else:
            merged[identity] = replace(
                prior,
                cpe=prior.cpe or c.cpe,
                evidence=_dedupe_evidence(prior.evidence + c.evidence),
            )
    return tuple(sorted(merged.values(), key=_sort_key))


@dataclass(frozen=True)
class SbomDocument:
    """An inventory of components for one analysis target."""

    target_name: str
    created_at: datetime = EPOCH
    generator: str = "unibom"
    components: tuple[Component, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "components", _normalize(self.components))


def _parse_timestamp(text: str) -> datetime:
    try:
        stamp = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise MalformedDocument(f"bad metadata timestamp: {text!r}") from exc
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp


def _component_from_entry(entry) -> Component:
    if not isinstance(entry, dict):
        raise MalformedDocument("component entries must be objects")
    name = entry.get("name")
    if not isinstance(name, str) or not name.strip():
        raise MissingComponentName(f"component without a name: {entry!r}")
    version = entry.get("version")
    if version in (None, "", "unknown"):
        version = None
    else:
        version = str(version)

    source = Source.EXTERNAL_SBOM
    evidence = []
    for prop in entry.get("properties", []) or []:
        key, value = prop.get("name"), prop.get("value")
        if key == "unibom:source":
            try:
                source = Source(value)
            except ValueError:
                pass
        elif key == "unibom:evidence" and value:
            evidence.append(value)

    cpe = None
    if entry.get("cpe"):
        try:
            cpe = parse_cpe(entry["cpe"])
        except CpeError as exc:
            raise MalformedDocument(f"bad component cpe {entry['cpe']!r}: {exc}") from exc
    component = Component(
        name=name.strip(),
        version=version.lower() if version else None,
        source=source,
        cpe=cpe,
        evidence=tuple(evidence),
    )
    if component.cpe is None:
        component = replace(component, cpe=component.effective_cpe())
    return component


def loads_sbom(data: bytes | str) -> SbomDocument:
    """Parse interchange-format bytes into a document."""
    try:
        raw = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedDocument(f"not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise MalformedDocument("SBOM document must be a JSON object")
    if raw.get("bomFormat") != "CycloneDX":
        raise MalformedDocument("bomFormat must be CycloneDX")
    components_raw = raw.get("components", [])
    if not isinstance(components_raw, list):
        raise MalformedDocument("components must be a list")

    metadata = raw.get("metadata") or {}
    created_at = EPOCH
    if isinstance(metadata, dict) and metadata.get("timestamp"):
        created_at = _parse_timestamp(metadata["timestamp"])
    target_name = "sbom"
    if isinstance(metadata, dict):
        target_name = (metadata.get("component") or {}).get("name") or "sbom"
    generator = "external"
    if isinstance(metadata, dict):
        tools = metadata.get("tools") or []
        if tools and isinstance(tools, list) and isinstance(tools[0], dict) and tools[0].get("name"):
            generator = tools[0]["name"]

    components = [_component_from_entry(e) for e in components_raw]
    return SbomDocument(
        target_name=target_name,
        created_at=created_at,
        generator=generator,
        components=tuple(components),
    )


def load_sbom(file: str | Path) -> SbomDocument:
    """Load a document from disk. Raises MalformedDocument on bad input."""
    path = Path(file)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise MalformedDocument(f"cannot read {path}: {exc}") from exc
    return loads_sbom(data)


def _component_to_entry(component: Component) -> dict:
    entry = {
        "type": "library",
        "name": component.name,
        "version": component.version if component.version is not None else "unknown",
    }
    if component.cpe is not None:
        entry["cpe"] = format_cpe(component.cpe)
    properties = []
    if component.source is not Source.EXTERNAL_SBOM:
        properties.append({"name": "unibom:source", "value": component.source.value})
    for path in component.evidence:
        properties.append({"name": "unibom:evidence", "value": path})
    if properties:
        entry["properties"] = properties
    return entry


def dumps_sbom(doc: SbomDocument) -> str:
    payload = {
        "bomFormat": "CycloneDX",
        "specVersion": "1.4",
        "metadata": {
            "timestamp": doc.created_at.isoformat(),
            "tools": [{"name": doc.generator}],
            "component": {"type": "application", "name": doc.target_name},
        },
        "components": [_component_to_entry(c) for c in doc.components],
    }
    return json.dumps(payload, indent=2) + "\n"


def write_atomic(path: str | Path, data: str | bytes) -> None:
    """Write via a temp file and rename so readers never see a torn file."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def emit_sbom(doc: SbomDocument, file: str | Path) -> None:
    """Serialize a document; reload restores a structurally equal one."""
    write_atomic(file, dumps_sbom(doc))


def merge_sboms(docs) -> SbomDocument:
    """Union components across documents, deduplicating by (name, version).

    When the same (name, version) arrives from several sources the most
    trustworthy source wins and evidence lists are concatenated.
    """
    docs = list(docs)
    if not docs:
        raise ValueError("merge_sboms needs at least one document")
    buckets: dict[tuple, list[Component]] = {}
    for doc in docs:
        for component in doc.components:
            buckets.setdefault(component.key, []).append(component)

    merged = []
    for key, group in buckets.items():
        winner = min(group, key=lambda c: _CONFIDENCE[c.source])
        cpe = winner.cpe
        if cpe is None:
            cpe = next((c.cpe for c in group if c.cpe is not None), None)
        evidence = _dedupe_evidence(p for c in group for p in c.evidence)
        merged.append(replace(winner, cpe=cpe, evidence=evidence))

    first = docs[0]
    return SbomDocument(
        target_name=first.target_name,
        created_at=first.created_at,
        generator=first.generator,
        components=tuple(merged),
    )
