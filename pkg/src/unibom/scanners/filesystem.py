"""Catalogue components from an extracted filesystem tree.

Package-manager metadata (opkg, dpkg, apk, npm, conan) is parsed by the
first cataloguer claiming each file; ELF executables are additionally
scanned for known version strings. Everything merges into one document
with one component per (name, version).
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from ..cpe import CpeName
from ..sbom import Component, SbomDocument, Source, merge_sboms
from .rules import ScannerRules, load_rules

log = logging.getLogger(__name__)

DEFAULT_BINARY_SIZE_CAP = 8 * 1024 * 1024
_ELF_MAGIC = b"\x7fELF"


def _component(vendor: str, product: str, version: str | None,
               source: Source, evidence: str) -> Component:
    return Component(
        name=product,
        version=version,
        source=source,
        cpe=CpeName.application(vendor, product, version),
        evidence=(evidence,),
    )


def _parse_control_stanza(text: str, name_key: str, version_key: str) -> tuple[str | None, str | None]:
    name = version = None
    for line in text.splitlines():
        if line.startswith(f"{name_key}:"):
            name = line.split(":", 1)[1].strip()
        elif line.startswith(f"{version_key}:"):
            version = line.split(":", 1)[1].strip()
    return name, version


def _parse_opkg_control(text: str, evidence: str) -> list[Component]:
    name, version = _parse_control_stanza(text, "Package", "Version")
    if not name:
        return []
    return [_component(name, name, version or None,
                       Source.FILESYSTEM_CATALOG, evidence)]


def _parse_dpkg_status(text: str, evidence: str) -> list[Component]:
    components = []
    for stanza in text.split("\n\n"):
        if not stanza.strip():
            continue
        status = ""
        for line in stanza.splitlines():
            if line.startswith("Status:"):
                status = line.split(":", 1)[1]
        if "installed" not in status:
            continue
        name, version = _parse_control_stanza(stanza, "Package", "Version")
        if name:
            components.append(_component(name, name, version or None,
                                         Source.FILESYSTEM_CATALOG, evidence))
    return components


def _parse_apk_installed(text: str, evidence: str) -> list[Component]:
    components = []
    for stanza in text.split("\n\n"):
        name = version = None
        for line in stanza.splitlines():
            if line.startswith("P:"):
                name = line[2:].strip()
            elif line.startswith("V:"):
                version = line[2:].strip()
        if name:
            components.append(_component(name, name, version or None,
                                         Source.FILESYSTEM_CATALOG, evidence))
    return components


def _parse_package_json(text: str, evidence: str) -> list[Component]:
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError:
        log.warning("skipping malformed manifest %s", evidence)
        return []
    name = manifest.get("name") if isinstance(manifest, dict) else None
    if not isinstance(name, str) or not name.strip():
        return []
    version = manifest.get("version")
    version = version if isinstance(version, str) and version else None
    # Scoped names like @scope/pkg keep only the package part.
    product = name.rsplit("/", 1)[-1]
    return [_component(product, product, version,
                       Source.FILESYSTEM_CATALOG, evidence)]


def _conan_refs(lock: dict) -> list[str]:
    refs = []
    nodes = (lock.get("graph_lock") or {}).get("nodes")
    if isinstance(nodes, dict):
        for node in nodes.values():
            ref = node.get("ref") if isinstance(node, dict) else None
            if isinstance(ref, str):
                refs.append(ref)
    for key in ("requires", "build_requires"):
        values = lock.get(key)
        if isinstance(values, list):
            refs.extend(v for v in values if isinstance(v, str))
    return refs


def _parse_conan_lock(text: str, evidence: str) -> list[Component]:
    try:
        lock = json.loads(text)
    except json.JSONDecodeError:
        log.warning("skipping malformed lockfile %s", evidence)
        return []
    if not isinstance(lock, dict):
        return []
    components = []
    for ref in _conan_refs(lock):
        # name/version@user/channel#revision%timestamp
        bare = ref.split("#", 1)[0].split("@", 1)[0].split("%", 1)[0]
        name, _, version = bare.partition("/")
        if not name:
            continue
        components.append(_component(name, name, version.strip() or None,
                                     Source.FILESYSTEM_CATALOG, evidence))
    return components


_CATALOGUERS = (
    ("opkg-control", lambda rel: "/opkg/info/" in f"/{rel}" and rel.endswith(".control"),
     _parse_opkg_control),
    ("dpkg-status", lambda rel: rel.endswith("dpkg/status"), _parse_dpkg_status),
    ("apk-installed", lambda rel: rel.endswith("apk/db/installed"), _parse_apk_installed),
    ("node-manifest", lambda rel: rel.rsplit("/", 1)[-1] == "package.json",
     _parse_package_json),
    ("conan-lock", lambda rel: rel.rsplit("/", 1)[-1] == "conan.lock", _parse_conan_lock),
)


def scan_binary_strings(data: bytes, evidence: str,
                        rules: ScannerRules) -> list[Component]:
    """Match known product version strings inside one executable."""
    components = []
    seen = set()
    for rule in rules.version_strings:
        for match in rule.pattern.finditer(data):
            try:
                version = match.group(1).decode("ascii")
            except UnicodeDecodeError:
                continue
            key = (rule.product, version)
            if key in seen:
                continue
            seen.add(key)
            components.append(_component(rule.vendor, rule.product, version,
                                         Source.BINARY_STRING, evidence))
    return components


def scan_filesystem(root: str | Path,
                    binary_size_cap: int = DEFAULT_BINARY_SIZE_CAP) -> SbomDocument:
    """Walk an extracted tree and catalogue its components."""
    root = Path(root)
    if not root.is_dir():
        raise OSError(f"not a directory: {root}")
    rules = load_rules()
    components: list[Component] = []

    for path in sorted(p for p in root.rglob("*") if p.is_file() and not p.is_symlink()):
        rel = path.relative_to(root).as_posix()
        cataloguer = next(
            (parse for _, claims, parse in _CATALOGUERS if claims(rel)), None)
        try:
            if cataloguer is not None:
                components.extend(cataloguer(
                    path.read_text(encoding="utf-8", errors="replace"), rel))
                continue
            if path.stat().st_size > binary_size_cap:
                continue
            head = path.open("rb").read(4)
            if head == _ELF_MAGIC:
                components.extend(scan_binary_strings(path.read_bytes(), rel, rules))
        except OSError as exc:
            log.warning("skipping unreadable file %s: %s", rel, exc)

    doc = SbomDocument(target_name=root.name, components=tuple(components))
    return merge_sboms([doc])
