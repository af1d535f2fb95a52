"""Detect C/C++ dependencies from build files and includes.

Five rule kinds: CMake find_package calls, Makefile -l link flags,
conanfile.txt [requires] pins, pkg-config Requires lines, and a
well-known-header map. Versions are recorded only where the build file
states one (CMake minimum constraint, conan pin); everything else is
version-unknown.
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

from ..cpe import CpeName
from ..sbom import Component, SbomDocument, Source, merge_sboms
from .rules import ScannerRules, load_rules

log = logging.getLogger(__name__)

_FIND_PACKAGE_RE = re.compile(
    r"find_package\s*\(\s*([A-Za-z0-9_.+-]+)(?:\s+([0-9][A-Za-z0-9.]*))?",
    re.IGNORECASE,
)
_LINK_FLAG_RE = re.compile(r"(?<![\w-])-l([A-Za-z0-9_.+-]+)")
_INCLUDE_RE = re.compile(r'^\s*#\s*include\s*[<"]([^>"]+)[>"]', re.MULTILINE)
_CONAN_REF_RE = re.compile(r"^([A-Za-z0-9_.+-]+)/([A-Za-z0-9_.+-]+)")

_SOURCE_SUFFIXES = {".c", ".h", ".cc", ".hh", ".cpp", ".hpp", ".cxx", ".hxx"}


def _component(vendor: str, product: str, version: str | None,
               evidence: tuple[str, ...]) -> Component:
    return Component(
        name=product,
        version=version,
        source=Source.CCPP_BUILD_FILE,
        cpe=CpeName.application(vendor, product, version),
        evidence=evidence,
    )


def _scan_cmake(text: str, rel: str, rules: ScannerRules) -> list[Component]:
    components = []
    for token, version in _FIND_PACKAGE_RE.findall(text):
        mapped = rules.cmake_packages.get(token.lower())
        if mapped is None:
            continue
        vendor, product = mapped
        evidence = (rel, "constraint:minimum") if version else (rel,)
        components.append(_component(vendor, product, version or None, evidence))
    return components


def _scan_makefile(text: str, rel: str, rules: ScannerRules) -> list[Component]:
    components = []
    for token in _LINK_FLAG_RE.findall(text):
        mapped = rules.link_flags.get(token.lower())
        if mapped is None:
            continue
        vendor, product = mapped
        components.append(_component(vendor, product, None, (rel,)))
    return components


def _scan_conanfile(text: str, rel: str, rules: ScannerRules) -> list[Component]:
    components = []
    section = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip().lower()
            continue
        if section not in ("requires", "build_requires", "tool_requires"):
            continue
        match = _CONAN_REF_RE.match(stripped)
        if match is None:
            continue
        name, version = match.group(1).lower(), match.group(2)
        vendor, product = rules.conan_packages.get(name, (name, name))
        components.append(_component(vendor, product, version, (rel,)))
    return components


def _scan_pkgconfig(text: str, rel: str, rules: ScannerRules) -> list[Component]:
    components = []
    for line in text.splitlines():
        key, _, value = line.partition(":")
        if key.strip() not in ("Requires", "Requires.private"):
            continue
        # Comma or space separated module names, optionally followed by
        # a version constraint ("libssl >= 1.1").
        for clause in re.split(r"[,]", value):
            tokens = clause.split()
            if not tokens:
                continue
            mapped = rules.pkgconfig_modules.get(tokens[0].lower())
            if mapped is None:
                continue
            vendor, product = mapped
            components.append(_component(vendor, product, None, (rel,)))
    return components


def _scan_includes(text: str, rel: str, rules: ScannerRules) -> list[Component]:
    components = []
    for include in _INCLUDE_RE.findall(text):
        mapped = rules.headers.get(include.lower())
        if mapped is None:
            continue
        vendor, product = mapped
        components.append(_component(vendor, product, None, (rel,)))
    return components


def _rule_for(path: Path):
    name = path.name
    if name == "CMakeLists.txt" or path.suffix == ".cmake":
        return _scan_cmake
    if name in ("Makefile", "makefile", "GNUmakefile") or path.suffix == ".mk":
        return _scan_makefile
    if name == "conanfile.txt":
        return _scan_conanfile
    if path.suffix == ".pc":
        return _scan_pkgconfig
    if path.suffix in _SOURCE_SUFFIXES:
        return _scan_includes
    return None


def scan_ccpp(root: str | Path) -> SbomDocument:
    """Scan a source tree's build metadata for dependencies."""
    root = Path(root)
    if not root.is_dir():
        raise OSError(f"not a directory: {root}")
    rules = load_rules()
    components: list[Component] = []
    for path in sorted(p for p in root.rglob("*") if p.is_file() and not p.is_symlink()):
        scanner = _rule_for(path)
        if scanner is None:
            continue
        rel = path.relative_to(root).as_posix()
        try:
            text = path.read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            log.warning("skipping unreadable file %s: %s", rel, exc)
            continue
        components.extend(scanner(text, rel, rules))
    doc = SbomDocument(target_name=root.name, components=tuple(components))
    return merge_sboms([doc])
