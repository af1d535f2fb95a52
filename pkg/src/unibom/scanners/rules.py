"""Loader for the bundled scanner rule file."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class VersionStringPattern:
    vendor: str
    product: str
    pattern: "re.Pattern[bytes]"


@dataclass(frozen=True)
class ScannerRules:
    version_strings: tuple[VersionStringPattern, ...]
    headers: dict[str, tuple[str, str]]
    cmake_packages: dict[str, tuple[str, str]]
    link_flags: dict[str, tuple[str, str]]
    pkgconfig_modules: dict[str, tuple[str, str]]
    conan_packages: dict[str, tuple[str, str]]


def _pair(value: str) -> tuple[str, str]:
    vendor, _, product = value.partition(":")
    if not vendor or not product:
        raise ValueError(f"map values must be vendor:product, got {value!r}")
    return vendor.lower(), product.lower()


def _pair_map(table: dict) -> dict[str, tuple[str, str]]:
    return {key.lower(): _pair(value) for key, value in table.items()}


def parse_rules(text: str) -> ScannerRules:
    parsed = tomllib.loads(text)
    patterns = []
    for entry in parsed.get("version-strings", []):
        compiled = re.compile(entry["pattern"].encode("ascii"))
        if compiled.groups != 1:
            raise ValueError(
                f"version pattern needs exactly one capture group: {entry['pattern']!r}")
        patterns.append(VersionStringPattern(
            vendor=entry["vendor"].lower(),
            product=entry["product"].lower(),
            pattern=compiled,
        ))
    return ScannerRules(
        version_strings=tuple(patterns),
        headers=_pair_map(parsed.get("headers", {})),
        cmake_packages=_pair_map(parsed.get("cmake-packages", {})),
        link_flags=_pair_map(parsed.get("link-flags", {})),
        pkgconfig_modules=_pair_map(parsed.get("pkgconfig-modules", {})),
        conan_packages=_pair_map(parsed.get("conan-packages", {})),
    )


@lru_cache(maxsize=1)
def load_rules() -> ScannerRules:
    text = resources.files("unibom").joinpath("data/scanner-rules.toml").read_text()
    return parse_rules(text)
