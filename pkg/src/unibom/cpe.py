"""CPE 2.3 names: parsing, formatting, version ordering, and criterion matching.

Only the formatted-string binding of CPE 2.3 is supported (the
``cpe:2.3:part:vendor:product:...`` form). URI-bound CPE 2.2 strings are
rejected. Attribute values are either a concrete lowercase token, the
any-value wildcard ``*``, or the not-applicable marker ``-``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass


class CpeError(ValueError):
    """Base class for CPE parsing and construction errors."""


class BadPrefix(CpeError):
    """The string does not start with the ``cpe:2.3:`` prefix."""


class WrongFieldCount(CpeError):
    """The string does not have exactly 13 colon-separated fields."""


class BadPart(CpeError):
    """The part attribute is not one of ``a``, ``o``, ``h``."""


class ValueKind(enum.Enum):
    ANY = "any"
    NA = "na"
    LITERAL = "literal"


@dataclass(frozen=True)
class AttributeValue:
    """One CPE attribute: a lowercase literal token, ``*``, or ``-``."""

    kind: ValueKind
    literal: str = ""

    def __post_init__(self):
        if self.kind is ValueKind.LITERAL and not self.literal:
            raise CpeError("literal attribute value must be non-empty")
        if self.kind is not ValueKind.LITERAL and self.literal:
            raise CpeError("only literal attribute values carry a token")

    @classmethod
    def lit(cls, token: str) -> "AttributeValue":
        return cls(ValueKind.LITERAL, token.lower())

    @property
    def is_any(self) -> bool:
        return self.kind is ValueKind.ANY

    @property
    def is_na(self) -> bool:
        return self.kind is ValueKind.NA

    @property
    def is_literal(self) -> bool:
        return self.kind is ValueKind.LITERAL


ANY = AttributeValue(ValueKind.ANY)
NA = AttributeValue(ValueKind.NA)

#: Attribute names in formatted-string field order.
ATTRIBUTES = (
    "part",
    "vendor",
    "product",
    "version",
    "update",
    "edition",
    "language",
    "sw_edition",
    "target_sw",
    "target_hw",
    "other",
)

_PREFIX = "cpe:2.3:"
_PARTS = ("a", "o", "h")


@dataclass(frozen=True)
class CpeName:
    """A structured CPE 2.3 name with its eleven attributes.

    ``part`` is always a literal drawn from ``a`` (application),
    ``o`` (operating system), or ``h`` (hardware); the remaining
    attributes may be wildcards.
    """

    part: AttributeValue
    vendor: AttributeValue
    product: AttributeValue
    version: AttributeValue = ANY
    update: AttributeValue = ANY
    edition: AttributeValue = ANY
    language: AttributeValue = ANY
    sw_edition: AttributeValue = ANY
    target_sw: AttributeValue = ANY
    target_hw: AttributeValue = ANY
    other: AttributeValue = ANY

    def __post_init__(self):
        if not self.part.is_literal or self.part.literal not in _PARTS:
            raise BadPart(f"part must be one of {_PARTS}")

    @classmethod
    def application(cls, vendor: str, product: str, version: str | None = None) -> "CpeName":
        """Build an ``a``-part name; a missing version becomes the wildcard."""
        return cls(
            part=AttributeValue.lit("a"),
            vendor=AttributeValue.lit(vendor),
            product=AttributeValue.lit(product),
            version=AttributeValue.lit(version) if version is not None else ANY,
        )

    def with_version(self, version: str | None) -> "CpeName":
        value = AttributeValue.lit(version) if version is not None else ANY
        return CpeName(**{**{a: getattr(self, a) for a in ATTRIBUTES}, "version": value})

    def values(self) -> tuple[AttributeValue, ...]:
        return tuple(getattr(self, a) for a in ATTRIBUTES)


def _split_fields(text: str) -> list[str]:
    """Split on ``:`` while honouring backslash escapes inside values."""
    fields = []
    current = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            current.append(text[i + 1])
            i += 2
            continue
        if ch == ":":
            fields.append("".join(current))
            current = []
        else:
            current.append(ch)
        i += 1
    fields.append("".join(current))
    return fields


def _escape(token: str) -> str:
    return token.replace("\\", "\\\\").replace(":", "\\:")


def _parse_value(field: str) -> AttributeValue:
    if field == "*":
        return ANY
    if field == "-":
        return NA
    if field == "":
        raise CpeError("empty attribute field")
    return AttributeValue.lit(field)


def _render_value(value: AttributeValue) -> str:
    if value.is_any:
        return "*"
    if value.is_na:
        return "-"
    return _escape(value.literal)


def parse_cpe(text: str) -> CpeName:
    """Parse a formatted CPE 2.3 string into a structured name.

    Raises BadPrefix for anything not starting ``cpe:2.3:``,
    WrongFieldCount when the string does not have 13 fields, and
    BadPart when the part attribute is not ``a``/``o``/``h``.
    """
    if not text.startswith(_PREFIX):
        raise BadPrefix(f"not a cpe:2.3 formatted string: {text!r}")
    fields = _split_fields(text)
    if len(fields) != 13:
        raise WrongFieldCount(f"expected 13 fields, got {len(fields)}: {text!r}")
    part = fields[2]
    if part not in _PARTS:
        raise BadPart(f"part must be one of {_PARTS}, got {part!r}")
    values = [_parse_value(f) for f in fields[2:]]
    return CpeName(**dict(zip(ATTRIBUTES, values)))


def format_cpe(name: CpeName) -> str:
    """Render a structured name back to its canonical 13-field string."""
    return _PREFIX + ":".join(_render_value(v) for v in name.values())


_SEGMENT_RE = re.compile(r"(\d*)(.*)", re.DOTALL)


@dataclass(frozen=True)
class VersionKey:
    """Sortable form of a version literal.

    Each dot-separated segment becomes a (numeric run, trailing text)
    pair; numeric runs compare numerically and an empty trailing run
    sorts before any non-empty one, so ``1.1.1`` precedes ``1.1.1n``.
    """

    segments: tuple[tuple[int, str], ...]

    @classmethod
    def from_text(cls, version: str) -> "VersionKey":
        segments = []
        for segment in version.split("."):
            digits, rest = _SEGMENT_RE.match(segment).groups()
            segments.append((int(digits) if digits else 0, rest.lower()))
        return cls(tuple(segments))


def compare_versions(a: str, b: str) -> int:
    """Total order over version strings: -1, 0, or 1."""
    ka = VersionKey.from_text(a).segments
    kb = VersionKey.from_text(b).segments
    if ka < kb:
        return -1
    if ka > kb:
        return 1
    return 0


@dataclass(frozen=True)
class VersionBound:
    version: str
    inclusive: bool


@dataclass(frozen=True)
class MatchCriterion:
    """A CPE pattern plus an optional version range.

    When either bound is present the pattern's version attribute must be
    the wildcard; the range then takes over version matching.
    """

    pattern: CpeName
    version_start: VersionBound | None = None
    version_end: VersionBound | None = None

    def __post_init__(self):
        if (self.version_start or self.version_end) and not self.pattern.version.is_any:
            raise CpeError("range criteria require a wildcard version in the pattern")

    @property
    def has_range(self) -> bool:
        return self.version_start is not None or self.version_end is not None


def _attribute_matches(pattern: AttributeValue, candidate: AttributeValue) -> bool:
    if pattern.is_any:
        return True
    if pattern.is_na:
        return candidate.is_na
    return candidate.is_literal and candidate.literal == pattern.literal


def _in_range(key: VersionKey, criterion: MatchCriterion) -> bool:
    if criterion.version_start is not None:
        bound = VersionKey.from_text(criterion.version_start.version)
        if key.segments < bound.segments:
            return False
        if key.segments == bound.segments and not criterion.version_start.inclusive:
            return False
    if criterion.version_end is not None:
        bound = VersionKey.from_text(criterion.version_end.version)
        if key.segments > bound.segments:
            return False
        if key.segments == bound.segments and not criterion.version_end.inclusive:
            return False
    return True


def match_cpe(candidate: CpeName, criterion: MatchCriterion, match_unversioned: bool = False) -> bool:
    """Decide whether a concrete name satisfies a match criterion.

    A candidate whose version is unknown (wildcard) only satisfies a
    range criterion when ``match_unversioned`` is set; versionless
    scanner output would otherwise match every historical range.
    """
    for attr in ATTRIBUTES:
        if attr == "version" and criterion.has_range:
            continue
        if not _attribute_matches(getattr(criterion.pattern, attr), getattr(candidate, attr)):
            return False
    if criterion.has_range:
        if not candidate.version.is_literal:
            return match_unversioned
        return _in_range(VersionKey.from_text(candidate.version.literal), criterion)
    return True
