"""Severity bucketing and memory-safety classification.

The default classifier is a deterministic rule engine: a curated
CWE-to-class table plus keyword heuristics over weakness descriptions.
An optional HTTP text-completion client can be layered on top for ids the
table does not know; its answers are cached and any outage falls back to
the rule engine so command outcomes never depend on the network.
"""

from __future__ import annotations

import enum
import json
import re
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class OutOfRange(ValueError):
    """A CVSS base score outside [0.0, 10.0]."""


class ExternalClassifierUnavailable(RuntimeError):
    """The external classification endpoint could not produce an answer."""


class SeverityBucket(enum.Enum):
    NONE = "none"
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"
    UNKNOWN = "unknown"


#: Rank for threshold gates; UNKNOWN deliberately has no rank.
SEVERITY_RANK = {
    SeverityBucket.NONE: 0,
    SeverityBucket.LOW: 1,
    SeverityBucket.MEDIUM: 2,
    SeverityBucket.HIGH: 3,
    SeverityBucket.CRITICAL: 4,
}


def severity_bucket(base_score: float | None) -> SeverityBucket:
    """Map a CVSS v3.1 base score to its qualitative bucket.

    0.0 is NONE, then LOW up to 3.9, MEDIUM up to 6.9, HIGH up to 8.9,
    CRITICAL through 10.0. A missing score is UNKNOWN.
    """
    if base_score is None:
        return SeverityBucket.UNKNOWN
    score = float(base_score)
    if score < 0.0 or score > 10.0:
        raise OutOfRange(f"base score {score} outside [0.0, 10.0]")
    if score == 0.0:
        return SeverityBucket.NONE
    if score < 4.0:
        return SeverityBucket.LOW
    if score < 7.0:
        return SeverityBucket.MEDIUM
    if score < 9.0:
        return SeverityBucket.HIGH
    return SeverityBucket.CRITICAL


class MemoryClass(enum.Enum):
    NOT_MEMORY = "not-memory"
    SPATIAL = "spatial"
    TEMPORAL = "temporal"
    OTHER_MEMORY = "other-memory"
    UNKNOWN = "unknown"

    @property
    def is_memory_related(self) -> bool:
        return self in (MemoryClass.SPATIAL, MemoryClass.TEMPORAL, MemoryClass.OTHER_MEMORY)


#: Aggregation priority: one memory-related root cause marks the whole CVE.
_CLASS_PRIORITY = {
    MemoryClass.SPATIAL: 4,
    MemoryClass.TEMPORAL: 3,
    MemoryClass.OTHER_MEMORY: 2,
    MemoryClass.NOT_MEMORY: 1,
    MemoryClass.UNKNOWN: 0,
}

NOINFO = "CWE-noinfo"

_CWE_ID_RE = re.compile(r"CWE-\d+$", re.IGNORECASE)


@lru_cache(maxsize=1)
def load_rule_table() -> dict[str, MemoryClass]:
    """The bundled CWE class table; keys are canonical ``CWE-n`` ids."""
    text = resources.files("unibom").joinpath("data/cwe-classes.toml").read_text()
    parsed = tomllib.loads(text)
    table = {}
    for cwe_id, label in parsed["classes"].items():
        table[cwe_id.upper()] = MemoryClass(label)
    return table


_SPATIAL_KEYWORDS = ("buffer", "bounds", "overflow")
_TEMPORAL_KEYWORDS = ("use after free", "double free", "dangling")
_OTHER_KEYWORDS = ("uninitialized", "leak", "allocation")


def _heuristic(description: str) -> MemoryClass:
    text = re.sub(r"[_\-/]", " ", description.lower())
    if any(k in text for k in _SPATIAL_KEYWORDS):
        return MemoryClass.SPATIAL
    if any(k in text for k in _TEMPORAL_KEYWORDS):
        return MemoryClass.TEMPORAL
    if any(k in text for k in _OTHER_KEYWORDS):
        return MemoryClass.OTHER_MEMORY
    return MemoryClass.NOT_MEMORY


class RuleEngine:
    """Total, deterministic classifier: table lookup then keyword heuristics."""

    def __init__(self, table: dict[str, MemoryClass] | None = None):
        self.table = table if table is not None else load_rule_table()

    def lookup(self, identifier: str) -> MemoryClass | None:
        return self.table.get(identifier.upper())

    def classify(self, identifier: str, description: str | None = None) -> MemoryClass:
        hit = self.table.get(identifier.upper())
        if hit is not None:
            return hit
        if description:
            return _heuristic(description)
        return MemoryClass.UNKNOWN


def _prompt_template() -> str:
    return resources.files("unibom").joinpath("data/classifier-prompt.txt").read_text()


@dataclass
class ProvenanceEvent:
    identifier: str
    outcome: str
    detail: str = ""


class ExternalModelClient:
    """Text-completion classifier behind the rule table.

    Consulted only for table misses; answers are cached on disk and every
    failure is recorded and absorbed by falling back to the rule engine,
    so an outage never changes the result of a run beyond class quality.
    """

    def __init__(self, url: str, api_key: str = "", cache_path: str | Path | None = None,
                 timeout: float = 10.0, engine: RuleEngine | None = None):
        self.url = url
        self.api_key = api_key
        self.timeout = timeout
        self.engine = engine or RuleEngine()
        self.cache_path = Path(cache_path) if cache_path else None
        self.provenance: list[ProvenanceEvent] = []
        self._lock = threading.Lock()
        self._cache: dict[str, str] = {}
        if self.cache_path and self.cache_path.exists():
            try:
                self._cache = json.loads(self.cache_path.read_text())
            except (OSError, json.JSONDecodeError):
                self._cache = {}

    def _save_cache(self):
        if self.cache_path:
            self.cache_path.write_text(json.dumps(self._cache, indent=2, sort_keys=True))

    def _request(self, description: str) -> MemoryClass:
        prompt = _prompt_template().format(description=description)
        body = json.dumps({"prompt": prompt, "max_tokens": 8}).encode()
        request = urllib.request.Request(
            self.url,
            data=body,
            headers={
                "Content-Type": "application/json",
                **({"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}),
            },
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                payload = json.loads(response.read())
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise ExternalClassifierUnavailable(str(exc)) from exc
        completion = str(payload.get("completion", "")).lower()
        for cls in (MemoryClass.OTHER_MEMORY, MemoryClass.NOT_MEMORY,
                    MemoryClass.SPATIAL, MemoryClass.TEMPORAL):
            if cls.value in completion:
                return cls
        raise ExternalClassifierUnavailable(f"unparseable completion: {completion!r}")

    def classify(self, identifier: str, description: str | None = None) -> MemoryClass:
        hit = self.engine.table.get(identifier.upper())
        if hit is not None:
            return hit
        if not description:
            return self.engine.classify(identifier, description)
        with self._lock:
            cached = self._cache.get(identifier.upper())
            if cached is not None:
                return MemoryClass(cached)
            try:
                answer = self._request(description)
            except ExternalClassifierUnavailable as exc:
                self.provenance.append(ProvenanceEvent(identifier, "fallback", str(exc)))
                return self.engine.classify(identifier, description)
            self._cache[identifier.upper()] = answer.value
            self._save_cache()
            self.provenance.append(ProvenanceEvent(identifier, "external"))
            return answer


#: Anything with a ``classify(identifier, description) -> MemoryClass`` method.
ClassifierPort = RuleEngine | ExternalModelClient

_DEFAULT_ENGINE = None


def default_port() -> RuleEngine:
    global _DEFAULT_ENGINE
    if _DEFAULT_ENGINE is None:
        _DEFAULT_ENGINE = RuleEngine()
    return _DEFAULT_ENGINE


def classify_cwe(cwe_id: str, description: str | None = None,
                 port: ClassifierPort | None = None) -> MemoryClass:
    """Classify one weakness id, using its description on table misses."""
    port = port or default_port()
    return port.classify(cwe_id, description)


def classify_cve(record, port: ClassifierPort | None = None) -> MemoryClass:
    """Classify a vulnerability record by its worst-offending weakness.

    ``record`` needs ``cwe_ids`` and ``description`` attributes. CWE ids
    without table entries (including ``CWE-noinfo``) classify through the
    record's own description.
    """
    port = port or default_port()
    cwe_ids = list(record.cwe_ids) or [NOINFO]
    classes = [port.classify(cwe_id, record.description) for cwe_id in cwe_ids]
    return max(classes, key=_CLASS_PRIORITY.__getitem__)
