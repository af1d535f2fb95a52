"""Firmware signature scanning and payload carving."""

from .carver import CarveResult, CarveStatus, ExtractionReport, extract
from .signatures import FormatId, SIGNATURES, scan_signatures

__all__ = [
    "CarveResult",
    "CarveStatus",
    "ExtractionReport",
    "FormatId",
    "SIGNATURES",
    "extract",
    "scan_signatures",
]
