"""unibom: firmware extraction, SBOM cataloguing, and offline vulnerability analysis."""

__version__ = "0.1.0"
