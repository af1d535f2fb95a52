"""Component scanners: filesystem cataloguers and C/C++ build files."""

from .ccpp import scan_ccpp
from .filesystem import scan_filesystem

__all__ = ["scan_ccpp", "scan_filesystem"]
