"""Magic-signature table and image scanning."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import BinaryIO, Callable


class FormatId(enum.Enum):
    GZIP = "gzip"
    XZ = "xz"
    TAR = "tar"
    CPIO_NEWC = "cpio-newc"
    SQUASHFS_V4 = "squashfs-v4"
    JFFS2 = "jffs2"


def _confirm_gzip(data: bytes, offset: int) -> bool:
    # Reserved FLG bits must be zero in a real member header.
    return offset + 4 <= len(data) and data[offset + 3] & 0xE0 == 0


def _confirm_squashfs_v4(data: bytes, offset: int) -> bool:
    if offset + 32 > len(data):
        return False
    major, minor = struct.unpack_from("<HH", data, offset + 28)
    return major == 4 and minor == 0


# JFFS2 node types that may legitimately follow the magic.
_JFFS2_NODETYPES = {0x2003, 0xE001, 0xE002, 0x2004, 0x2006, 0xE008, 0xE009}


def _confirm_jffs2(data: bytes, offset: int) -> bool:
    if offset + 4 > len(data):
        return False
    (nodetype,) = struct.unpack_from("<H", data, offset + 2)
    return nodetype in _JFFS2_NODETYPES


@dataclass(frozen=True)
class Signature:
    format_id: FormatId
    magic: bytes
    magic_offset_in_container: int = 0
    confirm: Callable[[bytes, int], bool] | None = None

    def __post_init__(self):
        if len(self.magic) < 2:
            raise ValueError("magic must be at least 2 bytes")


SIGNATURES = (
    Signature(FormatId.GZIP, b"\x1f\x8b\x08", confirm=_confirm_gzip),
    Signature(FormatId.XZ, b"\xfd7zXZ\x00"),
    Signature(FormatId.TAR, b"ustar", magic_offset_in_container=257),
    Signature(FormatId.CPIO_NEWC, b"070701"),
    Signature(FormatId.SQUASHFS_V4, b"hsqs", confirm=_confirm_squashfs_v4),
    Signature(FormatId.JFFS2, b"\x85\x19", confirm=_confirm_jffs2),
)


def scan_bytes(data: bytes) -> list[tuple[int, FormatId]]:
    """All container offsets where a table signature matches, ascending."""
    hits = []
    for signature in SIGNATURES:
        position = data.find(signature.magic)
        while position != -1:
            container = position - signature.magic_offset_in_container
            if container >= 0 and (signature.confirm is None
                                   or signature.confirm(data, position)):
                hits.append((container, signature.format_id))
            position = data.find(signature.magic, position + 1)
    hits.sort(key=lambda hit: (hit[0], hit[1].value))
    return hits


def scan_signatures(image: BinaryIO | bytes) -> list[tuple[int, FormatId]]:
    """Scan a byte stream (or bytes) for embedded-format signatures."""
    data = image if isinstance(image, bytes) else image.read()
    return scan_bytes(data)
