"""Parser for cpio "newc" (SVR4, no CRC) archives."""

from __future__ import annotations

import stat
from dataclasses import dataclass
from typing import Iterator

MAGIC = b"070701"
TRAILER = "TRAILER!!!"
_HEADER_LEN = 110
_FIELDS = (
    "ino", "mode", "uid", "gid", "nlink", "mtime", "filesize",
    "devmajor", "devminor", "rdevmajor", "rdevminor", "namesize", "check",
)


class CorruptArchive(ValueError):
    """The archive violates the newc layout."""


@dataclass(frozen=True)
class Entry:
    name: str
    kind: str  # "dir", "file", "symlink", or "other"
    data: bytes = b""
    link_target: str = ""


def _align4(value: int) -> int:
    return (value + 3) & ~3


def _kind(mode: int) -> str:
    if stat.S_ISDIR(mode):
        return "dir"
    if stat.S_ISREG(mode):
        return "file"
    if stat.S_ISLNK(mode):
        return "symlink"
    return "other"


def parse(data: bytes, offset: int = 0) -> tuple[list[Entry], int]:
    """Parse one archive starting at ``offset``.

    Returns the entries and the total byte length consumed, trailer and
    its padding included.
    """
    entries = []
    cursor = offset
    while True:
        header = data[cursor:cursor + _HEADER_LEN]
        if len(header) < _HEADER_LEN:
            raise CorruptArchive("truncated header")
        if header[:6] != MAGIC:
            raise CorruptArchive(f"bad entry magic at {cursor}")
        fields = {}
        for index, field in enumerate(_FIELDS):
            start = 6 + index * 8
            try:
                fields[field] = int(header[start:start + 8], 16)
            except ValueError as exc:
                raise CorruptArchive(f"non-hex {field} field at {cursor}") from exc

        name_start = cursor + _HEADER_LEN
        name_end = name_start + fields["namesize"]
        raw_name = data[name_start:name_end]
        if len(raw_name) < fields["namesize"] or not raw_name.endswith(b"\x00"):
            raise CorruptArchive(f"bad name at {cursor}")
        name = raw_name[:-1].decode("utf-8", errors="replace")

        data_start = _align4(name_end - offset) + offset
        data_end = data_start + fields["filesize"]
        if data_end > len(data):
            raise CorruptArchive(f"truncated data for {name!r}")
        payload = data[data_start:data_end]
        cursor = _align4(data_end - offset) + offset

        if name == TRAILER:
            return entries, cursor - offset
        kind = _kind(fields["mode"])
        entries.append(Entry(
            name=name,
            kind=kind,
            data=payload if kind == "file" else b"",
            link_target=payload.decode("utf-8", errors="replace") if kind == "symlink" else "",
        ))


def iter_entries(data: bytes, offset: int = 0) -> Iterator[Entry]:
    entries, _ = parse(data, offset)
    return iter(entries)
