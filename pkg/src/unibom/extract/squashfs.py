"""Reader for squashfs version 4 images with gzip-compressed blocks.

Just enough of the on-disk format to list and materialize regular
files, directories, and symlinks: superblock, metadata blocks, basic
inodes, directory tables, and data blocks. Fragments, xattrs, and
non-gzip compressors are out of scope (the carver reports such images
as detected only or records a warning per skipped file).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Iterator

MAGIC = 0x73717368
COMPRESSOR_GZIP = 1
METADATA_BLOCK_SIZE = 8192
_UNCOMPRESSED_METADATA = 0x8000
_UNCOMPRESSED_DATA = 1 << 24
_NO_FRAGMENT = 0xFFFFFFFF

_TYPE_DIR = 1
_TYPE_FILE = 2
_TYPE_SYMLINK = 3


class CorruptImage(ValueError):
    """The image violates the squashfs v4 layout."""


class UnsupportedImage(ValueError):
    """Valid squashfs, but a feature this reader does not handle."""


@dataclass(frozen=True)
class SuperBlock:
    inode_count: int
    block_size: int
    fragment_count: int
    compressor: int
    flags: int
    root_inode_ref: int
    bytes_used: int
    inode_table_start: int
    directory_table_start: int
    fragment_table_start: int


@dataclass(frozen=True)
class Entry:
    name: str
    kind: str  # "dir", "file", or "symlink"
    data: bytes = b""
    link_target: str = ""


def parse_superblock(data: bytes, offset: int = 0) -> SuperBlock:
    if offset + 96 > len(data):
        raise CorruptImage("truncated superblock")
    (magic, inode_count, _mtime, block_size, fragment_count, compressor,
     block_log, flags, _id_count, major, minor, root_inode_ref, bytes_used,
     _id_table, _xattr_table, inode_table, directory_table, fragment_table,
     _export_table) = struct.unpack_from("<IIIIIHHHHHHQQQQQQQQ", data, offset)
    if magic != MAGIC:
        raise CorruptImage("bad magic")
    if (major, minor) != (4, 0):
        raise CorruptImage(f"unsupported version {major}.{minor}")
    if block_size != 1 << block_log:
        raise CorruptImage("block_size and block_log disagree")
    return SuperBlock(
        inode_count=inode_count,
        block_size=block_size,
        fragment_count=fragment_count,
        compressor=compressor,
        flags=flags,
        root_inode_ref=root_inode_ref,
        bytes_used=bytes_used,
        inode_table_start=inode_table,
        directory_table_start=directory_table,
        fragment_table_start=fragment_table,
    )


class _MetaCursor:
    """Byte reader over a chain of metadata blocks.

    Metadata addresses are (disk offset of a block relative to the
    table start, byte offset inside the uncompressed block); blocks are
    stored back to back on disk.
    """

    def __init__(self, data: bytes, base: int, table_start: int,
                 block_position: int, offset: int):
        self._data = data
        self._base = base
        self._table_start = table_start
        self._next_block = table_start + block_position
        self._buffer = b""
        self._position = 0
        self._skip = offset

    def _load_block(self):
        absolute = self._base + self._next_block
        if absolute + 2 > len(self._data):
            raise CorruptImage("metadata block past end of image")
        (header,) = struct.unpack_from("<H", self._data, absolute)
        size = header & 0x7FFF
        raw = self._data[absolute + 2:absolute + 2 + size]
        if len(raw) < size:
            raise CorruptImage("truncated metadata block")
        if header & _UNCOMPRESSED_METADATA:
            block = raw
        else:
            try:
                block = zlib.decompress(raw)
            except zlib.error as exc:
                raise CorruptImage(f"bad metadata block: {exc}") from exc
        if len(block) > METADATA_BLOCK_SIZE:
            raise CorruptImage("oversized metadata block")
        self._next_block += 2 + size
        self._buffer = block
        self._position = 0

    def read(self, length: int) -> bytes:
        out = b""
        while self._skip:
            if self._position >= len(self._buffer):
                self._load_block()
            step = min(self._skip, len(self._buffer) - self._position)
            self._position += step
            self._skip -= step
        while len(out) < length:
            if self._position >= len(self._buffer):
                self._load_block()
            step = min(length - len(out), len(self._buffer) - self._position)
            out += self._buffer[self._position:self._position + step]
            self._position += step
        return out


class SquashfsReader:
    def __init__(self, data: bytes, offset: int = 0,
                 output_budget: int | None = None):
        self.data = data
        self.base = offset
        self.sb = parse_superblock(data, offset)
        if self.sb.compressor != COMPRESSOR_GZIP:
            raise UnsupportedImage(f"compressor id {self.sb.compressor} not supported")
        self.warnings: list[str] = []
        self._budget = output_budget

    def _inode_cursor(self, inode_ref: int) -> _MetaCursor:
        block_position = inode_ref >> 16
        offset = inode_ref & 0xFFFF
        return _MetaCursor(self.data, self.base, self.sb.inode_table_start,
                           block_position, offset)

    def _charge(self, length: int):
        if self._budget is not None:
            if length > self._budget:
                raise UnsupportedImage("output budget exhausted")
            self._budget -= length

    def _read_data_blocks(self, start: int, sizes: list[int], file_size: int) -> bytes:
        out = b""
        cursor = self.base + start
        for word in sizes:
            remaining = file_size - len(out)
            on_disk = word & 0xFFFFFF
            if on_disk == 0:
                # Sparse block: a full block of zeros (or the remainder).
                out += b"\x00" * min(self.sb.block_size, remaining)
                continue
            raw = self.data[cursor:cursor + on_disk]
            if len(raw) < on_disk:
                raise CorruptImage("truncated data block")
            cursor += on_disk
            if word & _UNCOMPRESSED_DATA:
                block = raw
            else:
                try:
                    block = zlib.decompress(raw)
                except zlib.error as exc:
                    raise CorruptImage(f"bad data block: {exc}") from exc
            out += block[:remaining]
        if len(out) != file_size:
            raise CorruptImage("file data shorter than inode size")
        return out

    def _read_file(self, cursor: _MetaCursor) -> bytes:
        blocks_start, fragment, _block_offset, file_size = struct.unpack(
            "<IIII", cursor.read(16))
        if fragment != _NO_FRAGMENT:
            raise UnsupportedImage("fragmented file")
        block_count = (file_size + self.sb.block_size - 1) // self.sb.block_size
        sizes = list(struct.unpack(f"<{block_count}I", cursor.read(4 * block_count)))
        self._charge(file_size)
        return self._read_data_blocks(blocks_start, sizes, file_size)

    def _read_symlink(self, cursor: _MetaCursor) -> str:
        _nlink, target_size = struct.unpack("<II", cursor.read(8))
        if target_size > 4096:
            raise CorruptImage("oversized symlink target")
        return cursor.read(target_size).decode("utf-8", errors="replace")

    def _read_dir_listing(self, cursor: _MetaCursor) -> tuple[int, int, int]:
        start_block, _nlink, file_size, block_offset, _parent = struct.unpack(
            "<IIHHI", cursor.read(16))
        # The stored size is offset by 3 ("." and ".." are implied).
        return start_block, block_offset, max(file_size - 3, 0)

    def _iter_directory(self, start_block: int, block_offset: int,
                        listing_size: int) -> Iterator[tuple[str, int, int]]:
        cursor = _MetaCursor(self.data, self.base, self.sb.directory_table_start,
                             start_block, block_offset)
        consumed = 0
        while consumed < listing_size:
            count, inode_start, _inode_number = struct.unpack("<III", cursor.read(12))
            consumed += 12
            for _ in range(count + 1):
                offset, _inode_delta, entry_type, name_size = struct.unpack(
                    "<HhHH", cursor.read(8))
                name = cursor.read(name_size + 1).decode("utf-8", errors="replace")
                consumed += 8 + name_size + 1
                yield name, entry_type, (inode_start << 16) | offset

    def walk(self) -> Iterator[Entry]:
        """Depth-first entries with slash-joined relative paths."""
        seen: set[int] = set()
        yield from self._walk_dir(self.sb.root_inode_ref, "", seen)

    def _walk_dir(self, inode_ref: int, prefix: str, seen: set[int]) -> Iterator[Entry]:
        if inode_ref in seen:
            raise CorruptImage("directory cycle")
        seen.add(inode_ref)
        cursor = self._inode_cursor(inode_ref)
        inode_type = struct.unpack("<H", cursor.read(2))[0]
        cursor.read(14)  # mode, uid, gid, mtime, inode number
        if inode_type != _TYPE_DIR:
            raise CorruptImage(f"expected directory inode, got type {inode_type}")
        start_block, block_offset, listing_size = self._read_dir_listing(cursor)
        for name, entry_type, child_ref in self._iter_directory(
                start_block, block_offset, listing_size):
            path = f"{prefix}{name}"
            if entry_type == _TYPE_DIR:
                yield Entry(name=path, kind="dir")
                yield from self._walk_dir(child_ref, f"{path}/", seen)
            elif entry_type == _TYPE_FILE:
                child = self._inode_cursor(child_ref)
                child_type = struct.unpack("<H", child.read(2))[0]
                child.read(14)
                if child_type != _TYPE_FILE:
                    raise CorruptImage("directory entry type disagrees with inode")
                try:
                    payload = self._read_file(child)
                except UnsupportedImage as exc:
                    self.warnings.append(f"skipped {path}: {exc}")
                    continue
                yield Entry(name=path, kind="file", data=payload)
            elif entry_type == _TYPE_SYMLINK:
                child = self._inode_cursor(child_ref)
                child.read(16)
                yield Entry(name=path, kind="symlink",
                            link_target=self._read_symlink(child))
            else:
                self.warnings.append(f"skipped {path}: inode type {entry_type}")

    @property
    def length(self) -> int:
        return self.sb.bytes_used
