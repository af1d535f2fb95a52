"""Shared fixtures: archive builders, env isolation, acceptance summary."""

from __future__ import annotations

import gzip
import io
import struct
import zlib
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

COMPARE_FEED = FIXTURES / "feed-compare.json"
WHATIF_FEED = FIXTURES / "feed-whatif.json"
MIN_FEED = FIXTURES / "feed-min.json"


@pytest.fixture(autouse=True)
def isolated_home(tmp_path, monkeypatch):
    """Keep per-user state and env-driven config out of real HOME."""
    home = tmp_path / "unibom-home"
    monkeypatch.setenv("UNIBOM_HOME", str(home))
    for var in ("UNIBOM_FEED", "UNIBOM_CLASSIFIER_URL", "UNIBOM_CLASSIFIER_KEY"):
        monkeypatch.delenv(var, raising=False)
    return home


# --- cpio newc ---

def newc_entry(name: str, data: bytes = b"", mode: int = 0o100644) -> bytes:
    fields = [1, mode, 0, 0, 1, 0, len(data), 0, 0, 0, 0, len(name) + 1, 0]
    out = b"070701" + b"".join(f"{v:08X}".encode() for v in fields)
    out += name.encode() + b"\x00"
    out += b"\x00" * (-len(out) % 4)
    out += data
    out += b"\x00" * (-len(out) % 4)
    return out


def newc_archive(entries: list[tuple] ) -> bytes:
    """entries: (name, data, mode) triples; trailer appended."""
    blob = b"".join(newc_entry(*entry) for entry in entries)
    return blob + newc_entry("TRAILER!!!", b"", 0)


# --- gzip (deterministic: fixed mtime, no filename) ---

def gzip_bytes(data: bytes) -> bytes:
    buffer = io.BytesIO()
    with gzip.GzipFile(fileobj=buffer, mode="wb", mtime=0) as handle:
        handle.write(data)
    return buffer.getvalue()


# --- the standard synthetic firmware image ---

OPKG_CONTROL = b"Package: dropbear\nVersion: 2020.81\nArchitecture: arm\n"
BUSYBOX_ELF = (b"\x7fELF" + b"\x00" * 60
               + b"BusyBox v1.33.2 (2021-06-30 12:00:00 UTC)\x00" + b"\x00" * 40)


def make_firmware_image(pad: int = 256, trailer: int = 64) -> bytes:
    archive = newc_archive([
        ("usr", b"", 0o040755),
        ("usr/lib", b"", 0o040755),
        ("usr/lib/opkg", b"", 0o040755),
        ("usr/lib/opkg/info", b"", 0o040755),
        ("usr/lib/opkg/info/dropbear.control", OPKG_CONTROL, 0o100644),
        ("bin", b"", 0o040755),
        ("bin/busybox", BUSYBOX_ELF, 0o100755),
    ])
    return b"\xa5" * pad + gzip_bytes(archive) + b"\x5a" * trailer


# --- squashfs v4 ---

SQ_MAGIC = 0x73717368


class SqMetaWriter:
    """Metadata stream chopped into blocks of a fixed uncompressed size."""

    def __init__(self, block_limit: int = 8192, compress: bool = False):
        self.block_limit = block_limit
        self.compress = compress
        self.stream = bytearray()

    def append(self, record: bytes) -> int:
        position = len(self.stream)
        self.stream += record
        return position

    def _chunks(self) -> list[bytes]:
        raw = bytes(self.stream)
        if not raw:
            return [b""]
        return [raw[i:i + self.block_limit]
                for i in range(0, len(raw), self.block_limit)]

    def _stored(self, chunk: bytes) -> bytes:
        return zlib.compress(chunk) if self.compress else chunk

    def locate(self, position: int) -> tuple[int, int]:
        """(disk offset of containing block, intra-block offset)."""
        index = position // self.block_limit
        disk = sum(2 + len(self._stored(chunk))
                   for chunk in self._chunks()[:index])
        return disk, position % self.block_limit

    def ref(self, position: int) -> int:
        disk, intra = self.locate(position)
        return (disk << 16) | intra

    def render(self) -> bytes:
        out = bytearray()
        for chunk in self._chunks():
            stored = self._stored(chunk)
            header = len(stored) | (0 if self.compress else 0x8000)
            out += struct.pack("<H", header) + stored
        return bytes(out)


def sq_superblock(inode_count: int, block_size: int, root_ref: int,
                  bytes_used: int, inode_table: int, directory_table: int,
                  fragment_table: int, *, magic: int = SQ_MAGIC,
                  compressor: int = 1, version: tuple[int, int] = (4, 0),
                  block_log: int | None = None, fragment_count: int = 0) -> bytes:
    log = block_log if block_log is not None else block_size.bit_length() - 1
    return struct.pack(
        "<IIIIIHHHHHHQQQQQQQQ",
        magic, inode_count, 0, block_size, fragment_count, compressor,
        log, 0, 1, version[0], version[1], root_ref, bytes_used,
        bytes_used, bytes_used, inode_table, directory_table,
        fragment_table, bytes_used)


def build_squashfs(files: dict[str, bytes] | None = None,
                   symlinks: dict[str, str] | None = None,
                   block_size: int = 4096, *,
                   compress_metadata: bool = False,
                   compress_data: bool = False,
                   meta_block_limit: int = 8192,
                   compressor: int = 1,
                   version: tuple[int, int] = (4, 0),
                   magic: int = SQ_MAGIC,
                   fragmented: tuple[str, ...] = ()) -> bytes:
    """Assemble a squashfs v4 image holding the given tree."""
    files = {k.strip("/"): v for k, v in (files or {}).items()}
    symlinks = {k.strip("/"): v for k, v in (symlinks or {}).items()}
    marked = {p.strip("/") for p in fragmented}

    children: dict[str, dict[str, tuple[str, str]]] = {"": {}}

    def ensure_dir(path: str) -> None:
        if path in children:
            return
        parent, _, name = path.rpartition("/")
        ensure_dir(parent)
        children[parent][name] = ("dir", path)
        children[path] = {}

    for path in files:
        parent, _, name = path.rpartition("/")
        ensure_dir(parent)
        children[parent][name] = ("file", path)
    for path in symlinks:
        parent, _, name = path.rpartition("/")
        ensure_dir(parent)
        children[parent][name] = ("symlink", path)

    data_section = bytearray()
    file_layout: dict[str, tuple[int, list[int]]] = {}
    for path in sorted(files):
        content = files[path]
        start = 96 + len(data_section)
        words = []
        for i in range(0, len(content), block_size):
            chunk = content[i:i + block_size]
            if compress_data:
                stored = zlib.compress(chunk)
                words.append(len(stored))
            else:
                stored = chunk
                words.append(len(stored) | 1 << 24)
            data_section += stored
        file_layout[path] = (start, words)

    inodes = SqMetaWriter(meta_block_limit, compress_metadata)
    directories = SqMetaWriter(meta_block_limit, compress_metadata)
    positions: dict[str, int] = {}
    counter = [0]

    def common(inode_type: int) -> bytes:
        counter[0] += 1
        return struct.pack("<HHHHII", inode_type, 0o755, 0, 0, 0, counter[0])

    for path in sorted(files):
        start, words = file_layout[path]
        fragment = 0 if path in marked else 0xFFFFFFFF
        record = common(2) + struct.pack("<IIII", start, fragment, 0, len(files[path]))
        record += struct.pack(f"<{len(words)}I", *words)
        positions[path] = inodes.append(record)
    for path in sorted(symlinks):
        target = symlinks[path].encode()
        record = common(3) + struct.pack("<II", 1, len(target)) + target
        positions[path] = inodes.append(record)

    type_codes = {"dir": 1, "file": 2, "symlink": 3}
    # Deepest directories first so child inode locations exist; root last.
    for dpath in sorted(children, key=lambda p: p.count("/") + bool(p), reverse=True):
        rows = []
        for name, (kind, target_path) in sorted(children[dpath].items()):
            disk, intra = inodes.locate(positions[target_path])
            rows.append((disk, intra, type_codes[kind], name.encode()))
        listing = b""
        i = 0
        while i < len(rows):
            j = i
            while j < len(rows) and rows[j][0] == rows[i][0]:
                j += 1
            run = rows[i:j]
            listing += struct.pack("<III", len(run) - 1, run[0][0], 1)
            for _disk, intra, type_code, encoded in run:
                listing += struct.pack("<HhHH", intra, 0, type_code,
                                       len(encoded) - 1) + encoded
            i = j
        listing_position = directories.append(listing)
        disk, intra = directories.locate(listing_position)
        record = common(1) + struct.pack("<IIHHI", disk, 2,
                                         len(listing) + 3, intra, 1)
        positions[dpath] = inodes.append(record)

    inode_block = inodes.render()
    directory_block = directories.render()
    inode_table = 96 + len(data_section)
    directory_table = inode_table + len(inode_block)
    fragment_table = directory_table + len(directory_block)
    bytes_used = fragment_table
    superblock = sq_superblock(
        counter[0], block_size, inodes.ref(positions[""]), bytes_used,
        inode_table, directory_table, fragment_table, magic=magic,
        compressor=compressor, version=version)
    return superblock + bytes(data_section) + inode_block + directory_block


# --- acceptance criteria summary ---

_DESCRIPTIONS: dict[str, str] = {}
_RESULTS: dict[str, bool] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        if "test_acceptance.py" in item.nodeid:
            doc = (getattr(item.function, "__doc__", "") or "").strip()
            first = doc.splitlines()[0] if doc else item.name
            _DESCRIPTIONS[item.nodeid] = first


def pytest_runtest_logreport(report):
    if report.nodeid not in _DESCRIPTIONS:
        return
    if report.when == "call":
        _RESULTS[report.nodeid] = report.passed
    elif report.failed:
        _RESULTS[report.nodeid] = False


def pytest_terminal_summary(terminalreporter):
    if not _DESCRIPTIONS:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, description in _DESCRIPTIONS.items():
        outcome = _RESULTS.get(nodeid)
        verdict = "PASS" if outcome else ("FAIL" if outcome is False else "SKIP")
        terminalreporter.write_line(f"{verdict}  {description}")
