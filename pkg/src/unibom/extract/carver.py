"""Carving orchestration: unpack embedded payloads into a workdir tree.

Layout mirrors the common firmware-analysis convention: payloads from
`image.bin` land under `_image.bin.extracted/<offset-hex>/`, and when
recursion is on, extracted files are scanned and unpacked in place the
same way. Safety rules: no extracted path may escape the workdir,
symlink entries become text placeholders, per-carve output is capped,
and recursion depth is bounded.
"""

from __future__ import annotations

import enum
import io
import json
import lzma
import tarfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

from ..sbom import write_atomic
from . import cpio, squashfs
from .signatures import FormatId, scan_bytes

DEFAULT_OUTPUT_CAP = 512 * 1024 * 1024
DEFAULT_MAX_DEPTH = 8
_CHUNK = 1 << 20
_PAYLOAD_NAME = "payload.bin"


class CarveStatus(enum.Enum):
    UNPACKED = "unpacked"
    DETECTED_ONLY = "detected-only"
    CORRUPT = "corrupt"


@dataclass(frozen=True)
class CarveResult:
    source: str
    offset: int
    format_id: FormatId
    carved_length: int | None
    status: CarveStatus
    output_dir: str | None


@dataclass
class ExtractionReport:
    image_path: str
    carves: list[CarveResult] = field(default_factory=list)
    recursion_depth_reached: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "image": Path(self.image_path).name,
            "recursionDepthReached": self.recursion_depth_reached,
            "carves": [
                {
                    "source": c.source,
                    "offset": c.offset,
                    "format": c.format_id.value,
                    "length": c.carved_length,
                    "status": c.status.value,
                    "outputDir": c.output_dir,
                }
                for c in self.carves
            ],
            "warnings": list(self.warnings),
        }


class _BudgetExceeded(RuntimeError):
    pass


class _Budget:
    def __init__(self, limit: int):
        self.remaining = limit

    def charge(self, amount: int):
        self.remaining -= amount
        if self.remaining < 0:
            raise _BudgetExceeded("decompressed output cap exceeded")


class _Corrupt(ValueError):
    pass


def _safe_relpath(name: str) -> PurePosixPath | None:
    path = PurePosixPath(name.replace("\\", "/"))
    if path.is_absolute():
        return None
    parts = [part for part in path.parts if part != "."]
    if not parts or ".." in parts:
        return None
    return PurePosixPath(*parts)


class _EntryWriter:
    """Writes archive entries under one output directory, safely."""

    def __init__(self, outdir: Path, budget: _Budget, warnings: list[str], label: str):
        self.outdir = outdir
        self.budget = budget
        self.warnings = warnings
        self.label = label
        self.written_files: list[Path] = []
        self.wrote_anything = False

    def _dest(self, name: str) -> Path | None:
        rel = _safe_relpath(name)
        if rel is None:
            self.warnings.append(f"{self.label}: skipped unsafe entry path {name!r}")
            return None
        dest = self.outdir / rel
        root = self.outdir.resolve()
        if not dest.resolve().is_relative_to(root):
            self.warnings.append(f"{self.label}: skipped escaping entry path {name!r}")
            return None
        return dest

    def directory(self, name: str):
        dest = self._dest(name)
        if dest is None:
            return
        try:
            dest.mkdir(parents=True, exist_ok=True)
            self.wrote_anything = True
        except OSError as exc:
            self.warnings.append(f"{self.label}: cannot create {name!r}: {exc}")

    def file(self, name: str, data: bytes):
        dest = self._dest(name)
        if dest is None:
            return
        self.budget.charge(len(data))
        try:
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(data)
        except OSError as exc:
            self.warnings.append(f"{self.label}: cannot write {name!r}: {exc}")
            return
        self.written_files.append(dest)
        self.wrote_anything = True

    def placeholder(self, name: str, kind: str, target: str):
        dest = self._dest(name)
        if dest is None:
            return
        try:
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_text(f"{kind} -> {target}\n")
            self.wrote_anything = True
        except OSError as exc:
            self.warnings.append(f"{self.label}: cannot write {name!r}: {exc}")


def _decompress_stream(data: bytes, offset: int, budget: _Budget,
                       decompressor) -> tuple[bytes, int]:
    """Shared gzip/xz streaming loop. Returns (payload, consumed_length)."""
    buf = bytes(data[offset:])
    out = io.BytesIO()
    piece = decompressor.decompress(buf, _CHUNK)
    while True:
        budget.charge(len(piece))
        out.write(piece)
        if decompressor.eof:
            break
        # zlib parks surplus input in unconsumed_tail when the output
        # limit clips; lzma buffers it internally.
        tail = getattr(decompressor, "unconsumed_tail", b"")
        piece = decompressor.decompress(tail, _CHUNK)
        if not piece and not decompressor.eof:
            raise _Corrupt("truncated compressed stream")
    consumed = len(buf) - len(decompressor.unused_data)
    return out.getvalue(), consumed


def _carve_gzip(data: bytes, offset: int, writer: _EntryWriter) -> int:
    try:
        payload, consumed = _decompress_stream(
            data, offset, writer.budget, zlib.decompressobj(31))
    except zlib.error as exc:
        raise _Corrupt(f"bad gzip stream: {exc}") from exc
    writer.file(_PAYLOAD_NAME, payload)
    return consumed


def _carve_xz(data: bytes, offset: int, writer: _EntryWriter) -> int:
    try:
        payload, consumed = _decompress_stream(
            data, offset, writer.budget,
            lzma.LZMADecompressor(format=lzma.FORMAT_XZ))
    except lzma.LZMAError as exc:
        raise _Corrupt(f"bad xz stream: {exc}") from exc
    writer.file(_PAYLOAD_NAME, payload)
    return consumed


def _carve_tar(data: bytes, offset: int, writer: _EntryWriter) -> int | None:
    stream = io.BytesIO(data[offset:])
    try:
        with tarfile.open(fileobj=stream, mode="r:") as archive:
            for member in archive:
                if member.isdir():
                    writer.directory(member.name)
                elif member.isfile():
                    handle = archive.extractfile(member)
                    writer.file(member.name, handle.read() if handle else b"")
                elif member.issym():
                    writer.placeholder(member.name, "symlink", member.linkname)
                elif member.islnk():
                    writer.placeholder(member.name, "hardlink", member.linkname)
            consumed = archive.offset
    except tarfile.TarError as exc:
        raise _Corrupt(f"bad tar archive: {exc}") from exc
    return consumed or None


def _carve_cpio(data: bytes, offset: int, writer: _EntryWriter) -> int:
    try:
        entries, consumed = cpio.parse(data, offset)
    except cpio.CorruptArchive as exc:
        raise _Corrupt(str(exc)) from exc
    for entry in entries:
        if entry.kind == "dir":
            writer.directory(entry.name)
        elif entry.kind == "file":
            writer.file(entry.name, entry.data)
        elif entry.kind == "symlink":
            writer.placeholder(entry.name, "symlink", entry.link_target)
    return consumed


def _carve_squashfs(data: bytes, offset: int, writer: _EntryWriter) -> int:
    try:
        reader = squashfs.SquashfsReader(data, offset,
                                         output_budget=writer.budget.remaining)
        for entry in reader.walk():
            if entry.kind == "dir":
                writer.directory(entry.name)
            elif entry.kind == "file":
                writer.file(entry.name, entry.data)
            elif entry.kind == "symlink":
                writer.placeholder(entry.name, "symlink", entry.link_target)
    except squashfs.CorruptImage as exc:
        raise _Corrupt(str(exc)) from exc
    for note in reader.warnings:
        writer.warnings.append(f"{writer.label}: {note}")
    return reader.length


_UNPACKERS = {
    FormatId.GZIP: _carve_gzip,
    FormatId.XZ: _carve_xz,
    FormatId.TAR: _carve_tar,
    FormatId.CPIO_NEWC: _carve_cpio,
    FormatId.SQUASHFS_V4: _carve_squashfs,
}


def _relative_label(path: Path, workdir: Path) -> str:
    try:
        return path.relative_to(workdir).as_posix()
    except ValueError:
        return path.name


def extract(image: str | Path, workdir: str | Path, recursive: bool = True,
            max_depth: int = DEFAULT_MAX_DEPTH,
            output_cap: int = DEFAULT_OUTPUT_CAP) -> ExtractionReport:
    """Scan an image, carve every recognized payload, and report.

    Per-carve failures are recorded as corrupt results with a warning;
    only an unreadable image or workdir aborts the run (OSError).
    """
    image = Path(image)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    report = ExtractionReport(image_path=str(image))

    image_data = image.read_bytes()
    pending: list[tuple[Path, bytes, int, str]] = [
        (workdir / f"_{image.name}.extracted", image_data, 1, image.name)
    ]

    while pending:
        base, data, depth, label = pending.pop(0)
        hits = scan_bytes(data)
        if not hits:
            continue
        if depth > max_depth:
            report.warnings.append(f"{label}: recursion depth limit reached")
            continue
        covered: list[tuple[int, int]] = []
        for offset, format_id in hits:
            if any(start < offset < end for start, end in covered):
                continue
            report.recursion_depth_reached = max(report.recursion_depth_reached, depth)
            unpacker = _UNPACKERS.get(format_id)
            if unpacker is None:  # detect-only formats (jffs2)
                report.carves.append(CarveResult(
                    source=label, offset=offset, format_id=format_id,
                    carved_length=None, status=CarveStatus.DETECTED_ONLY,
                    output_dir=None))
                continue
            outdir = base / f"{offset:x}"
            writer = _EntryWriter(outdir, _Budget(output_cap), report.warnings, label)
            outdir_rel = _relative_label(outdir, workdir)
            try:
                outdir.mkdir(parents=True, exist_ok=True)
                length = unpacker(data, offset, writer)
            except squashfs.UnsupportedImage as exc:
                report.warnings.append(f"{label}@{offset:#x}: {exc}")
                report.carves.append(CarveResult(
                    source=label, offset=offset, format_id=format_id,
                    carved_length=None, status=CarveStatus.DETECTED_ONLY,
                    output_dir=None))
                continue
            except (_Corrupt, _BudgetExceeded, OSError) as exc:
                report.warnings.append(f"{label}@{offset:#x}: {exc}")
                report.carves.append(CarveResult(
                    source=label, offset=offset, format_id=format_id,
                    carved_length=None, status=CarveStatus.CORRUPT,
                    output_dir=outdir_rel))
                continue
            if length is not None:
                covered.append((offset, offset + length))
            status = (CarveStatus.UNPACKED if writer.wrote_anything
                      else CarveStatus.DETECTED_ONLY)
            report.carves.append(CarveResult(
                source=label, offset=offset, format_id=format_id,
                carved_length=length, status=status,
                output_dir=outdir_rel if writer.wrote_anything else None))
            if recursive:
                for created in writer.written_files:
                    pending.append((
                        created.parent / f"_{created.name}.extracted",
                        created.read_bytes(),
                        depth + 1,
                        _relative_label(created, workdir),
                    ))

    write_atomic(workdir / "extraction-report.json",
                 json.dumps(report.to_json(), indent=2) + "\n")
    return report
