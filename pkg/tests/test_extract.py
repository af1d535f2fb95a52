"""Signature scanning, archive parsing, and the carving pipeline."""

from __future__ import annotations

import io
import json
import lzma
import struct
import tarfile

import pytest

from unibom.extract import cpio, squashfs
from unibom.extract.carver import CarveStatus, extract
from unibom.extract.signatures import FormatId, scan_bytes, scan_signatures

from conftest import (
    SQ_MAGIC,
    SqMetaWriter,
    build_squashfs,
    gzip_bytes,
    make_firmware_image,
    newc_archive,
    newc_entry,
    sq_superblock,
)


def tar_bytes(members: list[tarfile.TarInfo | tuple[str, bytes]]) -> bytes:
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.USTAR_FORMAT) as archive:
        for member in members:
            if isinstance(member, tuple):
                name, data = member
                info = tarfile.TarInfo(name)
                info.size = len(data)
                archive.addfile(info, io.BytesIO(data))
            else:
                archive.addfile(member)
    return buf.getvalue()


# --- signature scanning ---

def test_scan_finds_gzip_member():
    data = b"\xa5" * 5 + gzip_bytes(b"x")
    assert (5, FormatId.GZIP) in scan_bytes(data)


def test_gzip_reserved_flag_bits_rejected():
    assert scan_bytes(b"\x1f\x8b\x08\xff" + b"\x00" * 16) == []
    assert scan_bytes(b"\x1f\x8b\x08") == []  # too short to confirm


def test_scan_finds_xz():
    assert scan_bytes(lzma.compress(b"x"))[0] == (0, FormatId.XZ)


def test_scan_finds_tar_at_container_offset():
    data = b"\x00" * 10 + tar_bytes([("a.txt", b"hi")])
    assert (10, FormatId.TAR) in scan_bytes(data)


def test_tar_magic_too_early_ignored():
    # "ustar" closer to the start than its header offset cannot be a tar
    assert scan_bytes(b"ustar" + b"\x00" * 600) == []


def test_scan_finds_cpio():
    assert scan_bytes(newc_archive([("f", b"x")]))[0] == (0, FormatId.CPIO_NEWC)


def test_scan_finds_squashfs_v4_only():
    good = build_squashfs({"f": b"x"})
    assert scan_bytes(good)[0] == (0, FormatId.SQUASHFS_V4)
    assert scan_bytes(build_squashfs({"f": b"x"}, version=(4, 1))) == []
    assert scan_bytes(build_squashfs({"f": b"x"}, version=(3, 0))) == []


def test_scan_jffs2_nodetype_gate():
    assert scan_bytes(b"\x85\x19" + struct.pack("<H", 0xE001)) == [(0, FormatId.JFFS2)]
    assert scan_bytes(b"\x85\x19" + struct.pack("<H", 0x1234)) == []


def test_scan_orders_hits_by_offset():
    data = gzip_bytes(b"x") + b"\x00" * 7 + newc_archive([("f", b"y")])
    hits = scan_bytes(data)
    # the archive magic also prefixes its trailer entry, so it hits twice
    assert [f for _, f in hits] == [FormatId.GZIP, FormatId.CPIO_NEWC, FormatId.CPIO_NEWC]
    offsets = [o for o, _ in hits]
    assert offsets == sorted(offsets)


def test_scan_accepts_bytes_and_streams():
    data = gzip_bytes(b"x")
    assert scan_signatures(data) == scan_signatures(io.BytesIO(data))


def test_scan_plain_data_has_no_hits():
    import random
    rng = random.Random(7)
    blob = bytes(rng.randrange(256) for _ in range(4096))
    # strip accidental two-byte magic prefixes deterministically
    hits = scan_bytes(blob)
    for offset, format_id in hits:
        # any hit on random data must still satisfy its confirm gate
        assert format_id in FormatId


# --- cpio ---

def test_cpio_round_trip():
    archive = newc_archive([
        ("usr", b"", 0o040755),
        ("usr/hello.txt", b"hello world"),
        ("usr/sh", b"hello.txt", 0o120777),
        ("dev/null", b"", 0o020666),
    ])
    entries, consumed = cpio.parse(archive)
    assert consumed == len(archive)
    assert [(e.name, e.kind) for e in entries] == [
        ("usr", "dir"),
        ("usr/hello.txt", "file"),
        ("usr/sh", "symlink"),
        ("dev/null", "other"),
    ]
    assert entries[1].data == b"hello world"
    assert entries[2].link_target == "hello.txt"
    assert entries[2].data == b""


def test_cpio_parse_at_offset():
    archive = newc_archive([("f", b"data")])
    entries, consumed = cpio.parse(b"JUNK" + archive, 4)
    assert consumed == len(archive)
    assert entries[0].data == b"data"


def test_cpio_empty_archive():
    entries, consumed = cpio.parse(newc_archive([]))
    assert entries == []
    assert consumed == len(newc_archive([]))


def _raw_entry(name: bytes, namesize: int, filesize: int = 0) -> bytes:
    fields = [1, 0o100644, 0, 0, 1, 0, filesize, 0, 0, 0, 0, namesize, 0]
    out = b"070701" + b"".join(f"{v:08X}".encode() for v in fields) + name
    return out + b"\x00" * (-len(out) % 4)


@pytest.mark.parametrize("data,fragment", [
    (b"070701" + b"\x00" * 20, "truncated header"),
    (b"070702" + newc_archive([])[6:], "bad entry magic at 0"),
    (b"070701" + b"ZZZZZZZZ" + newc_archive([])[14:], "non-hex ino field"),
    (_raw_entry(b"abcd", namesize=4), "bad name at 0"),
    (_raw_entry(b"f\x00", namesize=2, filesize=256), "truncated data for 'f'"),
])
def test_cpio_corrupt_archives(data, fragment):
    with pytest.raises(cpio.CorruptArchive, match=fragment):
        cpio.parse(data)


def test_cpio_missing_trailer_is_truncated():
    archive = newc_archive([("f", b"x")])
    headless = archive[: archive.find(b"TRAILER!!!") - 110]
    with pytest.raises(cpio.CorruptArchive):
        cpio.parse(headless)


# --- squashfs reader ---

_TREE = {
    "bin/busybox": b"\x7fELF" + b"B" * 64,
    "etc/config": b"option x\n",
    "readme": b"hi\n",
}
_LINKS = {"bin/sh": "busybox"}


def _walk_map(image: bytes, offset: int = 0, budget: int | None = None):
    reader = squashfs.SquashfsReader(image, offset, output_budget=budget)
    out = {}
    for entry in reader.walk():
        out[entry.name] = (entry.kind, entry.data, entry.link_target)
    return reader, out


@pytest.mark.parametrize("options", [
    {},
    {"compress_metadata": True},
    {"compress_data": True},
    {"meta_block_limit": 48},
    {"compress_metadata": True, "compress_data": True, "meta_block_limit": 48},
])
def test_squashfs_walk_variants(options):
    image = build_squashfs(_TREE, _LINKS, **options)
    reader, seen = _walk_map(image)
    for path, content in _TREE.items():
        assert seen[path] == ("file", content, "")
    assert seen["bin/sh"] == ("symlink", b"", "busybox")
    assert seen["bin"][0] == "dir"
    assert reader.warnings == []
    assert reader.length == len(image)


def test_squashfs_multiblock_file():
    content = bytes(range(256)) * 64  # 16 KiB across 4 KiB blocks
    image = build_squashfs({"big": content}, compress_data=True)
    _, seen = _walk_map(image)
    assert seen["big"][1] == content


def test_squashfs_at_offset():
    image = build_squashfs(_TREE, _LINKS)
    reader, seen = _walk_map(b"\xa5" * 123 + image, offset=123)
    assert seen["readme"][1] == _TREE["readme"]
    assert reader.length == len(image)


def test_squashfs_fragmented_file_skipped_with_warning():
    image = build_squashfs(_TREE, _LINKS, fragmented=("bin/busybox",))
    reader, seen = _walk_map(image)
    assert "bin/busybox" not in seen
    assert reader.warnings == ["skipped bin/busybox: fragmented file"]
    assert seen["etc/config"][1] == _TREE["etc/config"]


def test_squashfs_budget_skips_oversized_file():
    image = build_squashfs({"huge": b"H" * 4000, "small.txt": b"s"})
    reader, seen = _walk_map(image, budget=100)
    assert "huge" not in seen
    assert seen["small.txt"][1] == b"s"
    assert reader.warnings == ["skipped huge: output budget exhausted"]


def test_squashfs_bad_magic():
    with pytest.raises(squashfs.CorruptImage, match="bad magic"):
        squashfs.SquashfsReader(build_squashfs({"f": b"x"}, magic=0x12345678))


def test_squashfs_truncated_superblock():
    with pytest.raises(squashfs.CorruptImage, match="truncated superblock"):
        squashfs.SquashfsReader(b"hsqs" + b"\x00" * 20)


def test_squashfs_unsupported_version():
    with pytest.raises(squashfs.CorruptImage, match="unsupported version 5.0"):
        squashfs.SquashfsReader(build_squashfs({"f": b"x"}, version=(5, 0)))


def test_squashfs_unsupported_compressor():
    with pytest.raises(squashfs.UnsupportedImage, match="compressor id 4"):
        squashfs.SquashfsReader(build_squashfs({"f": b"x"}, compressor=4))


def test_squashfs_block_log_mismatch():
    blob = sq_superblock(1, 4096, 0, 200, 96, 120, 140, block_log=10)
    with pytest.raises(squashfs.CorruptImage, match="disagree"):
        squashfs.SquashfsReader(blob + b"\x00" * 200)


def test_squashfs_directory_cycle_detected():
    # one dir inode whose listing points back at itself
    inodes = SqMetaWriter()
    dirs = SqMetaWriter()
    listing = (struct.pack("<III", 0, 0, 1)
               + struct.pack("<HhHH", 0, 0, 1, 0) + b"x")
    dirs.append(listing)
    inodes.append(struct.pack("<HHHHII", 1, 0o755, 0, 0, 0, 1)
                  + struct.pack("<IIHHI", 0, 2, len(listing) + 3, 0, 1))
    inode_blob = inodes.render()
    dir_blob = dirs.render()
    inode_table = 96
    directory_table = inode_table + len(inode_blob)
    fragment_table = directory_table + len(dir_blob)
    image = sq_superblock(1, 4096, 0, fragment_table, inode_table,
                          directory_table, fragment_table) + inode_blob + dir_blob
    reader = squashfs.SquashfsReader(image)
    with pytest.raises(squashfs.CorruptImage, match="directory cycle"):
        list(reader.walk())


def test_squashfs_truncated_metadata():
    image = build_squashfs(_TREE, _LINKS)
    with pytest.raises(squashfs.CorruptImage):
        list(squashfs.SquashfsReader(image[:100] + b"\x00" * 2).walk())


# --- carver ---

def _statuses(report):
    return [(c.format_id.value, f"{c.offset:#x}", c.status.value) for c in report.carves]


def test_carve_gzip_payload(tmp_path):
    image = tmp_path / "fw.bin"
    image.write_bytes(b"\xa5" * 16 + gzip_bytes(b"inner payload") + b"\x5a" * 8)
    report = extract(image, tmp_path / "work", recursive=False)
    assert _statuses(report) == [("gzip", "0x10", "unpacked")]
    out = tmp_path / "work" / "_fw.bin.extracted" / "10" / "payload.bin"
    assert out.read_bytes() == b"inner payload"
    assert report.carves[0].carved_length == len(gzip_bytes(b"inner payload"))


def test_carve_xz_payload(tmp_path):
    image = tmp_path / "fw.bin"
    image.write_bytes(lzma.compress(b"xz payload"))
    report = extract(image, tmp_path / "work")
    assert _statuses(report) == [("xz", "0x0", "unpacked")]
    out = tmp_path / "work" / "_fw.bin.extracted" / "0" / "payload.bin"
    assert out.read_bytes() == b"xz payload"


def test_carve_tar_entries(tmp_path):
    link = tarfile.TarInfo("bin/sh")
    link.type = tarfile.SYMTYPE
    link.linkname = "busybox"
    hard = tarfile.TarInfo("bin/ash")
    hard.type = tarfile.LNKTYPE
    hard.linkname = "bin/busybox"
    subdir = tarfile.TarInfo("bin")
    subdir.type = tarfile.DIRTYPE
    image = tmp_path / "fw.bin"
    image.write_bytes(tar_bytes([subdir, ("bin/busybox", b"ELF!"), link, hard]))
    report = extract(image, tmp_path / "work", recursive=False)
    assert _statuses(report) == [("tar", "0x0", "unpacked")]
    root = tmp_path / "work" / "_fw.bin.extracted" / "0"
    assert (root / "bin").is_dir()
    assert (root / "bin" / "busybox").read_bytes() == b"ELF!"
    assert (root / "bin" / "sh").read_text() == "symlink -> busybox\n"
    assert (root / "bin" / "ash").read_text() == "hardlink -> bin/busybox\n"


def test_carve_cpio_symlink_placeholder(tmp_path):
    image = tmp_path / "fw.bin"
    image.write_bytes(newc_archive([
        ("bin", b"", 0o040755),
        ("bin/busybox", b"ELF!"),
        ("bin/sh", b"busybox", 0o120777),
    ]))
    extract(image, tmp_path / "work", recursive=False)
    root = tmp_path / "work" / "_fw.bin.extracted" / "0"
    assert (root / "bin" / "sh").read_text() == "symlink -> busybox\n"


def test_carve_squashfs_image(tmp_path):
    image = tmp_path / "fw.bin"
    payload = build_squashfs(_TREE, _LINKS, compress_metadata=True, compress_data=True)
    image.write_bytes(b"\xa5" * 64 + payload)
    report = extract(image, tmp_path / "work")
    assert _statuses(report) == [("squashfs-v4", "0x40", "unpacked")]
    assert report.carves[0].carved_length == len(payload)
    root = tmp_path / "work" / "_fw.bin.extracted" / "40"
    assert (root / "bin" / "busybox").read_bytes() == _TREE["bin/busybox"]
    assert (root / "bin" / "sh").read_text() == "symlink -> busybox\n"


def test_firmware_image_end_to_end(tmp_path):
    image = tmp_path / "fw.bin"
    image.write_bytes(make_firmware_image())
    report = extract(image, tmp_path / "work")
    statuses = {(c.format_id.value, c.status.value) for c in report.carves}
    assert ("gzip", "unpacked") in statuses
    assert ("cpio-newc", "unpacked") in statuses
    assert report.recursion_depth_reached == 2
    control = (tmp_path / "work" / "_fw.bin.extracted" / "100"
               / "_payload.bin.extracted" / "0"
               / "usr" / "lib" / "opkg" / "info" / "dropbear.control")
    assert b"Package: dropbear" in control.read_bytes()
    assert report.warnings == []


def test_extraction_is_deterministic(tmp_path):
    def run(workdir):
        image = workdir.parent / "fw.bin"
        if not image.exists():
            image.write_bytes(make_firmware_image())
        report = extract(image, workdir)
        tree = {}
        for path in sorted(workdir.rglob("*")):
            rel = path.relative_to(workdir).as_posix()
            tree[rel] = path.read_bytes() if path.is_file() else None
        return report.to_json(), tree

    report_1, tree_1 = run(tmp_path / "work1")
    report_2, tree_2 = run(tmp_path / "work2")
    assert report_1 == report_2
    assert tree_1 == tree_2


def test_zip_slip_entries_never_escape(tmp_path):
    workdir = tmp_path / "inner" / "work"
    image = tmp_path / "fw.bin"
    image.write_bytes(newc_archive([
        ("../../evil", b"pwned"),
        ("/etc/passwd", b"root::0:0::/:/bin/sh"),
        ("ok.txt", b"fine"),
    ]))
    report = extract(image, workdir, recursive=False)
    assert report.carves[0].status is CarveStatus.UNPACKED
    assert sorted(w.split(": ", 1)[1] for w in report.warnings) == [
        "skipped unsafe entry path '../../evil'",
        "skipped unsafe entry path '/etc/passwd'",
    ]
    evil = [p for p in tmp_path.rglob("*") if p.name in ("evil", "passwd")]
    assert evil == []
    assert (workdir / "_fw.bin.extracted" / "0" / "ok.txt").read_bytes() == b"fine"


def test_truncated_gzip_is_corrupt(tmp_path):
    image = tmp_path / "fw.bin"
    image.write_bytes(gzip_bytes(b"payload data" * 100)[:20])
    report = extract(image, tmp_path / "work")
    assert _statuses(report) == [("gzip", "0x0", "corrupt")]
    assert len(report.warnings) == 1
    assert report.warnings[0].startswith("fw.bin@0x0:")


def test_trailer_only_archive_detected_only(tmp_path):
    image = tmp_path / "fw.bin"
    image.write_bytes(newc_archive([]))
    report = extract(image, tmp_path / "work")
    carve = report.carves[0]
    assert carve.status is CarveStatus.DETECTED_ONLY
    assert carve.output_dir is None


def test_jffs2_detect_only(tmp_path):
    image = tmp_path / "fw.bin"
    image.write_bytes(b"\x85\x19" + struct.pack("<H", 0xE001) + b"\x00" * 32)
    report = extract(image, tmp_path / "work")
    carve = report.carves[0]
    assert carve.format_id is FormatId.JFFS2
    assert carve.status is CarveStatus.DETECTED_ONLY
    assert carve.carved_length is None


def test_unsupported_squashfs_compressor_detect_only(tmp_path):
    image = tmp_path / "fw.bin"
    image.write_bytes(build_squashfs({"f": b"x"}, compressor=4))
    report = extract(image, tmp_path / "work")
    assert _statuses(report) == [("squashfs-v4", "0x0", "detected-only")]
    assert any("compressor id 4" in w for w in report.warnings)


def test_output_cap_marks_corrupt(tmp_path):
    image = tmp_path / "fw.bin"
    image.write_bytes(gzip_bytes(b"A" * 100_000))
    report = extract(image, tmp_path / "work", output_cap=1024)
    assert _statuses(report) == [("gzip", "0x0", "corrupt")]
    assert any("output cap exceeded" in w for w in report.warnings)


def test_recursion_depth_cap(tmp_path):
    image = tmp_path / "fw.bin"
    image.write_bytes(gzip_bytes(gzip_bytes(gzip_bytes(b"core"))))
    report = extract(image, tmp_path / "work", max_depth=2)
    assert len(report.carves) == 2
    assert report.recursion_depth_reached == 2
    assert any("recursion depth limit reached" in w for w in report.warnings)


def test_covered_ranges_not_recarved(tmp_path):
    image = tmp_path / "fw.bin"
    image.write_bytes(tar_bytes([("inner.gz", gzip_bytes(b"deep"))]))
    report = extract(image, tmp_path / "work")
    gzip_carves = [c for c in report.carves if c.format_id is FormatId.GZIP]
    # the member's bytes inside the tar are covered; only the extracted
    # file itself gets carved
    assert len(gzip_carves) == 1
    assert gzip_carves[0].source.endswith("inner.gz")
    deep = list((tmp_path / "work").rglob("payload.bin"))
    assert len(deep) == 1
    assert deep[0].read_bytes() == b"deep"


def test_report_written_atomically(tmp_path):
    image = tmp_path / "fw.bin"
    image.write_bytes(gzip_bytes(b"x"))
    report = extract(image, tmp_path / "work")
    on_disk = json.loads((tmp_path / "work" / "extraction-report.json").read_text())
    assert on_disk == report.to_json()
    assert on_disk["image"] == "fw.bin"
    assert set(on_disk) == {"image", "recursionDepthReached", "carves", "warnings"}
    assert set(on_disk["carves"][0]) == {
        "source", "offset", "format", "length", "status", "outputDir",
    }


def test_missing_image_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        extract(tmp_path / "absent.bin", tmp_path / "work")


def test_plain_file_report_empty(tmp_path):
    image = tmp_path / "fw.bin"
    image.write_bytes(b"just text, no containers")
    report = extract(image, tmp_path / "work")
    assert report.carves == []
    assert report.recursion_depth_reached == 0
