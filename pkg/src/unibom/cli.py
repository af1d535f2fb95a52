"""Command-line front door wiring extraction, scanning, and reporting.

Exactly one command per invocation. Long options take a single dash
(double-dash aliases accepted). Exit codes: 0 success (zero findings is
still success), 1 usage error, 2 unreadable or malformed input,
3 internal failure. Findings never affect the exit status.
"""

from __future__ import annotations

import json
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from .analysis import (
    analyze_sbom,
    compare,
    comparison_to_json,
    history,
    history_payload,
    render_comparison,
    render_history,
    render_report,
    report_to_json,
)
from .classify import classify_cwe
from .config import classifier_port, installed_feed_path, load_database
from .cpe import CpeError, parse_cpe
from .extract import extract, scan_signatures
from .sbom import MalformedDocument, SbomDocument, dumps_sbom, load_sbom, loads_sbom, write_atomic
from .scanners import scan_ccpp, scan_filesystem
from .vulndb import MalformedFeed

USAGE = """\
usage:
  unibom -binwalk <workdir> [-Me] <image> [--json]
  unibom -generateSbom <path> <name> [--feed FILE] [--json]
  unibom -generateCCPPReport <path> <name> [--feed FILE] [--json]
  unibom -getHistory <cpe> [--feed FILE] [--json]
  unibom -classifyCwe <CWE-ID>
  unibom -compare <sbom_a> <sbom_b> [--feed FILE] [--json]
  unibom -ingestFeed <file>
  unibom -serve [--host HOST] [--port PORT] [--feed FILE] [--store DIR]
"""


class UsageError(Exception):
    pass


#: command -> (positional count, {flag name: takes_value})
_GRAMMAR: dict[str, tuple[int, dict[str, bool]]] = {
    "binwalk": (2, {"Me": False, "json": False}),
    "generateSbom": (2, {"feed": True, "json": False}),
    "generateCCPPReport": (2, {"feed": True, "json": False}),
    "getHistory": (1, {"feed": True, "json": False}),
    "classifyCwe": (1, {}),
    "compare": (2, {"feed": True, "json": False}),
    "ingestFeed": (1, {}),
    "serve": (0, {"host": True, "port": True, "feed": True, "store": True}),
}


def _parse(argv: list[str]) -> tuple[str, list[str], dict]:
    if not argv:
        raise UsageError("no command given")
    head = argv[0]
    command = head.lstrip("-")
    if not head.startswith("-") or command not in _GRAMMAR:
        raise UsageError(f"unknown command {head!r}")
    arity, spec = _GRAMMAR[command]

    positionals: list[str] = []
    flags: dict = {}
    i = 1
    while i < len(argv):
        token = argv[i]
        if len(token) > 2 and token.startswith("[") and token.endswith("]"):
            token = token[1:-1]
        if token.startswith("-") and token != "-":
            name, _, inline = token.lstrip("-").partition("=")
            if name not in spec:
                raise UsageError(f"unknown flag {token!r} for -{command}")
            if not spec[name]:
                if inline:
                    raise UsageError(f"flag -{name} takes no value")
                flags[name] = True
            elif inline:
                flags[name] = inline
            else:
                i += 1
                if i >= len(argv):
                    raise UsageError(f"flag -{name} needs a value")
                flags[name] = argv[i]
        else:
            positionals.append(token)
        i += 1

    if len(positionals) != arity:
        raise UsageError(
            f"-{command} takes {arity} argument{'s' if arity != 1 else ''}, "
            f"got {len(positionals)}")
    return command, positionals, flags


def _emit(payload: dict, as_json: bool, text: str) -> None:
    if as_json:
        print(json.dumps(payload, indent=2))
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def _cmd_binwalk(args: list[str], flags: dict) -> int:
    workdir, image = args
    report = extract(image, workdir, recursive=bool(flags.get("Me")))
    if flags.get("json"):
        print(json.dumps(report.to_json(), indent=2))
    else:
        for carve in report.carves:
            destination = carve.output_dir or "-"
            print(f"{carve.format_id.value} @ {carve.offset:#x} in {carve.source}: "
                  f"{carve.status.value} -> {destination}")
        print(f"report: {Path(workdir) / 'extraction-report.json'}")
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def _document_for(path: Path, name: str) -> SbomDocument:
    """Input detection: directory, carvable binary, or SBOM document."""
    if path.is_dir():
        return replace(scan_filesystem(path), target_name=name)
    data = path.read_bytes()
    if scan_signatures(data):
        with tempfile.TemporaryDirectory(prefix="unibom-") as tmp:
            extract(path, tmp, recursive=True)
            doc = scan_filesystem(tmp)
        return replace(doc, target_name=name)
    try:
        return loads_sbom(data)
    except MalformedDocument as exc:
        raise MalformedDocument(
            f"{path} is not a directory, a carvable image, or an SBOM document "
            f"({exc})") from exc


def _write_reports(doc: SbomDocument, name: str, flags: dict) -> int:
    db = load_database(flags.get("feed"))
    report = analyze_sbom(doc, db, classifier_port())
    sbom_path = Path(f"{name}.sbom.json")
    vulns_path = Path(f"{name}.vulns.json")
    write_atomic(sbom_path, dumps_sbom(doc))
    write_atomic(vulns_path, json.dumps(report_to_json(report), indent=2) + "\n")
    print(f"wrote {sbom_path}", file=sys.stderr)
    print(f"wrote {vulns_path}", file=sys.stderr)
    _emit(report_to_json(report), bool(flags.get("json")), render_report(report))
    return 0


def _cmd_generate_sbom(args: list[str], flags: dict) -> int:
    path, name = Path(args[0]), args[1]
    return _write_reports(_document_for(path, name), name, flags)


def _cmd_generate_ccpp(args: list[str], flags: dict) -> int:
    path, name = Path(args[0]), args[1]
    return _write_reports(replace(scan_ccpp(path), target_name=name), name, flags)


def _cmd_get_history(args: list[str], flags: dict) -> int:
    cpe = parse_cpe(args[0])
    vendor = cpe.vendor.literal if cpe.vendor.is_literal else "*"
    product = cpe.product.literal if cpe.product.is_literal else "*"
    db = load_database(flags.get("feed"))
    report = history(vendor, product, db, classifier_port())
    _emit(history_payload(report, db), bool(flags.get("json")), render_history(report))
    return 0


def _cmd_classify_cwe(args: list[str], flags: dict) -> int:
    print(classify_cwe(args[0], port=classifier_port()).value)
    return 0


def _cmd_compare(args: list[str], flags: dict) -> int:
    doc_a = load_sbom(args[0])
    doc_b = load_sbom(args[1])
    db = load_database(flags.get("feed"))
    report = compare(doc_a, doc_b, db, classifier_port())
    _emit(comparison_to_json(report), bool(flags.get("json")), render_comparison(report))
    return 0


def _cmd_ingest_feed(args: list[str], flags: dict) -> int:
    source = Path(args[0])
    db = load_database(source)
    destination = installed_feed_path()
    destination.parent.mkdir(parents=True, exist_ok=True)
    write_atomic(destination, source.read_bytes())
    print(f"installed {len(db.records)} records to {destination}")
    return 0


def _cmd_serve(args: list[str], flags: dict) -> int:
    import uvicorn

    from .service import DEFAULT_HOST, DEFAULT_PORT, create_app

    try:
        port = int(flags.get("port", DEFAULT_PORT))
    except ValueError as exc:
        raise UsageError(f"--port must be an integer: {exc}") from exc
    app = create_app(db=load_database(flags.get("feed")), store_dir=flags.get("store"))
    uvicorn.run(app, host=flags.get("host", DEFAULT_HOST), port=port, log_level="warning")
    return 0


_HANDLERS = {
    "binwalk": _cmd_binwalk,
    "generateSbom": _cmd_generate_sbom,
    "generateCCPPReport": _cmd_generate_ccpp,
    "getHistory": _cmd_get_history,
    "classifyCwe": _cmd_classify_cwe,
    "compare": _cmd_compare,
    "ingestFeed": _cmd_ingest_feed,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        command, positionals, flags = _parse(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print(USAGE, file=sys.stderr, end="")
        return 1
    try:
        return _HANDLERS[command](positionals, flags)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (MalformedDocument, MalformedFeed, CpeError, UnicodeDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit 3
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
