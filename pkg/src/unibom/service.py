"""HTTP service persisting uploaded SBOMs and serving analysis views.

Uploads are content-addressed (sha256 of the raw bytes) and analyzed
eagerly; every response body is exactly one of the analysis module's
JSON shapes. Entries live on disk, one directory per digest, written
atomically, so a restart loses nothing.
"""

from __future__ import annotations

import hashlib
import json
import re
import shutil
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .analysis import (
    analyze_sbom,
    compare,
    comparison_to_json,
    history,
    history_payload,
    report_from_json,
    report_to_json,
    whatif_memory_safe,
    whatif_to_json,
)
from .classify import SeverityBucket
from .config import classifier_port, load_database, unibom_home
from .cpe import CpeError, parse_cpe
from .sbom import MalformedDocument, loads_sbom
from .vulndb import VulnDatabase

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 8642

_ID_RE = re.compile(r"[0-9a-f]{64}\Z")


class SbomStore:
    """Content-addressed on-disk store: one directory per entry id."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _entry_dir(self, entry_id: str) -> Path | None:
        if not _ID_RE.fullmatch(entry_id):
            return None
        return self.root / entry_id

    def put(self, raw: bytes, report_json: dict) -> tuple[str, bool]:
        """Persist one upload; returns (id, created). Re-uploads dedupe."""
        entry_id = hashlib.sha256(raw).hexdigest()
        final = self.root / entry_id
        if final.exists():
            return entry_id, False
        staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.root))
        try:
            (staging / "sbom.json").write_bytes(raw)
            (staging / "report.json").write_text(
                json.dumps(report_json, indent=2) + "\n", encoding="utf-8")
            (staging / "created-at").write_text(
                datetime.now(timezone.utc).isoformat() + "\n", encoding="utf-8")
            staging.rename(final)
        except OSError:
            shutil.rmtree(staging, ignore_errors=True)
            # A concurrent identical upload winning the rename is success.
            if not final.exists():
                raise
        return entry_id, True

    def read_report(self, entry_id: str) -> dict | None:
        entry = self._entry_dir(entry_id)
        if entry is None or not entry.is_dir():
            return None
        return json.loads((entry / "report.json").read_text(encoding="utf-8"))

    def read_sbom(self, entry_id: str) -> bytes | None:
        entry = self._entry_dir(entry_id)
        if entry is None or not entry.is_dir():
            return None
        return (entry / "sbom.json").read_bytes()


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"detail": message}, status_code=status)


def _static_dir(explicit: str | Path | None) -> Path | None:
    candidates = []
    if explicit:
        candidates.append(Path(explicit))
    candidates.append(Path(__file__).resolve().parents[2] / "frontend" / "dist")
    candidates.append(Path.cwd() / "frontend" / "dist")
    for candidate in candidates:
        if candidate.is_dir():
            return candidate
    return None


def create_app(db: VulnDatabase | None = None,
               store_dir: str | Path | None = None,
               static_dir: str | Path | None = None) -> FastAPI:
    """Build the application around one read-only database snapshot."""
    db = db if db is not None else load_database()
    port = classifier_port()
    store = SbomStore(store_dir or unibom_home() / "store")
    app = FastAPI(title="unibom", openapi_url=None, docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.post("/api/sboms")
    async def post_sbom(request: Request) -> JSONResponse:
        raw = await request.body()
        try:
            doc = loads_sbom(raw)
        except MalformedDocument as exc:
            return _error(400, str(exc))
        report = analyze_sbom(doc, db, port)
        entry_id, created = store.put(raw, report_to_json(report))
        return JSONResponse({"id": entry_id}, status_code=201 if created else 200)

    @app.get("/api/sboms/{entry_id}/analysis")
    def get_analysis(entry_id: str) -> JSONResponse:
        payload = store.read_report(entry_id)
        if payload is None:
            return _error(404, f"unknown id {entry_id!r}")
        return JSONResponse(payload)

    @app.get("/api/history")
    def get_history(cpe: str = "") -> JSONResponse:
        try:
            name = parse_cpe(cpe)
        except CpeError as exc:
            return _error(400, str(exc))
        vendor = name.vendor.literal if name.vendor.is_literal else "*"
        product = name.product.literal if name.product.is_literal else "*"
        report = history(vendor, product, db, port)
        return JSONResponse(history_payload(report, db))

    @app.post("/api/compare")
    async def post_compare(request: Request) -> JSONResponse:
        try:
            body = json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            return _error(400, f"body is not valid JSON: {exc}")
        if not isinstance(body, dict):
            return _error(400, "body must be an object with id_a and id_b")
        docs = []
        for key in ("id_a", "id_b"):
            entry_id = body.get(key)
            if not isinstance(entry_id, str):
                return _error(400, f"missing field {key}")
            raw = store.read_sbom(entry_id)
            if raw is None:
                return _error(404, f"unknown id {entry_id!r}")
            docs.append(loads_sbom(raw))
        report = compare(docs[0], docs[1], db, port)
        return JSONResponse(comparison_to_json(report))

    @app.get("/api/sboms/{entry_id}/whatif")
    def get_whatif(entry_id: str, threshold: str = "medium") -> JSONResponse:
        payload = store.read_report(entry_id)
        if payload is None:
            return _error(404, f"unknown id {entry_id!r}")
        try:
            gate = SeverityBucket(threshold.lower())
            result = whatif_memory_safe(report_from_json(payload), gate)
        except ValueError as exc:
            return _error(400, f"bad threshold {threshold!r}: {exc}")
        return JSONResponse(whatif_to_json(result))

    @app.get("/api/health")
    def health() -> dict:
        return {"status": "ok", "records": len(db.records)}

    assets = _static_dir(static_dir)
    if assets is not None:
        app.mount("/", StaticFiles(directory=assets, html=True), name="ui")
    return app
