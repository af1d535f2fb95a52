"""Runtime configuration shared by the CLI and the HTTP service.

Resolves the vulnerability feed (flag, environment, installed snapshot,
bundled fallback), the per-user state directory, and the optional
external classifier, so the tool runs offline out of the box.
"""

from __future__ import annotations

import os
from importlib import resources
from pathlib import Path

from .classify import ClassifierPort, ExternalModelClient, default_port
from .vulndb import VulnDatabase, ingest_feed, loads_feed

ENV_FEED = "UNIBOM_FEED"
ENV_HOME = "UNIBOM_HOME"
ENV_CLASSIFIER_URL = "UNIBOM_CLASSIFIER_URL"
ENV_CLASSIFIER_KEY = "UNIBOM_CLASSIFIER_KEY"

BUNDLED_FEED = "feed-min.json"


def unibom_home() -> Path:
    """Per-user state directory: installed feed, caches, the SBOM store."""
    override = os.environ.get(ENV_HOME)
    if override:
        return Path(override)
    return Path.home() / ".unibom"


def installed_feed_path() -> Path:
    """Where an ingested feed snapshot lands ($UNIBOM_FEED wins)."""
    explicit = os.environ.get(ENV_FEED)
    if explicit:
        return Path(explicit)
    return unibom_home() / "feed.json"


def resolve_feed_path(flag: str | Path | None = None) -> Path | None:
    """Feed file to read: --feed flag, $UNIBOM_FEED, installed snapshot.

    None means no override exists and the bundled feed applies.
    """
    if flag:
        return Path(flag)
    env = os.environ.get(ENV_FEED)
    if env:
        return Path(env)
    installed = unibom_home() / "feed.json"
    if installed.exists():
        return installed
    return None


def bundled_feed_text() -> str:
    return (resources.files("unibom") / "data" / BUNDLED_FEED).read_text("utf-8")


def load_database(flag: str | Path | None = None) -> VulnDatabase:
    """Open the resolved feed as a queryable database."""
    path = resolve_feed_path(flag)
    if path is not None:
        return ingest_feed(path)
    return loads_feed(bundled_feed_text())


def classifier_port() -> ClassifierPort:
    """Rule engine, or the external model client when configured."""
    url = os.environ.get(ENV_CLASSIFIER_URL)
    if not url:
        return default_port()
    home = unibom_home()
    home.mkdir(parents=True, exist_ok=True)
    return ExternalModelClient(
        url=url,
        api_key=os.environ.get(ENV_CLASSIFIER_KEY, ""),
        cache_path=home / "classifier-cache.json",
    )
