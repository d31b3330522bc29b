"""
W2SC Shared Utilities v1.0
Common functions used across all engines.
Single source of truth for timestamps, tagged logging and atomic I/O.
"""

from __future__ import annotations

import json
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path


def now() -> datetime:
    """Current UTC time, timezone-aware."""
    return datetime.now(timezone.utc)


def format_dt(dt: datetime) -> str:
    """Format datetime as ISO 8601 UTC string."""
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def log(tag: str, message: str) -> None:
    """Tagged progress line on stderr: ``2026-01-01T00:00:00Z [TRAIN] message``."""
    print(f"{format_dt(now())} [{tag.upper()}] {message}", file=sys.stderr, flush=True)


def atomic_write_bytes(data: bytes, path: Path, prefix: str = "w2sc_") -> None:
    """Atomic binary write. Crash-safe: readers see the old file or the new one."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=path.parent, suffix=".tmp", prefix=prefix)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(text: str, path: Path, prefix: str = "w2sc_") -> None:
    atomic_write_bytes(text.encode("utf-8"), path, prefix=prefix)


def atomic_save(data: dict, path: Path, prefix: str = "w2sc_") -> None:
    """Atomic JSON write. Keys sorted so reruns are byte-identical."""
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    atomic_write_text(text, path, prefix=prefix)


def load_json(path: Path) -> dict:
    """Load JSON file with UTF-8 encoding."""
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
