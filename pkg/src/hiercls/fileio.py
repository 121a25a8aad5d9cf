"""Small shared helpers for byte-stable text artifacts."""

from __future__ import annotations

import hashlib
from pathlib import Path

__all__ = ["fmt", "meta_header", "sha16", "write_text"]


def fmt(x: float) -> str:
    """Shortest decimal representation that round-trips the float exactly."""
    return repr(float(x))


def meta_header(meta: dict) -> str:
    """Deterministic ``# key=value`` comment block (sorted keys)."""
    return "".join(f"# {k}={meta[k]}\n" for k in sorted(meta))


def sha16(payload: str | bytes) -> str:
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:16]


def write_text(path: str | Path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
