"""Canonical JSON serialization shared by artifacts.

Every float is rounded to 12 decimal places before encoding and keys
are sorted, so identical data always produces byte-identical files and
stable content hashes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def _round_floats(obj):
    if isinstance(obj, float):
        return round(obj, 12)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def canonical_dumps(data, indent: int | None = 2) -> str:
    return json.dumps(_round_floats(data), sort_keys=True, indent=indent)


def dump_json(data, path: str | Path) -> None:
    Path(path).write_text(canonical_dumps(data) + "\n")


def load_json(path: str | Path):
    return json.loads(Path(path).read_text())


def content_hash(data) -> str:
    """sha256 over the compact canonical encoding."""
    compact = json.dumps(_round_floats(data), sort_keys=True,
                         separators=(",", ":"))
    return hashlib.sha256(compact.encode()).hexdigest()
