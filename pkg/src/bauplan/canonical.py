"""Canonical byte encodings: JSON, SHA-256 addressing, UTC timestamps.

Everything that gets hashed goes through this module so that two runs (or
two machines) always produce identical bytes for identical values.
"""

from __future__ import annotations

import hashlib
import json
import re
from datetime import datetime, timezone
from typing import Any, Sequence

from .errors import EncodingError

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
_TIMESTAMP_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z$")


def canonical_json_bytes(value: Any) -> bytes:
    """Serialize to canonical JSON: sorted keys, no whitespace, UTF-8.

    Floats render as Python's shortest round-trip decimal. NaN/Infinity are
    rejected because they have no JSON representation.
    """
    try:
        text = json.dumps(value, sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False, allow_nan=False)
    except ValueError as e:
        raise EncodingError(f"value not representable in canonical JSON: {e}")
    return text.encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def object_key_for_hash(hex_digest: str) -> str:
    """Content-addressed key: objects/<first 2 hex chars>/<rest>."""
    return f"objects/{hex_digest[:2]}/{hex_digest[2:]}"


def hash_for_object_key(key: str) -> str:
    """Inverse of object_key_for_hash."""
    parts = key.split("/")
    return parts[1] + parts[2]


def content_fingerprint(content_hashes: Sequence[str]) -> str:
    """SHA-256 over the canonical JSON array of ordered content hashes."""
    return sha256_hex(canonical_json_bytes(list(content_hashes)))


def is_canonical_timestamp(value: str) -> bool:
    """True for `YYYY-MM-DDTHH:MM:SSZ` strings naming a real UTC instant."""
    if not _TIMESTAMP_RE.match(value):
        return False
    try:
        datetime.strptime(value, TIMESTAMP_FORMAT)
    except ValueError:
        return False
    return True


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime(TIMESTAMP_FORMAT)
