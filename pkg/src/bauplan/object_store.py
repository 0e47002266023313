"""Immutable blob storage over a local directory tree.

Keys map 1:1 onto relative file paths under the store root. Keys under
``objects/`` and ``data/`` are write-once (re-putting identical bytes is a
no-op, different bytes is an error); everything else may be replaced, and
``refs/`` / ``runstore/`` additionally support compare-and-set.

Writes go to a scratch file and are published with an atomic rename, so a
concurrent reader sees either the old content or the new content, never a
partial write. CAS serializes through an exclusive flock per key, which
makes it safe across both threads and processes on one machine.

The top-level names ``.tmp`` and ``.locks`` are reserved for the store's
own bookkeeping and are rejected as key prefixes. Because keys map to
literal paths, a key cannot be both an object and a directory of other
objects ("a" vs "a/b"); the fixed key layout never needs that.
"""

from __future__ import annotations

import fcntl
import os
import re
import uuid
from contextlib import contextmanager
from pathlib import Path

from .canonical import sha256_hex
from .errors import ImmutableOverwrite, InvalidKey, IoFailure, NotFound

_SEGMENT_RE = re.compile(r"^[A-Za-z0-9._-]+$")
_RESERVED = (".tmp", ".locks")

IMMUTABLE_PREFIXES = ("objects/", "data/")
CAS_PREFIXES = ("refs/", "runstore/")


def validate_key(key: str) -> str:
    """Reject keys that could escape the root or collide with bookkeeping."""
    if not key or key.startswith("/"):
        raise InvalidKey(f"invalid object key: {key!r}")
    segments = key.split("/")
    for seg in segments:
        if seg in ("", ".", "..") or not _SEGMENT_RE.match(seg):
            raise InvalidKey(f"invalid object key segment {seg!r} in {key!r}")
    if segments[0] in _RESERVED:
        raise InvalidKey(f"key prefix {segments[0]!r} is reserved")
    return key


class LocalObjectStore:
    """Filesystem-backed store with S3-like put/get/list plus CAS on refs."""

    def __init__(self, root: str | Path, create: bool = True):
        self.root = Path(root).resolve()
        if create:
            self.root.mkdir(parents=True, exist_ok=True)
            (self.root / ".tmp").mkdir(exist_ok=True)
            (self.root / ".locks").mkdir(exist_ok=True)
        elif not self.root.is_dir():
            raise NotFound(f"store root does not exist: {self.root}")

    # -- helpers -----------------------------------------------------------

    def _path(self, key: str) -> Path:
        validate_key(key)
        path = (self.root / key).resolve()
        if self.root not in path.parents:
            raise InvalidKey(f"key escapes store root: {key!r}")
        return path

    def _write_atomic(self, path: Path, data: bytes) -> None:
        tmp_dir = self.root / ".tmp"
        tmp_dir.mkdir(exist_ok=True)
        tmp = tmp_dir / uuid.uuid4().hex
        try:
            tmp.write_bytes(data)
            path.parent.mkdir(parents=True, exist_ok=True)
            os.replace(tmp, path)
        except OSError as e:
            raise IoFailure(f"write failed for {path}: {e}")
        finally:
            if tmp.exists():
                tmp.unlink(missing_ok=True)

    @contextmanager
    def _key_lock(self, key: str):
        lock_dir = self.root / ".locks"
        lock_dir.mkdir(exist_ok=True)
        lock_path = lock_dir / sha256_hex(key.encode("utf-8"))
        fd = os.open(lock_path, os.O_CREAT | os.O_RDWR, 0o644)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX)
            yield
        finally:
            fcntl.flock(fd, fcntl.LOCK_UN)
            os.close(fd)

    # -- operations ---------------------------------------------------------

    def put_object(self, key: str, data: bytes) -> None:
        path = self._path(key)
        if key.startswith(IMMUTABLE_PREFIXES) and path.exists():
            try:
                existing = path.read_bytes()
            except OSError as e:
                raise IoFailure(f"read failed for {key}: {e}")
            if existing == data:
                return
            raise ImmutableOverwrite(
                f"key {key!r} already holds different content")
        self._write_atomic(path, data)

    def get_object(self, key: str) -> bytes:
        path = self._path(key)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            raise NotFound(f"no object at key {key!r}")
        except OSError as e:
            raise IoFailure(f"read failed for {key}: {e}")

    def list_prefix(self, prefix: str = "") -> list[str]:
        keys: list[str] = []
        try:
            for dirpath, dirnames, filenames in os.walk(self.root):
                rel = Path(dirpath).relative_to(self.root)
                if rel.parts and rel.parts[0] in _RESERVED:
                    dirnames.clear()
                    continue
                if not rel.parts:
                    dirnames[:] = [d for d in dirnames if d not in _RESERVED]
                for fname in filenames:
                    key = str(rel / fname) if rel.parts else fname
                    if key.startswith(prefix):
                        keys.append(key)
        except OSError as e:
            raise IoFailure(f"list failed: {e}")
        keys.sort()
        return keys

    def compare_and_set(self, key: str, expected: bytes | None,
                        new: bytes) -> bool:
        """Atomically replace content iff the current content is `expected`.

        `expected=None` means the key must be absent. Returns False (leaving
        the key untouched) when the precondition does not hold.
        """
        path = self._path(key)
        if not key.startswith(CAS_PREFIXES):
            raise InvalidKey(f"compare_and_set only allowed under "
                             f"{CAS_PREFIXES}, got {key!r}")
        with self._key_lock(key):
            current: bytes | None
            try:
                current = path.read_bytes()
            except FileNotFoundError:
                current = None
            except OSError as e:
                raise IoFailure(f"read failed for {key}: {e}")
            if current != expected:
                return False
            self._write_atomic(path, new)
            return True
