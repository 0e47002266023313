"""Git-for-data catalog: content-addressed commits, branches, merges.

A commit maps table names to snapshot ids and is stored as canonical JSON
under ``objects/``; its hash is its identity. Branches are mutable refs
(``refs/<name>``) holding a commit hash; all ref movement goes through the
store's compare-and-set, which is what makes multi-table commits atomic.

Branch namespacing is a convention enforced by this layer, not security:
``main`` accepts merges from anyone but no direct commits, and a branch
``user.name`` is writable only when the acting user is ``user``. Reads are
unrestricted.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass
from typing import Mapping

from .canonical import (
    canonical_json_bytes,
    object_key_for_hash,
    sha256_hex,
    utc_now_iso,
)
from .errors import (
    AlreadyInitialized,
    AmbiguousMergeBase,
    BranchExists,
    ConcurrentUpdate,
    CorruptFile,
    InvalidName,
    InvalidUpdate,
    MergeConflict,
    NoCommonAncestor,
    NotFound,
    RefNotFound,
    TableNotFound,
    WritePermissionDenied,
)
from .object_store import LocalObjectStore
from .table_format import TableSnapshot, load_snapshot

REF_NAME_RE = re.compile(r"^(main|[a-z0-9_]+\.[a-z0-9_]+)$")
TABLE_NAME_RE = re.compile(r"^[a-z_][a-z0-9_]*$")
COMMIT_HASH_RE = re.compile(r"^[0-9a-f]{64}$")


class _RemoveType:
    """Sentinel marking a table for removal in commit_tables updates."""

    def __repr__(self):
        return "REMOVE"


REMOVE = _RemoveType()


@dataclass(frozen=True)
class Commit:
    hash: str
    parents: tuple[str, ...]
    tables: dict[str, str]
    author: str
    message: str
    created_at: str


@dataclass(frozen=True)
class Ref:
    name: str
    head: str


@dataclass(frozen=True)
class TableDiff:
    table_name: str
    change: str  # added | removed | modified
    from_snapshot: str | None
    to_snapshot: str | None


# --- commit storage -----------------------------------------------------------

def commit_canonical_bytes(parents, tables, author, message,
                           created_at) -> bytes:
    return canonical_json_bytes({
        "author": author,
        "created_at": created_at,
        "message": message,
        "parents": list(parents),
        "tables": dict(tables),
    })


def write_commit(store: LocalObjectStore, parents, tables: Mapping[str, str],
                 author: str, message: str,
                 created_at: str | None = None) -> Commit:
    created_at = created_at or utc_now_iso()
    payload = commit_canonical_bytes(parents, tables, author, message,
                                     created_at)
    commit_hash = sha256_hex(payload)
    store.put_object(object_key_for_hash(commit_hash), payload)
    return Commit(commit_hash, tuple(parents), dict(tables), author, message,
                  created_at)


def load_commit(store: LocalObjectStore, commit_hash: str) -> Commit:
    try:
        payload = store.get_object(object_key_for_hash(commit_hash))
    except NotFound:
        raise NotFound(f"no commit {commit_hash}")
    if sha256_hex(payload) != commit_hash:
        raise CorruptFile(f"commit {commit_hash} bytes do not match its hash")
    try:
        obj = json.loads(payload)
        return Commit(commit_hash, tuple(obj["parents"]), dict(obj["tables"]),
                      obj["author"], obj["message"], obj["created_at"])
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptFile(f"commit {commit_hash} is malformed: {e}")


# --- refs -----------------------------------------------------------------------

def _ref_key(name: str) -> str:
    return f"refs/{name}"


def read_ref(store: LocalObjectStore, name: str) -> str:
    """Return the commit hash a ref points at."""
    if not REF_NAME_RE.match(name):
        raise RefNotFound(f"invalid ref name {name!r}")
    try:
        content = store.get_object(_ref_key(name))
    except NotFound:
        raise RefNotFound(f"no ref {name!r}")
    return content.decode("ascii").strip()


def ref_exists(store: LocalObjectStore, name: str) -> bool:
    try:
        read_ref(store, name)
        return True
    except RefNotFound:
        return False


def resolve_commitish(store: LocalObjectStore, ref_or_commit: str) -> str:
    """Accept a ref name or a 64-hex commit hash; return the commit hash."""
    if REF_NAME_RE.match(ref_or_commit):
        return read_ref(store, ref_or_commit)
    if COMMIT_HASH_RE.match(ref_or_commit):
        load_commit(store, ref_or_commit)  # NotFound when absent
        return ref_or_commit
    raise RefNotFound(f"not a ref or commit: {ref_or_commit!r}")


def check_write_permission(ref_name: str, user: str,
                           via_merge: bool = False) -> None:
    if ref_name == "main":
        if not via_merge:
            raise WritePermissionDenied(
                "main only accepts merges, not direct commits")
        return
    owner = ref_name.split(".", 1)[0]
    if owner != user:
        raise WritePermissionDenied(
            f"branch {ref_name!r} is owned by {owner!r}, not {user!r}")


# --- catalog operations ----------------------------------------------------------

def init_catalog(store: LocalObjectStore, author: str,
                 created_at: str | None = None) -> Ref:
    """Create the root commit and point `main` at it."""
    root = write_commit(store, parents=(), tables={}, author=author,
                        message="init", created_at=created_at)
    if not store.compare_and_set(_ref_key("main"), None,
                                 (root.hash + "\n").encode("ascii")):
        raise AlreadyInitialized("refs/main already exists")
    return Ref("main", root.hash)


def create_branch(store: LocalObjectStore, new_name: str,
                  from_ref: str) -> Ref:
    """Copy-on-write branch: writes exactly one ref file, nothing else."""
    if not REF_NAME_RE.match(new_name) or new_name == "main":
        raise InvalidName(f"invalid branch name {new_name!r}")
    head = resolve_commitish(store, from_ref)
    if not store.compare_and_set(_ref_key(new_name), None,
                                 (head + "\n").encode("ascii")):
        raise BranchExists(f"branch {new_name!r} already exists")
    return Ref(new_name, head)


def commit_tables(store: LocalObjectStore, ref: str, updates: Mapping,
                  author: str, message: str, expected_head: str) -> Commit:
    """Apply all updates as one atomic commit advancing `ref`.

    `updates` maps table names to snapshot ids, or to REMOVE. The ref
    advances only if it still points at `expected_head`; otherwise the
    caller must re-read and retry (ConcurrentUpdate).
    """
    if not ref_exists(store, ref):
        raise RefNotFound(f"no ref {ref!r}")
    check_write_permission(ref, author)
    if not updates:
        raise InvalidUpdate("empty updates map (no empty commits)")
    parent = load_commit(store, expected_head)
    tables = dict(parent.tables)
    for name, value in updates.items():
        if not TABLE_NAME_RE.match(name):
            raise InvalidUpdate(f"invalid table name {name!r}")
        if value is REMOVE:
            if name not in tables:
                raise InvalidUpdate(f"cannot remove absent table {name!r}")
            del tables[name]
        else:
            load_snapshot(store, value)  # NotFound when the snapshot is absent
            tables[name] = value
    commit = write_commit(store, parents=(expected_head,), tables=tables,
                          author=author, message=message)
    if not store.compare_and_set(_ref_key(ref),
                                 (expected_head + "\n").encode("ascii"),
                                 (commit.hash + "\n").encode("ascii")):
        raise ConcurrentUpdate(
            f"ref {ref!r} no longer points at {expected_head}")
    return commit


def resolve_table(store: LocalObjectStore, ref_or_commit: str,
                  table_name: str) -> TableSnapshot:
    commit_hash = resolve_commitish(store, ref_or_commit)
    commit = load_commit(store, commit_hash)
    snapshot_id = commit.tables.get(table_name)
    if snapshot_id is None:
        raise TableNotFound(
            f"no table {table_name!r} at {ref_or_commit!r}")
    return load_snapshot(store, snapshot_id)


def log(store: LocalObjectStore, ref: str) -> list[Commit]:
    """Commits from head to root following first parents."""
    head = resolve_commitish(store, ref)
    out: list[Commit] = []
    cursor: str | None = head
    while cursor is not None:
        commit = load_commit(store, cursor)
        out.append(commit)
        cursor = commit.parents[0] if commit.parents else None
    return out


def merge_base(store: LocalObjectStore, a: str, b: str) -> str:
    """The unique lowest common ancestor of two commits.

    Walks both histories breadth-first propagating reachability flags, the
    same scheme git uses: a commit reachable from both sides becomes a
    candidate and poisons its ancestors, so only the lowest survivors
    remain. Multiple survivors (criss-cross histories) are an error.
    """
    anc_a, anc_b, found, poisoned = 1, 2, 4, 8
    both = anc_a | anc_b
    cache: dict[str, Commit] = {}

    def parents_of(h: str) -> tuple[str, ...]:
        if h not in cache:
            cache[h] = load_commit(store, h)
        return cache[h].parents

    states = {a: anc_a}
    states[b] = states.get(b, 0) | anc_b
    queue = deque([a, b])
    candidates: list[str] = []
    while any(not states[h] & poisoned for h in queue):
        h = queue.popleft()
        flags = states[h]
        if flags & both == both and not flags & found:
            states[h] = flags | found
            candidates.append(h)
            flags |= poisoned
        propagate = flags & (anc_a | anc_b | poisoned)
        for p in parents_of(h):
            prev = states.get(p, 0)
            states[p] = prev | propagate
            queue.append(p)
    survivors = [c for c in candidates if not states[c] & poisoned]
    if not survivors:
        raise NoCommonAncestor(f"{a} and {b} share no ancestor")
    if len(survivors) > 1:
        raise AmbiguousMergeBase(
            "multiple merge bases: " + ", ".join(sorted(survivors)))
    return survivors[0]


def merge(store: LocalObjectStore, source_ref: str, target_ref: str,
          author: str) -> Commit:
    """Merge source into target: fast-forward or table-level three-way.

    For each table in the union of both heads, the side that changed
    relative to the merge base wins; if both sides changed the same table
    to different snapshots the merge fails listing every such table.
    """
    source_head = read_ref(store, source_ref)
    target_head = read_ref(store, target_ref)
    check_write_permission(target_ref, author, via_merge=True)
    base = merge_base(store, source_head, target_head)
    if base == target_head:
        # Fast-forward: the ref simply advances, no new commit.
        if not store.compare_and_set(_ref_key(target_ref),
                                     (target_head + "\n").encode("ascii"),
                                     (source_head + "\n").encode("ascii")):
            raise ConcurrentUpdate(f"ref {target_ref!r} moved during merge")
        return load_commit(store, source_head)
    base_tables = load_commit(store, base).tables
    source_tables = load_commit(store, source_head).tables
    target_tables = load_commit(store, target_head).tables
    merged: dict[str, str] = {}
    conflicts: list[str] = []
    for name in sorted(set(base_tables) | set(source_tables)
                       | set(target_tables)):
        sv = source_tables.get(name)
        tv = target_tables.get(name)
        bv = base_tables.get(name)
        if sv == tv:
            result = sv
        elif sv == bv:
            result = tv
        elif tv == bv:
            result = sv
        else:
            conflicts.append(name)
            continue
        if result is not None:
            merged[name] = result
    if conflicts:
        raise MergeConflict(conflicts)
    commit = write_commit(store, parents=(target_head, source_head),
                          tables=merged, author=author,
                          message=f"merge {source_ref} into {target_ref}")
    if not store.compare_and_set(_ref_key(target_ref),
                                 (target_head + "\n").encode("ascii"),
                                 (commit.hash + "\n").encode("ascii")):
        raise ConcurrentUpdate(f"ref {target_ref!r} moved during merge")
    return commit


def diff(store: LocalObjectStore, from_ref: str,
         to_ref: str) -> list[TableDiff]:
    """One entry per table whose snapshot differs, sorted by name."""
    from_tables = load_commit(store, resolve_commitish(store, from_ref)).tables
    to_tables = load_commit(store, resolve_commitish(store, to_ref)).tables
    out: list[TableDiff] = []
    for name in sorted(set(from_tables) | set(to_tables)):
        fv = from_tables.get(name)
        tv = to_tables.get(name)
        if fv == tv:
            continue
        if fv is None:
            out.append(TableDiff(name, "added", None, tv))
        elif tv is None:
            out.append(TableDiff(name, "removed", fv, None))
        else:
            out.append(TableDiff(name, "modified", fv, tv))
    return out
