from __future__ import annotations

import hashlib
import random
import threading
import uuid

import pytest

from bauplan import (
    REMOVE,
    ResultSet,
    Schema,
    commit_tables,
    create_branch,
    diff,
    init_catalog,
    log,
    resolve_table,
    write_table,
)
from bauplan.catalog import load_commit, read_ref, write_commit
from bauplan.errors import (
    AlreadyInitialized,
    BranchExists,
    ConcurrentUpdate,
    InvalidName,
    InvalidUpdate,
    NotFound,
    RefNotFound,
    TableNotFound,
    WritePermissionDenied,
)


def seed_snapshot(store, value=1, table_uuid=None):
    schema = Schema.of(("n", "int64", False))
    rs = ResultSet(schema, [(value,)])
    return write_table(store, table_uuid or str(uuid.uuid4()), schema, rs,
                       None)


def test_init_creates_main(store):
    ref = init_catalog(store, "alice")
    assert ref.name == "main"
    assert len(log(store, "main")) == 1
    root = load_commit(store, ref.head)
    assert root.parents == ()
    assert root.tables == {}


def test_init_twice_rejected(catalog_store):
    with pytest.raises(AlreadyInitialized):
        init_catalog(catalog_store, "bob")


def test_root_commit_hash_matches_independent_sha256(store):
    ref = init_catalog(store, "tester", created_at="2024-01-01T00:00:00Z")
    canonical = (b'{"author":"tester","created_at":"2024-01-01T00:00:00Z",'
                 b'"message":"init","parents":[],"tables":{}}')
    assert ref.head == hashlib.sha256(canonical).hexdigest()


def test_create_branch_shares_tables(catalog_store):
    store = catalog_store
    snap = seed_snapshot(store)
    head = read_ref(store, "main")
    create_branch(store, "richard.dev", "main")
    commit_tables(store, "richard.dev", {"tx": snap.snapshot_id}, "richard",
                  "seed", read_ref(store, "richard.dev"))
    create_branch(store, "richard.debug_branch", "richard.dev")
    a = resolve_table(store, "richard.dev", "tx")
    b = resolve_table(store, "richard.debug_branch", "tx")
    assert a.snapshot_id == b.snapshot_id
    assert read_ref(store, "main") == head


def test_create_branch_writes_exactly_one_object(catalog_store):
    store = catalog_store
    snap = seed_snapshot(store)
    create_branch(store, "a.x", "main")
    commit_tables(store, "a.x", {"t": snap.snapshot_id}, "a", "m",
                  read_ref(store, "a.x"))
    before = store.list_prefix("")
    data_before = store.list_prefix("data/")
    create_branch(store, "a.y", "a.x")
    after = store.list_prefix("")
    assert len(after) == len(before) + 1
    assert set(after) - set(before) == {"refs/a.y"}
    assert store.list_prefix("data/") == data_before


def test_create_branch_errors(catalog_store):
    store = catalog_store
    create_branch(store, "a.x", "main")
    with pytest.raises(BranchExists):
        create_branch(store, "a.x", "main")
    with pytest.raises(InvalidName):
        create_branch(store, "main", "main")
    with pytest.raises(InvalidName):
        create_branch(store, "NoDots", "main")
    with pytest.raises(RefNotFound):
        create_branch(store, "a.z", "missing.branch")


def test_commit_two_tables_atomically(catalog_store):
    store = catalog_store
    s1, s2 = seed_snapshot(store, 1), seed_snapshot(store, 2)
    create_branch(store, "u.b", "main")
    head = read_ref(store, "u.b")
    before = len(log(store, "u.b"))
    commit = commit_tables(store, "u.b",
                           {"t1": s1.snapshot_id, "t2": s2.snapshot_id},
                           "u", "both", head)
    assert commit.tables == {"t1": s1.snapshot_id, "t2": s2.snapshot_id}
    assert len(log(store, "u.b")) == before + 1
    assert resolve_table(store, "u.b", "t1").snapshot_id == s1.snapshot_id
    assert resolve_table(store, "u.b", "t2").snapshot_id == s2.snapshot_id


def test_empty_updates_rejected(catalog_store):
    store = catalog_store
    create_branch(store, "u.b", "main")
    with pytest.raises(InvalidUpdate):
        commit_tables(store, "u.b", {}, "u", "nope", read_ref(store, "u.b"))


def test_stale_head_races(catalog_store):
    store = catalog_store
    s1, s2 = seed_snapshot(store, 1), seed_snapshot(store, 2)
    create_branch(store, "u.b", "main")
    head = read_ref(store, "u.b")
    commit_tables(store, "u.b", {"t": s1.snapshot_id}, "u", "first", head)
    # Second writer still believes `head`; exactly one of the two orders wins.
    with pytest.raises(ConcurrentUpdate):
        commit_tables(store, "u.b", {"t": s2.snapshot_id}, "u", "second",
                      head)
    assert resolve_table(store, "u.b", "t").snapshot_id == s1.snapshot_id


def test_concurrent_committers_serialize(catalog_store):
    store = catalog_store
    create_branch(store, "u.b", "main")
    snaps = [seed_snapshot(store, i) for i in range(8)]
    failures = []

    def worker(snap):
        for _ in range(20):
            head = read_ref(store, "u.b")
            try:
                commit_tables(store, "u.b", {"t": snap.snapshot_id}, "u",
                              "race", head)
                return
            except ConcurrentUpdate:
                continue
        failures.append(snap)

    pool = [threading.Thread(target=worker, args=(s,)) for s in snaps]
    for t in pool:
        t.start()
    for t in pool:
        t.join()
    assert not failures
    assert len(log(store, "u.b")) == 1 + len(snaps)


def test_commit_to_main_refused(catalog_store):
    store = catalog_store
    snap = seed_snapshot(store)
    with pytest.raises(WritePermissionDenied):
        commit_tables(store, "main", {"t": snap.snapshot_id}, "anyone",
                      "nope", read_ref(store, "main"))


def test_commit_to_foreign_branch_refused(catalog_store):
    store = catalog_store
    snap = seed_snapshot(store)
    create_branch(store, "alice.b", "main")
    with pytest.raises(WritePermissionDenied):
        commit_tables(store, "alice.b", {"t": snap.snapshot_id}, "bob",
                      "nope", read_ref(store, "alice.b"))


def test_unknown_snapshot_rejected(catalog_store):
    store = catalog_store
    create_branch(store, "u.b", "main")
    with pytest.raises(NotFound):
        commit_tables(store, "u.b", {"t": "00" * 32}, "u", "m",
                      read_ref(store, "u.b"))


def test_remove_table(catalog_store):
    store = catalog_store
    snap = seed_snapshot(store)
    create_branch(store, "u.b", "main")
    commit_tables(store, "u.b", {"t": snap.snapshot_id}, "u", "add",
                  read_ref(store, "u.b"))
    commit_tables(store, "u.b", {"t": REMOVE}, "u", "drop",
                  read_ref(store, "u.b"))
    with pytest.raises(TableNotFound):
        resolve_table(store, "u.b", "t")
    with pytest.raises(InvalidUpdate):
        commit_tables(store, "u.b", {"t": REMOVE}, "u", "drop again",
                      read_ref(store, "u.b"))


def test_time_travel_resolution(catalog_store):
    store = catalog_store
    s1, s2 = seed_snapshot(store, 1), seed_snapshot(store, 2)
    create_branch(store, "u.b", "main")
    c1 = commit_tables(store, "u.b", {"t": s1.snapshot_id}, "u", "v1",
                       read_ref(store, "u.b"))
    commit_tables(store, "u.b", {"t": s2.snapshot_id}, "u", "v2", c1.hash)
    assert resolve_table(store, "u.b", "t").snapshot_id == s2.snapshot_id
    assert resolve_table(store, c1.hash, "t").snapshot_id == s1.snapshot_id


def test_resolution_matches_replayed_fold(catalog_store):
    store = catalog_store
    rng = random.Random(5)
    create_branch(store, "u.b", "main")
    snaps = [seed_snapshot(store, i) for i in range(6)]
    names = ["t1", "t2", "t3"]
    expected: dict[str, str] = {}
    history: list[tuple[str, dict[str, str]]] = []
    for _ in range(10):
        updates = {}
        for name in rng.sample(names, rng.randint(1, 2)):
            if name in expected and rng.random() < 0.2:
                updates[name] = REMOVE
            else:
                updates[name] = rng.choice(snaps).snapshot_id
        head = read_ref(store, "u.b")
        commit = commit_tables(store, "u.b", updates, "u", "step", head)
        for name, value in updates.items():
            if value is REMOVE:
                expected.pop(name, None)
            else:
                expected[name] = value
        history.append((commit.hash, dict(expected)))
    for commit_hash, state in history:
        for name in names:
            if name in state:
                got = resolve_table(store, commit_hash, name)
                assert got.snapshot_id == state[name]
            else:
                with pytest.raises(TableNotFound):
                    resolve_table(store, commit_hash, name)


def test_history_immutable_under_appends(catalog_store):
    store = catalog_store
    s1 = seed_snapshot(store, 1)
    create_branch(store, "u.b", "main")
    c1 = commit_tables(store, "u.b", {"t": s1.snapshot_id}, "u", "v1",
                       read_ref(store, "u.b"))
    answer_before = resolve_table(store, c1.hash, "t").snapshot_id
    s2 = seed_snapshot(store, 2)
    commit_tables(store, "u.b", {"t": s2.snapshot_id}, "u", "v2", c1.hash)
    assert resolve_table(store, c1.hash, "t").snapshot_id == answer_before


def test_branch_isolation(catalog_store):
    store = catalog_store
    s1, s2 = seed_snapshot(store, 1), seed_snapshot(store, 2)
    create_branch(store, "a.x", "main")
    create_branch(store, "b.y", "main")
    commit_tables(store, "a.x", {"t": s1.snapshot_id}, "a", "m",
                  read_ref(store, "a.x"))
    with pytest.raises(TableNotFound):
        resolve_table(store, "b.y", "t")
    with pytest.raises(TableNotFound):
        resolve_table(store, "main", "t")
    commit_tables(store, "b.y", {"t": s2.snapshot_id}, "b", "m",
                  read_ref(store, "b.y"))
    assert resolve_table(store, "a.x", "t").snapshot_id == s1.snapshot_id


def test_log_is_first_parent_history(catalog_store):
    store = catalog_store
    create_branch(store, "u.b", "main")
    for i in range(3):
        snap = seed_snapshot(store, i)
        commit_tables(store, "u.b", {"t": snap.snapshot_id}, "u", f"c{i}",
                      read_ref(store, "u.b"))
    entries = log(store, "u.b")
    assert len(entries) == 4
    assert [c.message for c in entries] == ["c2", "c1", "c0", "init"]


def test_log_follows_first_parent_through_merge_commit(catalog_store):
    store = catalog_store
    root = read_ref(store, "main")
    a = write_commit(store, (root,), {}, "u", "a")
    b = write_commit(store, (root,), {}, "u", "b")
    m = write_commit(store, (a.hash, b.hash), {}, "u", "merge")
    hashes = [c.hash for c in _log_from(store, m.hash)]
    assert hashes == [m.hash, a.hash, root]


def _log_from(store, commit_hash):
    out = []
    cursor = commit_hash
    while cursor is not None:
        commit = load_commit(store, cursor)
        out.append(commit)
        cursor = commit.parents[0] if commit.parents else None
    return out


def test_commit_content_addressing(catalog_store):
    store = catalog_store
    root = read_ref(store, "main")
    a = write_commit(store, (root,), {"t": "aa" * 32}, "u", "m",
                     "2024-01-01T00:00:00Z")
    b = write_commit(store, (root,), {"t": "aa" * 32}, "u", "m",
                     "2024-01-01T00:00:00Z")
    c = write_commit(store, (root,), {"t": "aa" * 32}, "u", "m2",
                     "2024-01-01T00:00:00Z")
    assert a.hash == b.hash
    assert c.hash != a.hash


def test_diff_classification(catalog_store):
    store = catalog_store
    s1, s2, s3 = (seed_snapshot(store, i) for i in range(3))
    create_branch(store, "u.b", "main")
    c1 = commit_tables(store, "u.b",
                       {"keep": s1.snapshot_id, "mod": s1.snapshot_id,
                        "gone": s1.snapshot_id},
                       "u", "base", read_ref(store, "u.b"))
    commit_tables(store, "u.b",
                  {"mod": s2.snapshot_id, "gone": REMOVE,
                   "new": s3.snapshot_id},
                  "u", "change", c1.hash)
    entries = diff(store, c1.hash, "u.b")
    assert [(e.table_name, e.change) for e in entries] == [
        ("gone", "removed"), ("mod", "modified"), ("new", "added")]
    assert diff(store, c1.hash, c1.hash) == []


def test_diff_matches_naive_map_comparison(catalog_store):
    store = catalog_store
    rng = random.Random(17)
    snaps = [seed_snapshot(store, i) for i in range(5)]
    create_branch(store, "u.b", "main")
    states = []
    state: dict[str, str] = {}
    for _ in range(8):
        updates = {}
        for name in rng.sample(["a", "b", "c", "d"], rng.randint(1, 3)):
            if name in state and rng.random() < 0.25:
                updates[name] = REMOVE
            else:
                updates[name] = rng.choice(snaps).snapshot_id
        commit = commit_tables(store, "u.b", updates, "u", "x",
                               read_ref(store, "u.b"))
        for name, value in updates.items():
            if value is REMOVE:
                state.pop(name, None)
            else:
                state[name] = value
        states.append((commit.hash, dict(state)))
    for _ in range(10):
        (h1, m1), (h2, m2) = rng.sample(states, 2)
        got = {(e.table_name, e.change) for e in diff(store, h1, h2)}
        want = set()
        for name in set(m1) | set(m2):
            if m1.get(name) == m2.get(name):
                continue
            if name not in m1:
                want.add((name, "added"))
            elif name not in m2:
                want.add((name, "removed"))
            else:
                want.add((name, "modified"))
        assert got == want
