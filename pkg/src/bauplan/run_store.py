"""Immutable run manifests and replay resolution.

A run id is a store-local sequential integer (allocated via CAS on
``runstore/counter``); content identity lives in the manifest's code hash
and input commit. Code files are stored as content-addressed blobs under
``objects/`` so a past run's project directory can be rebuilt bit-exactly.
"""

from __future__ import annotations

import json
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .canonical import (
    canonical_json_bytes,
    hash_for_object_key,
    object_key_for_hash,
    sha256_hex,
)
from .errors import CorruptCodeSnapshot, ImmutableOverwrite, NotFound
from .object_store import LocalObjectStore
from .pipeline import code_snapshot_hash

_COUNTER_KEY = "runstore/counter"


@dataclass(frozen=True)
class StepResult:
    name: str
    status: str  # succeeded | failed | skipped
    output_snapshot: str | None
    output_content_fingerprint: str | None
    error: str | None
    duration_ms: int


@dataclass
class RunManifest:
    run_id: int
    code_hash: str
    code_blob_keys: dict[str, str]
    input_commit: str
    target_ref: str
    output_commit: str | None
    step_results: list[StepResult]
    status: str  # succeeded | failed
    environment_fingerprints: dict[str, str]
    host_descriptor: str
    started_at: str
    finished_at: str
    error: str | None = None
    parameters: dict = field(default_factory=dict)
    logs: dict[str, dict[str, str]] = field(default_factory=dict)


def _manifest_key(run_id: int) -> str:
    return f"runstore/manifests/{run_id}.json"


def manifest_to_json_dict(manifest: RunManifest) -> dict:
    return {
        "run_id": manifest.run_id,
        "code_hash": manifest.code_hash,
        "code_blob_keys": dict(manifest.code_blob_keys),
        "input_commit": manifest.input_commit,
        "target_ref": manifest.target_ref,
        "output_commit": manifest.output_commit,
        "step_results": [
            {"name": r.name, "status": r.status,
             "output_snapshot": r.output_snapshot,
             "output_content_fingerprint": r.output_content_fingerprint,
             "error": r.error, "duration_ms": r.duration_ms}
            for r in manifest.step_results
        ],
        "status": manifest.status,
        "environment_fingerprints": dict(manifest.environment_fingerprints),
        "host_descriptor": manifest.host_descriptor,
        "started_at": manifest.started_at,
        "finished_at": manifest.finished_at,
        "error": manifest.error,
        "parameters": dict(manifest.parameters),
        "logs": {k: dict(v) for k, v in manifest.logs.items()},
    }


def manifest_from_json_dict(obj: dict) -> RunManifest:
    return RunManifest(
        run_id=int(obj["run_id"]),
        code_hash=obj["code_hash"],
        code_blob_keys=dict(obj["code_blob_keys"]),
        input_commit=obj["input_commit"],
        target_ref=obj["target_ref"],
        output_commit=obj["output_commit"],
        step_results=[
            StepResult(r["name"], r["status"], r["output_snapshot"],
                       r["output_content_fingerprint"], r["error"],
                       int(r["duration_ms"]))
            for r in obj["step_results"]
        ],
        status=obj["status"],
        environment_fingerprints=dict(obj["environment_fingerprints"]),
        host_descriptor=obj["host_descriptor"],
        started_at=obj["started_at"],
        finished_at=obj["finished_at"],
        error=obj.get("error"),
        parameters=dict(obj.get("parameters", {})),
        logs={k: dict(v) for k, v in obj.get("logs", {}).items()},
    )


def allocate_run_id(store: LocalObjectStore) -> int:
    """Next id, strictly greater than every previous one; CAS-serialized."""
    while True:
        try:
            current = store.get_object(_COUNTER_KEY)
        except NotFound:
            current = None
        value = int(current) if current else 0
        nxt = value + 1
        if store.compare_and_set(_COUNTER_KEY, current,
                                 f"{nxt}\n".encode("ascii")):
            return nxt


def save_manifest(store: LocalObjectStore, manifest: RunManifest) -> None:
    payload = canonical_json_bytes(manifest_to_json_dict(manifest))
    if not store.compare_and_set(_manifest_key(manifest.run_id), None,
                                 payload):
        raise ImmutableOverwrite(
            f"manifest for run {manifest.run_id} already saved")


def load_manifest(store: LocalObjectStore, run_id: int) -> RunManifest:
    try:
        payload = store.get_object(_manifest_key(run_id))
    except NotFound:
        raise NotFound(f"no run with id {run_id}")
    return manifest_from_json_dict(json.loads(payload))


def list_runs(store: LocalObjectStore) -> list[RunManifest]:
    out = []
    for key in store.list_prefix("runstore/manifests/"):
        out.append(manifest_from_json_dict(json.loads(store.get_object(key))))
    out.sort(key=lambda m: m.run_id)
    return out


def save_code_blobs(store: LocalObjectStore,
                    blobs: dict[str, bytes]) -> dict[str, str]:
    """Store each file content-addressed; returns relpath -> object key."""
    keys = {}
    for rel, data in blobs.items():
        key = object_key_for_hash(sha256_hex(data))
        store.put_object(key, data)
        keys[rel] = key
    return keys


def resolve_replay(store: LocalObjectStore, run_id: int,
                   dest_dir: str | Path | None = None
                   ) -> tuple[Path, str, RunManifest]:
    """Rebuild the run's code directory; returns (dir, input commit, manifest).

    Every blob is re-hashed against its content-addressed key and the
    rebuilt directory must reproduce the manifest's code hash, so a
    tampered store fails loudly instead of replaying the wrong code.
    """
    manifest = load_manifest(store, run_id)
    dest = Path(dest_dir) if dest_dir is not None \
        else Path(tempfile.mkdtemp(prefix=f"bauplan-replay-{run_id}-"))
    dest.mkdir(parents=True, exist_ok=True)
    for rel, key in manifest.code_blob_keys.items():
        data = store.get_object(key)
        if sha256_hex(data) != hash_for_object_key(key):
            raise CorruptCodeSnapshot(f"blob {key} does not match its hash")
        target = dest / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    rebuilt_hash, _ = code_snapshot_hash(dest)
    if rebuilt_hash != manifest.code_hash:
        raise CorruptCodeSnapshot(
            f"rebuilt code hash {rebuilt_hash} != recorded "
            f"{manifest.code_hash}")
    return dest, manifest.input_commit, manifest


def compare_fingerprints(original: RunManifest,
                         replay: RunManifest) -> list[tuple[str, str]]:
    """Per-step MATCH/MISMATCH of output content fingerprints."""
    replay_by_name = {r.name: r for r in replay.step_results}
    out = []
    for orig in original.step_results:
        other = replay_by_name.get(orig.name)
        if other is None:
            out.append((orig.name, "MISMATCH"))
            continue
        same = (orig.status == other.status
                and orig.output_content_fingerprint
                == other.output_content_fingerprint)
        out.append((orig.name, "MATCH" if same else "MISMATCH"))
    return out
