from __future__ import annotations

import hashlib
import json
import random

import pytest

from bauplan import build_dag, code_snapshot_hash, load_project, topo_order
from bauplan.errors import (
    CycleDetected,
    DuplicateStep,
    IoFailure,
    ManifestError,
    ParseError,
)
from bauplan.pipeline import Step, step_input_tables


def write_manifest(path, inputs, columns=(("n", "int64", False),),
                   command=("true",), **extra):
    payload = {
        "command": list(command),
        "inputs": list(inputs),
        "output_schema": {"columns": [
            {"name": n, "type": t, "nullable": nl} for n, t, nl in columns]},
        "environment_fingerprint": "sh;test",
        "deterministic": True,
    }
    payload.update(extra)
    path.write_text(json.dumps(payload))


def test_load_paper_shaped_project(tmp_path):
    (tmp_path / "final_table.sql").write_text(
        "SELECT c1, c2, c3 FROM source_table\n")
    write_manifest(tmp_path / "training_data.step.json", ["final_table"])
    steps = load_project(tmp_path)
    assert [(s.name, s.kind) for s in steps] == [
        ("final_table", "sql"), ("training_data", "external")]
    assert step_input_tables(steps[0]) == {"source_table"}
    assert step_input_tables(steps[1]) == {"final_table"}


def test_load_empty_dir(tmp_path):
    assert load_project(tmp_path) == []


def test_duplicate_step_rejected(tmp_path):
    (tmp_path / "x.sql").write_text("SELECT a FROM t\n")
    write_manifest(tmp_path / "x.step.json", ["t"])
    with pytest.raises(DuplicateStep):
        load_project(tmp_path)


def test_check_suffix_is_expectation(tmp_path):
    (tmp_path / "quality.check.sql").write_text("SELECT ok FROM checks\n")
    steps = load_project(tmp_path)
    assert steps[0].kind == "expectation"
    assert steps[0].name == "quality"


def test_malformed_manifest_rejected(tmp_path):
    (tmp_path / "x.step.json").write_text("{not json")
    with pytest.raises(ManifestError):
        load_project(tmp_path)


def test_manifest_field_validation(tmp_path):
    write_manifest(tmp_path / "x.step.json", ["t"])
    obj = json.loads((tmp_path / "x.step.json").read_text())
    for mutate in (
        lambda o: o.pop("command"),
        lambda o: o.update(command=[]),
        lambda o: o.update(inputs="t"),
        lambda o: o.update(unknown_field=1),
        lambda o: o.update(deterministic="yes"),
        lambda o: o.update(output_schema={"columns": []}),
        lambda o: o.update(code_files=["../escape.py"]),
    ):
        bad = json.loads(json.dumps(obj))
        mutate(bad)
        (tmp_path / "x.step.json").write_text(json.dumps(bad))
        with pytest.raises((ManifestError, Exception)):
            load_project(tmp_path)


def test_bad_sql_surfaces_parse_error(tmp_path):
    (tmp_path / "x.sql").write_text("SELECT FROM t\n")
    with pytest.raises(ParseError):
        load_project(tmp_path)


def test_invalid_step_name_rejected(tmp_path):
    (tmp_path / "BadName.sql").write_text("SELECT a FROM t\n")
    with pytest.raises(ManifestError):
        load_project(tmp_path)


# --- DAG construction ---------------------------------------------------------

def sql_step(name, text):
    return Step(name=name, kind="sql", sql_text=text)


def test_build_dag_paper_shape():
    steps = [sql_step("final_table", "SELECT a FROM source_table"),
             sql_step("training_data", "SELECT a FROM final_table")]
    graph = build_dag(steps)
    assert graph.edges == (("final_table", "training_data"),)
    assert graph.source_tables == {"source_table"}
    assert topo_order(graph) == ["final_table", "training_data"]


def test_self_reference_is_a_cycle():
    with pytest.raises(CycleDetected):
        build_dag([sql_step("a", "SELECT x FROM a")])


def test_two_step_cycle_reports_witness():
    steps = [sql_step("a", "SELECT x FROM b"),
             sql_step("b", "SELECT x FROM a")]
    with pytest.raises(CycleDetected) as exc:
        build_dag(steps)
    assert set(exc.value.cycle) >= {"a", "b"}


def test_topo_lexicographic_tie_break():
    steps = [sql_step("b", "SELECT x FROM src"),
             sql_step("a", "SELECT x FROM src")]
    graph = build_dag(steps)
    assert topo_order(graph) == ["a", "b"]


def test_random_dags_recover_generator_edges():
    rng = random.Random(13)
    for _ in range(30):
        n = rng.randint(1, 15)
        names = [f"s{i:02d}" for i in range(n)]
        expected_edges = set()
        steps = []
        for i, name in enumerate(names):
            # Parents only from earlier names keeps the graph acyclic.
            candidates = names[:i]
            parents = rng.sample(candidates,
                                 rng.randint(0, min(2, len(candidates)))) \
                if candidates else []
            if not parents:
                text = f"SELECT x FROM ext_{name}"
            elif len(parents) == 1:
                text = f"SELECT x FROM {parents[0]}"
            else:
                text = (f"SELECT {parents[0]}.x FROM {parents[0]} "
                        f"JOIN {parents[1]} ON {parents[0]}.x = "
                        f"{parents[1]}.x")
            for p in parents:
                expected_edges.add((p, name))
            steps.append(sql_step(name, text))
        graph = build_dag(steps)
        assert set(graph.edges) == expected_edges
        order = topo_order(graph)
        position = {name: i for i, name in enumerate(order)}
        for producer, consumer in expected_edges:
            assert position[producer] < position[consumer]


def test_dependency_soundness_property():
    steps = [sql_step("mid", "SELECT a FROM raw"),
             sql_step("top", "SELECT m.a FROM mid JOIN other "
                             "ON mid.a = other.b")]
    graph = build_dag(steps)
    for step in steps:
        for ref in step_input_tables(step):
            assert (ref, step.name) in graph.edges \
                or ref in graph.source_tables


# --- code snapshot hashing -------------------------------------------------------

def test_code_hash_stable_and_sensitive(tmp_path):
    (tmp_path / "a.sql").write_text("SELECT c1 FROM t\n")
    write_manifest(tmp_path / "b.step.json", ["a"])
    h1, blobs1 = code_snapshot_hash(tmp_path)
    h2, _ = code_snapshot_hash(tmp_path)
    assert h1 == h2
    assert set(blobs1) == {"a.sql", "b.step.json"}
    (tmp_path / "a.sql").write_text("SELECT c1  FROM t\n")
    h3, _ = code_snapshot_hash(tmp_path)
    assert h3 != h1


def test_code_hash_matches_independent_computation(tmp_path):
    a = b"SELECT c1 FROM t\n"
    (tmp_path / "a.sql").write_bytes(a)
    write_manifest(tmp_path / "b.step.json", ["a"])
    b = (tmp_path / "b.step.json").read_bytes()
    listing = json.dumps(
        [["a.sql", hashlib.sha256(a).hexdigest()],
         ["b.step.json", hashlib.sha256(b).hexdigest()]],
        sort_keys=True, separators=(",", ":"))
    expected = hashlib.sha256(listing.encode()).hexdigest()
    got, _ = code_snapshot_hash(tmp_path)
    assert got == expected


def test_code_hash_includes_listed_code_files(tmp_path):
    (tmp_path / "train.py").write_text("print('hi')\n")
    write_manifest(tmp_path / "x.step.json", [], code_files=["train.py"])
    h1, blobs = code_snapshot_hash(tmp_path)
    assert "train.py" in blobs
    (tmp_path / "train.py").write_text("print('bye')\n")
    h2, _ = code_snapshot_hash(tmp_path)
    assert h1 != h2


def test_missing_code_file_is_io_failure(tmp_path):
    write_manifest(tmp_path / "x.step.json", [], code_files=["gone.py"])
    with pytest.raises(IoFailure):
        code_snapshot_hash(tmp_path)


def test_unlisted_files_do_not_affect_hash(tmp_path):
    (tmp_path / "a.sql").write_text("SELECT c1 FROM t\n")
    h1, _ = code_snapshot_hash(tmp_path)
    (tmp_path / "README.md").write_text("docs\n")
    h2, _ = code_snapshot_hash(tmp_path)
    assert h1 == h2
