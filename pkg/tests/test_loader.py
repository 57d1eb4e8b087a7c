import sqlite3
from decimal import Decimal

import pytest

from relmig.errors import (
    ConfigValidationError,
    PreconditionError,
    UncoveredSource,
)
from relmig.keymap import KeyMap
from relmig.loader import (
    DiscriminatorSpec,
    LoadMode,
    LoadReport,
    TableCounts,
    backfill_discriminator,
    load_table,
    next_identity_start,
    seed_discriminator,
    storage_value,
    verify_target,
)
from relmig.schema import parse_schema
from relmig.sources import RejectSink, Row, SourceTag

TAG1 = SourceTag(1, "alpha")
TAG2 = SourceTag(2, "beta")

SCHEMA = parse_schema({
    "tables": [
        {
            "name": "Faculty",
            "columns": [
                {"name": "ID", "dataKind": "integer", "isIdentity": True},
                {"name": "Name", "dataKind": "text"},
            ],
            "primaryKey": "ID",
        },
        {
            "name": "Course",
            "columns": [
                {"name": "ID", "dataKind": "integer", "isIdentity": True},
                {"name": "Name", "dataKind": "text"},
                {"name": "Fee", "dataKind": "decimal", "nullable": True},
                {"name": "FacultyID", "dataKind": "integer", "nullable": True},
            ],
            "primaryKey": "ID",
            "foreignKeys": [
                {"fromColumn": "FacultyID", "toTable": "Faculty", "toColumn": "ID"}
            ],
        },
        {
            "name": "Employee",
            "columns": [
                {"name": "ID", "dataKind": "integer", "isIdentity": True},
                {"name": "Name", "dataKind": "text"},
                {"name": "ManagerID", "dataKind": "integer", "nullable": True},
            ],
            "primaryKey": "ID",
            "foreignKeys": [
                {"fromColumn": "ManagerID", "toTable": "Employee", "toColumn": "ID"}
            ],
        },
    ]
})


def target_conn():
    conn = sqlite3.connect(":memory:")
    conn.execute("PRAGMA foreign_keys = ON")
    conn.execute('CREATE TABLE "Faculty" ("ID" INTEGER PRIMARY KEY, "Name" TEXT)')
    conn.execute(
        'CREATE TABLE "Course" ("ID" INTEGER PRIMARY KEY, "Name" TEXT, "Fee" TEXT, '
        '"FacultyID" INTEGER, FOREIGN KEY ("FacultyID") REFERENCES "Faculty" ("ID"))'
    )
    conn.execute(
        'CREATE TABLE "Employee" ("ID" INTEGER PRIMARY KEY, "Name" TEXT, '
        '"ManagerID" INTEGER, FOREIGN KEY ("ManagerID") REFERENCES "Employee" ("ID"))'
    )
    return conn


def faculty_row(values, tag=TAG1, key=None):
    return Row("Faculty", dict(values), tag, key or values.get("ID"))


def test_generate_keys_assigns_sequential_keys_and_records_them():
    conn = target_conn()
    conn.execute('INSERT INTO "Course" ("ID", "Name") VALUES (10, \'existing\')')
    km = KeyMap("Course")
    rows = [
        Row("Course", {"ID": 7, "Name": "a", "Fee": None, "FacultyID": None}, TAG1, 7),
        Row("Course", {"ID": 3, "Name": "b", "Fee": None, "FacultyID": None}, TAG2, 3),
    ]
    loaded = load_table(conn, SCHEMA.table("Course"), rows,
                        LoadMode("generateKeys"), km, [1, 2], RejectSink())
    assert loaded == 2
    assert [r.values["ID"] for r in rows] == [11, 12]
    km.seal()
    assert km.lookup(1, 7) == 11 and km.lookup(2, 3) == 12
    assert len(km) == loaded


def test_generate_keys_requires_identity_pk():
    schema = parse_schema({"tables": [{
        "name": "Plain",
        "columns": [{"name": "ID", "dataKind": "integer"}],
        "primaryKey": "ID",
    }]})
    conn = sqlite3.connect(":memory:")
    conn.execute('CREATE TABLE "Plain" ("ID" INTEGER PRIMARY KEY)')
    with pytest.raises(ConfigValidationError):
        load_table(conn, schema.table("Plain"),
                   [Row("Plain", {"ID": 1}, TAG1, 1)],
                   LoadMode("generateKeys"), KeyMap("Plain"), [1], RejectSink())


def test_preserve_keys_keeps_gaps_and_next_key_is_max_plus_one():
    conn = target_conn()
    km = KeyMap("Faculty", unique_new_keys=False)
    rows = [faculty_row({"ID": i, "Name": f"F{i}"}) for i in (1, 2, 5, 9)]
    loaded = load_table(conn, SCHEMA.table("Faculty"), rows,
                        LoadMode("preserveKeys", source_dbid=1), km, [1, 2],
                        RejectSink())
    assert loaded == 4
    assert [r[0] for r in conn.execute('SELECT "ID" FROM "Faculty" ORDER BY 1')] \
        == [1, 2, 5, 9]
    assert next_identity_start(conn, SCHEMA.table("Faculty")) == 10
    cur = conn.execute('INSERT INTO "Faculty" ("Name") VALUES (\'new\')')
    assert cur.lastrowid == 10
    # identity entries recorded for every source, newKey = oldKey
    km.seal()
    assert all(km.lookup(dbid, 5) == 5 for dbid in (1, 2))
    assert len(km) == 8


def test_preserve_keys_rejects_rows_from_other_sources():
    conn = target_conn()
    with pytest.raises(PreconditionError):
        load_table(conn, SCHEMA.table("Faculty"),
                   [faculty_row({"ID": 1, "Name": "x"}, tag=TAG2)],
                   LoadMode("preserveKeys", source_dbid=1),
                   KeyMap("Faculty", unique_new_keys=False), [1, 2], RejectSink())


def test_preserve_keys_requires_integer_keys():
    conn = target_conn()
    sink = RejectSink()
    km = KeyMap("Faculty", unique_new_keys=False)
    loaded = load_table(conn, SCHEMA.table("Faculty"),
                        [faculty_row({"ID": None, "Name": "x"}, key=1)],
                        LoadMode("preserveKeys", source_dbid=1), km, [1], sink)
    assert loaded == 0
    assert sink.rejects == [("Faculty[dbid=1 key=1]", "BadPreservedKey(None)")]
    assert len(km) == 0


def test_constraint_violation_routed_and_survivor_mapping_kept():
    conn = target_conn()
    km = KeyMap("Faculty", unique_new_keys=False)
    sink = RejectSink()
    rows = [
        faculty_row({"ID": 1, "Name": "a"}),
        faculty_row({"ID": 1, "Name": "dup"}, key=99),
        faculty_row({"ID": 2, "Name": "b"}),
    ]
    loaded = load_table(conn, SCHEMA.table("Faculty"), rows,
                        LoadMode("preserveKeys", source_dbid=1), km, [1], sink,
                        batch_size=2)
    assert loaded == 2
    assert len(sink) == 1
    assert "UNIQUE" in sink.rejects[0][1]
    # the duplicate row is absent, the first ID=1 row survived and its
    # mapping entry with it
    assert [r[0] for r in conn.execute('SELECT "Name" FROM "Faculty" ORDER BY "ID"')] \
        == ["a", "b"]
    km.seal()
    assert km.lookup(1, 1) == 1
    assert len(km) == 2


def test_fk_violation_routed_per_row():
    conn = target_conn()
    conn.execute('INSERT INTO "Faculty" VALUES (1, \'f\')')
    km = KeyMap("Course")
    sink = RejectSink()
    rows = [
        Row("Course", {"Name": "ok", "Fee": None, "FacultyID": 1}, TAG1, 1),
        Row("Course", {"Name": "bad", "Fee": None, "FacultyID": 42}, TAG1, 2),
    ]
    loaded = load_table(conn, SCHEMA.table("Course"), rows,
                        LoadMode("generateKeys"), km, [1], sink)
    assert loaded == 1
    assert len(km) == 1
    assert "FOREIGN KEY" in sink.rejects[0][1]


def test_self_reference_resolved_in_second_pass():
    conn = target_conn()
    km = KeyMap("Employee")
    sink = RejectSink()
    rows = [
        Row("Employee", {"ID": 10, "Name": "boss", "ManagerID": None}, TAG1, 10),
        Row("Employee", {"ID": 11, "Name": "dev", "ManagerID": 10}, TAG1, 11),
        Row("Employee", {"ID": 12, "Name": "lost", "ManagerID": 77}, TAG1, 12),
    ]
    loaded = load_table(conn, SCHEMA.table("Employee"), rows,
                        LoadMode("generateKeys"), km, [1], sink)
    assert loaded == 2
    got = list(conn.execute('SELECT "Name", "ManagerID" FROM "Employee" ORDER BY "ID"'))
    assert got == [("boss", None), ("dev", 1)]
    assert sink.rejects == [
        ("Employee[dbid=1 key=12]", "MissingMapping(ManagerID=77 dbid=1)")
    ]
    assert len(km) == 2


def test_storage_value_canonicalizes_decimals():
    assert storage_value(Decimal("118"), "decimal") == "118.00"
    assert storage_value(Decimal("2.125"), "decimal") == "2.12"
    assert storage_value(None, "decimal") is None
    assert storage_value("text", "text") == "text"
    assert storage_value(7, "integer") == 7


def test_discriminator_seed_and_backfill():
    conn = target_conn()
    conn.execute('CREATE TABLE "StudyCycle" ("ID" INTEGER PRIMARY KEY, "Name" TEXT)')
    schema = parse_schema({"tables": [{
        "name": "StudyCycle",
        "columns": [
            {"name": "ID", "dataKind": "integer", "isIdentity": True},
            {"name": "Name", "dataKind": "text"},
        ],
        "primaryKey": "ID",
    }]})
    spec = DiscriminatorSpec("StudyCycle", "StudyCycleID", {1: 1, 2: 2})
    assert seed_discriminator(conn, spec, [TAG2, TAG1], schema.table("StudyCycle")) == 2
    assert list(conn.execute('SELECT * FROM "StudyCycle" ORDER BY "ID"')) == [
        (1, "alpha"), (2, "beta"),
    ]
    rows = [Row("Course", {"Name": "x"}, TAG2, 1)]
    backfill_discriminator(rows, spec)
    assert rows[0].values["StudyCycleID"] == 2
    with pytest.raises(UncoveredSource):
        backfill_discriminator([Row("Course", {"Name": "y"}, SourceTag(9, "zeta"), 1)],
                               spec)
    with pytest.raises(UncoveredSource):
        seed_discriminator(conn, spec, [SourceTag(9, "zeta")],
                           schema.table("StudyCycle"))


def test_verify_target_counts_dangling_and_duplicates():
    conn = sqlite3.connect(":memory:")
    # no declared constraints so bad data can exist; the verifier checks
    # against the schema model, not sqlite's own enforcement
    conn.execute('CREATE TABLE "Faculty" ("ID" INTEGER, "Name" TEXT)')
    conn.execute('CREATE TABLE "Course" ("ID" INTEGER, "Name" TEXT, "Fee" TEXT, '
                 '"FacultyID" INTEGER)')
    conn.execute('CREATE TABLE "Employee" ("ID" INTEGER, "Name" TEXT, '
                 '"ManagerID" INTEGER)')
    conn.executemany('INSERT INTO "Faculty" VALUES (?, ?)',
                     [(1, "a"), (1, "dup"), (2, "b")])
    conn.executemany('INSERT INTO "Course" VALUES (?, ?, NULL, ?)',
                     [(1, "c1", 1), (2, "c2", 9), (3, "c3", None)])
    report = verify_target(conn, SCHEMA)
    assert report.row_counts == {"Faculty": 3, "Course": 3, "Employee": 0}
    assert report.duplicate_total == 1
    assert report.dangling_total == 1
    assert ("Course", "FacultyID", 1) in report.dangling
    assert not report.clean
    text = report.render_text()
    assert "DANGLING Course.FacultyID: 1" in text
    assert "DUPLICATE PK Faculty: 1" in text


def test_report_csv_shapes():
    report = LoadReport()
    report.per_table["Faculty"] = TableCounts(4, 4, 4, 0)
    report.per_table["Student"] = TableCounts(
        3000, 2939, 2939, 61, [("Student[dbid=1 key=9]", "UnknownCode(9)")]
    )
    assert report.csv_text() == (
        "table,extracted,transformed,loaded,rejected\n"
        "Faculty,4,4,4,0\n"
        "Student,3000,2939,2939,61\n"
    )
    assert report.rejects_csv_text() == (
        "table,row_ref,reason\n"
        "Student,Student[dbid=1 key=9],UnknownCode(9)\n"
    )
    assert report.conserved
    report.per_table["Student"].loaded = 2938
    assert not report.conserved
