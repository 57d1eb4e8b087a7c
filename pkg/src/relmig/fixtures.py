"""Deterministic demo fixture: three structurally-identical student
databases plus the consolidated target schema and a ready-to-run config.

``gen_fixture(out_dir, seed)`` writes the three source databases, an empty
target database, both schema documents, ``config.json``, and a
``manifest.json`` recording exactly what was generated (row counts, dirty
rows by class, distinct nationality spellings, ...). Everything derives
from seeded generators, so the same seed always produces byte-identical
files; tests use the manifest as the ground truth for row conservation.

About 2% of students are dirty, each in exactly one way: an unknown
gender code, a missing or malformed identity number, or an enrolment
year outside the configured range.
"""

from __future__ import annotations

import json
import random
import sqlite3
from pathlib import Path

from .schema import SchemaModel, TableDef, parse_schema

SOURCES = (
    (1, "graduate", "source_graduate.db"),
    (2, "postgrad-1yr", "source_postgrad1.db"),
    (3, "postgrad-2yr", "source_postgrad2.db"),
)

FACULTIES = (
    (1, "Faculty of Computer Science"),
    (2, "Faculty of Economics"),
    (5, "Faculty of Law"),
    (9, "Faculty of Architecture"),
)

FIRST_NAMES = (
    "Ana", "Marko", "Elena", "Stefan", "Ivana", "Nikola", "Sara", "Luka",
    "Mila", "Petar", "Teodora", "Filip", "Jana", "Viktor", "Emilija",
    "Damjan", "Kristina", "Bojan", "Tamara", "Goran",
)

LAST_NAMES = (
    "Petrova", "Stojanov", "Ivanova", "Dimitrov", "Georgieva", "Ristov",
    "Angelova", "Trajkov", "Stefanova", "Markov", "Nikolova", "Popov",
    "Jovanova", "Kostov", "Mitrova", "Velkov",
)

NATIONALITIES = (
    "Macedonian", "Albanian", "Turkish", "Serbian", "Bosnian",
    "Vlach", "Romani", "Greek", "Bulgarian", "Croatian",
)

YEAR_MIN, YEAR_MAX = 2000, 2012

DIRTY_CLASSES = ("unknownGender", "nullEmbg", "malformedEmbg", "yearOutOfRange")

_SQL_TYPES = {
    "integer": "INTEGER",
    "boolean": "INTEGER",
    "decimal": "TEXT",
    "text": "TEXT",
    "date": "TEXT",
}


def table_ddl(table: TableDef) -> str:
    """CREATE TABLE statement for one table definition."""
    parts = []
    for col in table.columns:
        decl = f'"{col.name}" {_SQL_TYPES[col.data_kind]}'
        if col.name == table.primary_key and col.data_kind == "integer":
            decl += " PRIMARY KEY"
        elif not col.nullable:
            decl += " NOT NULL"
        parts.append(decl)
    if table.column(table.primary_key).data_kind != "integer":
        parts.append(f'PRIMARY KEY ("{table.primary_key}")')
    for fk in table.foreign_keys:
        parts.append(
            f'FOREIGN KEY ("{fk.from_column}") '
            f'REFERENCES "{fk.to_table}" ("{fk.to_column}")'
        )
    return 'CREATE TABLE "{}" (\n  {}\n)'.format(table.name, ",\n  ".join(parts))


def build_database(path: Path, schema: SchemaModel) -> sqlite3.Connection:
    """Create a fresh database file with the given tables; returns the
    open connection so callers can fill it."""
    if path.exists():
        path.unlink()
    conn = sqlite3.connect(path)
    for table in schema.tables.values():
        conn.execute(table_ddl(table))
    conn.commit()
    return conn


def _column(name: str, kind: str, nullable: bool = False, identity: bool = False) -> dict:
    col: dict = {"name": name, "dataKind": kind}
    if nullable:
        col["nullable"] = True
    if identity:
        col["isIdentity"] = True
    return col


def _fk(column: str, table: str) -> dict:
    return {"fromColumn": column, "toTable": table, "toColumn": "ID"}


def source_schema_doc() -> dict:
    return {
        "tables": [
            {
                "name": "Faculty",
                "columns": [_column("ID", "integer", identity=True),
                            _column("Name", "text")],
                "primaryKey": "ID",
            },
            {
                "name": "Programme",
                "columns": [_column("ID", "integer", identity=True),
                            _column("Name", "text"),
                            _column("FacultyID", "integer")],
                "primaryKey": "ID",
                "foreignKeys": [_fk("FacultyID", "Faculty")],
            },
            {
                "name": "Course",
                "columns": [_column("ID", "integer", identity=True),
                            _column("Name", "text"),
                            _column("FacultyID", "integer")],
                "primaryKey": "ID",
                "foreignKeys": [_fk("FacultyID", "Faculty")],
            },
            {
                "name": "Student",
                "columns": [_column("ID", "integer", identity=True),
                            _column("FullName", "text"),
                            _column("Gender", "integer"),
                            _column("EmbgNumber", "text", nullable=True),
                            _column("Year", "integer"),
                            _column("Nationality", "text", nullable=True),
                            _column("ProgrammeID", "integer")],
                "primaryKey": "ID",
                "foreignKeys": [_fk("ProgrammeID", "Programme")],
            },
            {
                "name": "ProgrammesCourses",
                "columns": [_column("ID", "integer", identity=True),
                            _column("ProgrammeID", "integer"),
                            _column("CourseID", "integer")],
                "primaryKey": "ID",
                "foreignKeys": [_fk("ProgrammeID", "Programme"),
                                _fk("CourseID", "Course")],
            },
        ]
    }


def target_schema_doc() -> dict:
    return {
        "tables": [
            {
                "name": "StudyCycle",
                "columns": [_column("ID", "integer", identity=True),
                            _column("Name", "text")],
                "primaryKey": "ID",
            },
            {
                "name": "Faculty",
                "columns": [_column("ID", "integer", identity=True),
                            _column("Name", "text")],
                "primaryKey": "ID",
            },
            {
                "name": "Nationality",
                "columns": [_column("ID", "integer", identity=True),
                            _column("Name", "text")],
                "primaryKey": "ID",
            },
            {
                "name": "Programme",
                "columns": [_column("ID", "integer", identity=True),
                            _column("Name", "text"),
                            _column("FacultyID", "integer"),
                            _column("StudyCycleID", "integer")],
                "primaryKey": "ID",
                "foreignKeys": [_fk("FacultyID", "Faculty"),
                                _fk("StudyCycleID", "StudyCycle")],
            },
            {
                "name": "Course",
                "columns": [_column("ID", "integer", identity=True),
                            _column("Name", "text"),
                            _column("FacultyID", "integer"),
                            _column("StudyCycleID", "integer")],
                "primaryKey": "ID",
                "foreignKeys": [_fk("FacultyID", "Faculty"),
                                _fk("StudyCycleID", "StudyCycle")],
            },
            {
                "name": "Student",
                "columns": [_column("ID", "integer", identity=True),
                            _column("FirstName", "text"),
                            _column("LastName", "text", nullable=True),
                            _column("Gender", "text"),
                            _column("EmbgNumber", "text"),
                            _column("Year", "integer"),
                            _column("NationalityID", "integer", nullable=True),
                            _column("StudyCycleID", "integer")],
                "primaryKey": "ID",
                "foreignKeys": [_fk("NationalityID", "Nationality"),
                                _fk("StudyCycleID", "StudyCycle")],
            },
            {
                "name": "ProgrammesCourses",
                "columns": [_column("ID", "integer", identity=True),
                            _column("ProgrammeID", "integer"),
                            _column("CourseID", "integer"),
                            _column("StudyCycleID", "integer")],
                "primaryKey": "ID",
                "foreignKeys": [_fk("ProgrammeID", "Programme"),
                                _fk("CourseID", "Course"),
                                _fk("StudyCycleID", "StudyCycle")],
            },
        ]
    }


def config_doc() -> dict:
    return {
        "sources": [
            {"dbid": dbid, "label": label, "path": filename}
            for dbid, label, filename in SOURCES
        ],
        "target": {"path": "target.db"},
        "sourceSchema": "source_schema.json",
        "targetSchema": "target_schema.json",
        "policy": "rejectRow",
        "discriminator": {
            "table": "StudyCycle",
            "column": "StudyCycleID",
            "valueBySource": {"1": 1, "2": 2, "3": 3},
        },
        "tables": {
            "Faculty": {"mode": {"kind": "preserveKeys", "source": 1}},
            "Nationality": {
                "lookup": {"sourceColumns": [["Student", "Nationality"]]}
            },
            "Programme": {
                "mode": {"kind": "generateKeys"},
                "rules": [
                    {"kind": "remapForeignKey", "column": "FacultyID",
                     "table": "Faculty"},
                ],
            },
            "Course": {
                "mode": {"kind": "generateKeys"},
                "rules": [
                    {"kind": "remapForeignKey", "column": "FacultyID",
                     "table": "Faculty"},
                ],
            },
            "Student": {
                "mode": {"kind": "generateKeys"},
                "extract": {
                    "columns": ["ID", "FullName", "Gender", "EmbgNumber",
                                "Year", "Nationality"],
                },
                "rules": [
                    {"kind": "splitColumn", "column": "FullName",
                     "separator": " ", "targets": ["FirstName", "LastName"]},
                    {"kind": "translateCoded", "column": "Gender",
                     "map": {"1": "M", "2": "F"}},
                    {"kind": "validateRow", "checks": [
                        {"check": "notNull", "column": "EmbgNumber"},
                        {"check": "pattern", "column": "EmbgNumber",
                         "pattern": "^[0-9]{13}$"},
                        {"check": "range", "column": "Year",
                         "min": YEAR_MIN, "max": YEAR_MAX},
                    ]},
                    {"kind": "joinLookup", "column": "Nationality",
                     "lookupTable": "Nationality",
                     "targetColumn": "NationalityID"},
                ],
            },
            "ProgrammesCourses": {
                "mode": {"kind": "generateKeys"},
                "rules": [
                    {"kind": "remapForeignKey", "column": "ProgrammeID",
                     "table": "Programme"},
                    {"kind": "remapForeignKey", "column": "CourseID",
                     "table": "Course"},
                ],
            },
        },
    }


def _nationality_variant(rng: random.Random, canonical: str) -> str:
    pick = rng.randrange(5)
    if pick == 1:
        return canonical.upper()
    if pick == 2:
        return canonical.lower()
    if pick == 3:
        return " " + canonical
    if pick == 4:
        return canonical + "  "
    return canonical


def _fill_source(
    conn: sqlite3.Connection,
    rng: random.Random,
    label: str,
    students: int,
    used_nationalities: set[str],
) -> dict:
    """Generate one source database's rows; returns its manifest entry."""
    conn.executemany('INSERT INTO "Faculty" ("ID", "Name") VALUES (?, ?)', FACULTIES)
    faculty_ids = [fid for fid, _ in FACULTIES]

    n_prog = rng.randint(6, 10)
    programmes = [
        (i, f"Programme {label} {i:02d}", rng.choice(faculty_ids))
        for i in range(1, n_prog + 1)
    ]
    conn.executemany(
        'INSERT INTO "Programme" ("ID", "Name", "FacultyID") VALUES (?, ?, ?)',
        programmes,
    )

    n_course = rng.randint(10, 15)
    courses = [
        (i, f"Course {label} {i:02d}", rng.choice(faculty_ids))
        for i in range(1, n_course + 1)
    ]
    conn.executemany(
        'INSERT INTO "Course" ("ID", "Name", "FacultyID") VALUES (?, ?, ?)',
        courses,
    )

    links = []
    for prog_id in range(1, n_prog + 1):
        for course_id in sorted(rng.sample(range(1, n_course + 1), rng.randint(2, 5))):
            links.append((len(links) + 1, prog_id, course_id))
    conn.executemany(
        'INSERT INTO "ProgrammesCourses" ("ID", "ProgrammeID", "CourseID") '
        "VALUES (?, ?, ?)",
        links,
    )

    dirty = dict.fromkeys(DIRTY_CLASSES, 0)
    null_nat = 0
    no_space = no_space_clean = 0
    rows = []
    for sid in range(1, students + 1):
        if rng.random() < 0.01:
            full_name = rng.choice(FIRST_NAMES)
            single = True
        else:
            full_name = f"{rng.choice(FIRST_NAMES)} {rng.choice(LAST_NAMES)}"
            single = False
        gender = rng.choice((1, 2))
        embg = "".join(rng.choice("0123456789") for _ in range(13))
        year = rng.randint(YEAR_MIN, YEAR_MAX)
        if rng.random() < 0.05:
            nationality = None
        else:
            canonical = rng.choice(NATIONALITIES)
            used_nationalities.add(canonical.casefold())
            nationality = _nationality_variant(rng, canonical)
        programme_id = rng.randint(1, n_prog)

        defect = None
        if rng.random() < 0.02:
            defect = rng.choice(DIRTY_CLASSES)
            if defect == "unknownGender":
                gender = 9
            elif defect == "nullEmbg":
                embg = None
            elif defect == "malformedEmbg":
                embg = embg[:12]
            else:
                year = rng.choice((1899, 2050))
            dirty[defect] += 1

        if nationality is None:
            null_nat += 1
        if single:
            no_space += 1
            if defect is None:
                no_space_clean += 1
        rows.append((sid, full_name, gender, embg, year, nationality, programme_id))

    conn.executemany(
        'INSERT INTO "Student" ("ID", "FullName", "Gender", "EmbgNumber", '
        '"Year", "Nationality", "ProgrammeID") VALUES (?, ?, ?, ?, ?, ?, ?)',
        rows,
    )
    return {
        "students": students,
        "programmes": n_prog,
        "courses": n_course,
        "programmeCourses": len(links),
        "dirty": dirty,
        "dirtyTotal": sum(dirty.values()),
        "nullNationality": null_nat,
        "noSpaceNames": no_space,
        "noSpaceClean": no_space_clean,
    }


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def gen_fixture(out_dir: Path, seed: int = 7, students_per_source: int = 1000) -> dict:
    """Write the full fixture set into out_dir and return the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    source_schema = parse_schema(source_schema_doc())
    target_schema = parse_schema(target_schema_doc())

    used_nationalities: set[str] = set()
    per_source = {}
    for dbid, label, filename in SOURCES:
        conn = build_database(out_dir / filename, source_schema)
        rng = random.Random(f"{seed}/{dbid}")
        entry = _fill_source(conn, rng, label, students_per_source, used_nationalities)
        conn.commit()
        conn.close()
        entry["dbid"] = dbid
        per_source[label] = entry

    build_database(out_dir / "target.db", target_schema).close()
    _write_json(out_dir / "source_schema.json", source_schema_doc())
    _write_json(out_dir / "target_schema.json", target_schema_doc())
    _write_json(out_dir / "config.json", config_doc())

    entries = list(per_source.values())
    manifest = {
        "seed": seed,
        "studentsPerSource": students_per_source,
        "facultyIds": [fid for fid, _ in FACULTIES],
        "sources": per_source,
        "totals": {
            "students": sum(e["students"] for e in entries),
            "programmes": sum(e["programmes"] for e in entries),
            "courses": sum(e["courses"] for e in entries),
            "programmeCourses": sum(e["programmeCourses"] for e in entries),
            "dirtyStudents": sum(e["dirtyTotal"] for e in entries),
            "cleanStudents": sum(
                e["students"] - e["dirtyTotal"] for e in entries
            ),
            "nullNationality": sum(e["nullNationality"] for e in entries),
            "noSpaceClean": sum(e["noSpaceClean"] for e in entries),
            "distinctNationalities": len(used_nationalities),
        },
    }
    _write_json(out_dir / "manifest.json", manifest)
    return manifest
