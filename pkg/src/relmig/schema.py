"""Relational schema model, FK dependency graph, and populate-by-priority ordering.

Schema documents are JSON trees: a top-level ``tables`` array where each table
carries ``name``, ``columns`` (name/dataKind/nullable/isIdentity),
``primaryKey`` and ``foreignKeys`` (fromColumn/toTable/toColumn).
See docs/example_schema.json for a complete document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .errors import (
    CyclicDependency,
    DanglingReference,
    DuplicateTable,
    MalformedDocument,
    UnknownColumn,
    UnknownTable,
)

DATA_KINDS = frozenset({"integer", "decimal", "text", "date", "boolean"})

_COLUMN_KEYS = frozenset({"name", "dataKind", "nullable", "isIdentity"})
_TABLE_KEYS = frozenset({"name", "columns", "primaryKey", "foreignKeys"})
_FK_KEYS = frozenset({"fromColumn", "toTable", "toColumn"})


@dataclass(frozen=True)
class ColumnDef:
    name: str
    data_kind: str
    nullable: bool = False
    is_identity: bool = False

    def __post_init__(self):
        if self.data_kind not in DATA_KINDS:
            raise MalformedDocument(
                f"column {self.name!r}: unknown dataKind {self.data_kind!r}"
            )
        if self.is_identity and (self.data_kind != "integer" or self.nullable):
            raise MalformedDocument(
                f"column {self.name!r}: identity columns must be non-nullable integers"
            )


@dataclass(frozen=True)
class ForeignKeyDef:
    from_table: str
    from_column: str
    to_table: str
    to_column: str


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[ColumnDef, ...]
    primary_key: str
    foreign_keys: tuple[ForeignKeyDef, ...] = ()

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise MalformedDocument(f"table {self.name!r}: duplicate column names")
        if self.primary_key not in names:
            raise MalformedDocument(
                f"table {self.name!r}: primaryKey {self.primary_key!r} is not a column"
            )
        if sum(1 for c in self.columns if c.is_identity) > 1:
            raise MalformedDocument(
                f"table {self.name!r}: more than one identity column"
            )
        for fk in self.foreign_keys:
            if fk.from_column not in names:
                raise MalformedDocument(
                    f"table {self.name!r}: FK fromColumn {fk.from_column!r} is not a column"
                )

    def column(self, name: str) -> ColumnDef:
        for c in self.columns:
            if c.name == name:
                return c
        raise UnknownColumn(f"{self.name}.{name}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def identity_column(self) -> ColumnDef | None:
        for c in self.columns:
            if c.is_identity:
                return c
        return None


@dataclass(frozen=True)
class SchemaModel:
    """Named set of table definitions; FK targets are checked on construction."""

    tables: Mapping[str, TableDef]

    def __post_init__(self):
        for table in self.tables.values():
            for fk in table.foreign_keys:
                target = self.tables.get(fk.to_table)
                if target is None:
                    raise DanglingReference(
                        f"{table.name}.{fk.from_column} references unknown table {fk.to_table!r}"
                    )
                if fk.to_column != target.primary_key:
                    raise DanglingReference(
                        f"{table.name}.{fk.from_column} references {fk.to_table}.{fk.to_column}, "
                        f"which is not its primary key"
                    )

    def table(self, name: str) -> TableDef:
        try:
            return self.tables[name]
        except KeyError:
            raise UnknownTable(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self.tables

    @property
    def foreign_keys(self) -> list[ForeignKeyDef]:
        return [fk for t in self.tables.values() for fk in t.foreign_keys]


def require_keys(obj: Mapping, allowed: frozenset[str], required: Iterable[str], what: str):
    if not isinstance(obj, Mapping):
        raise MalformedDocument(f"{what}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise MalformedDocument(f"{what}: unknown keys {sorted(unknown)}")
    for key in required:
        if key not in obj:
            raise MalformedDocument(f"{what}: missing required key {key!r}")


def parse_schema(doc: Mapping) -> SchemaModel:
    """Build a SchemaModel from a parsed schema document tree."""
    require_keys(doc, frozenset({"tables"}), ["tables"], "schema document")
    if not isinstance(doc["tables"], list):
        raise MalformedDocument("schema document: 'tables' must be an array")

    tables: dict[str, TableDef] = {}
    for raw in doc["tables"]:
        require_keys(raw, _TABLE_KEYS, ["name", "columns", "primaryKey"], "table entry")
        name = raw["name"]
        if name in tables:
            raise DuplicateTable(f"table {name!r} defined twice")
        columns = []
        for col in raw["columns"]:
            require_keys(col, _COLUMN_KEYS, ["name", "dataKind"], f"column of {name!r}")
            columns.append(
                ColumnDef(
                    name=col["name"],
                    data_kind=col["dataKind"],
                    nullable=bool(col.get("nullable", False)),
                    is_identity=bool(col.get("isIdentity", False)),
                )
            )
        fks = []
        for fk in raw.get("foreignKeys", []):
            require_keys(fk, _FK_KEYS, ["fromColumn", "toTable", "toColumn"], f"FK of {name!r}")
            fks.append(
                ForeignKeyDef(
                    from_table=name,
                    from_column=fk["fromColumn"],
                    to_table=fk["toTable"],
                    to_column=fk["toColumn"],
                )
            )
        tables[name] = TableDef(
            name=name,
            columns=tuple(columns),
            primary_key=raw["primaryKey"],
            foreign_keys=tuple(fks),
        )
    return SchemaModel(tables=tables)


def load_schema(path: str | Path) -> SchemaModel:
    """Read and parse a JSON schema document from disk."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedDocument(f"cannot read schema document {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"schema document {path} is not valid JSON: {exc}") from exc
    return parse_schema(doc)


@dataclass(frozen=True)
class FkGraph:
    """Dependency graph over table names.

    One edge (referenced -> referencing) per foreign key; self-referencing
    FKs are kept out of the edge set and flagged in ``self_loops`` instead
    (those tables need a two-pass load).
    """

    nodes: tuple[str, ...]
    edges: frozenset[tuple[str, str]]
    self_loops: frozenset[str]

    def successors(self, name: str) -> list[str]:
        return sorted(b for a, b in self.edges if a == name)

    def predecessors(self, name: str) -> list[str]:
        return sorted(a for a, b in self.edges if b == name)


def fk_graph(schema: SchemaModel) -> FkGraph:
    edges = set()
    loops = set()
    for table in schema.tables.values():
        for fk in table.foreign_keys:
            if fk.to_table == table.name:
                loops.add(table.name)
            else:
                edges.add((fk.to_table, table.name))
    return FkGraph(
        nodes=tuple(schema.tables),
        edges=frozenset(edges),
        self_loops=frozenset(loops),
    )


def find_cycle(graph: FkGraph) -> list[str] | None:
    """Return one cycle as a table-name path [a, ..., a], or None."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in graph.nodes}
    succ = {n: graph.successors(n) for n in graph.nodes}
    parent: dict[str, str | None] = {}

    for start in sorted(graph.nodes):
        if color[start] != WHITE:
            continue
        stack = [(start, iter(succ[start]))]
        color[start] = GRAY
        parent[start] = None
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == GRAY:
                    path = [nxt]
                    cur: str | None = node
                    while cur is not None and cur != nxt:
                        path.append(cur)
                        cur = parent[cur]
                    path.append(nxt)
                    path.reverse()
                    return path
                if color[nxt] == WHITE:
                    color[nxt] = GRAY
                    parent[nxt] = node
                    stack.append((nxt, iter(succ[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return None


def table_depths(schema: SchemaModel) -> dict[str, int]:
    """Priority layer per table: 0 when it references nothing, else one more
    than the deepest table it references (self-references ignored)."""
    graph = fk_graph(schema)
    cycle = find_cycle(graph)
    if cycle is not None:
        raise CyclicDependency(cycle)

    referenced_by: dict[str, set[str]] = {n: set() for n in graph.nodes}
    for a, b in graph.edges:
        referenced_by[b].add(a)

    depths: dict[str, int] = {}

    def depth(name: str) -> int:
        if name in depths:
            return depths[name]
        parents = referenced_by[name]
        value = 0 if not parents else 1 + max(depth(p) for p in parents)
        depths[name] = value
        return value

    for name in graph.nodes:
        depth(name)
    return depths


def load_order(schema: SchemaModel) -> list[str]:
    """Populate-by-priority order: tables referencing nothing come first, every
    table comes after everything it references; ties broken by table name."""
    depths = table_depths(schema)
    return sorted(schema.tables, key=lambda t: (depths[t], t))
