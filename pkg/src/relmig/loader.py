"""Target-side loading: key assignment, constraint routing, and accounting.

Two load modes:

* generateKeys: the target assigns fresh identity values; every loaded row
  records a (dbid, oldKey) -> newKey translation in the table's key map.
* preserveKeys: legacy primary keys are written verbatim (single designated
  source only); the key map still gets newKey = oldKey entries for every
  configured source so dependents translate through one uniform path.

The target engine's native identity behavior supplies both modes: an
integer primary key accepts explicit values, and the next auto-assigned
key is always one above the current maximum, so preserved gaps survive.

Constraint violations (uniqueness, nullability, FK) are caught per row and
routed to the reject sink; accounting stays exact: for every table,
extracted = loaded + rejected.
"""

from __future__ import annotations

import csv
import io
import sqlite3
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal

from .errors import (
    ConfigValidationError,
    ConnectionFailed,
    ConstraintViolation,
    DuplicateOldKey,
    PreconditionError,
    RowStructureError,
    UncoveredSource,
)
from .expressions import CENT
from .keymap import KeyMap
from .schema import SchemaModel, TableDef
from .sources import RejectSink, Row, SourceTag, quote_ident

DEFAULT_BATCH_SIZE = 500
CONSOLE_REJECT_CAP = 50


@dataclass(frozen=True)
class LoadMode:
    """How target keys are assigned for one table step."""

    kind: str
    source_dbid: int | None = None

    def __post_init__(self):
        if self.kind not in ("generateKeys", "preserveKeys"):
            raise ConfigValidationError(f"bad load mode kind {self.kind!r}")
        if self.kind == "preserveKeys" and self.source_dbid is None:
            raise ConfigValidationError(
                "preserveKeys needs its single designated source dbid"
            )
        if self.kind == "generateKeys" and self.source_dbid is not None:
            raise ConfigValidationError("generateKeys takes no source dbid")


@dataclass(frozen=True)
class DiscriminatorSpec:
    """Which target table and column separate rows by originating source."""

    table: str
    column: str
    value_by_source: dict[int, int]

    def __post_init__(self):
        if not self.value_by_source:
            raise ConfigValidationError("discriminator needs valueBySource entries")
        values = list(self.value_by_source.values())
        if len(set(values)) != len(values):
            raise ConfigValidationError(
                "discriminator values must be distinct per source"
            )


@dataclass
class TableCounts:
    extracted: int = 0
    transformed: int = 0
    loaded: int = 0
    rejected: int = 0
    reject_reasons: list[tuple[str, str]] = field(default_factory=list)

    @property
    def conserved(self) -> bool:
        return self.extracted == self.loaded + self.rejected


@dataclass
class LoadReport:
    per_table: dict[str, TableCounts] = field(default_factory=dict)
    aborted: bool = False
    cause: str | None = None
    notes: list[str] = field(default_factory=list)

    def counts(self, table: str) -> TableCounts:
        return self.per_table.setdefault(table, TableCounts())

    @property
    def conserved(self) -> bool:
        return all(c.conserved for c in self.per_table.values())

    @property
    def total_rejected(self) -> int:
        return sum(c.rejected for c in self.per_table.values())

    def csv_text(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["table", "extracted", "transformed", "loaded", "rejected"])
        for table, c in self.per_table.items():
            writer.writerow([table, c.extracted, c.transformed, c.loaded, c.rejected])
        return out.getvalue()

    def rejects_csv_text(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["table", "row_ref", "reason"])
        for table, c in self.per_table.items():
            for row_ref, reason in c.reject_reasons:
                writer.writerow([table, row_ref, reason])
        return out.getvalue()

    def render_text(self, reject_cap: int = CONSOLE_REJECT_CAP) -> str:
        lines = ["table            extracted  transformed  loaded  rejected"]
        for table, c in self.per_table.items():
            lines.append(
                f"{table:<16} {c.extracted:>9}  {c.transformed:>11}  "
                f"{c.loaded:>6}  {c.rejected:>8}"
            )
        for note in self.notes:
            lines.append(note)
        rejects = [
            (table, ref, reason)
            for table, c in self.per_table.items()
            for ref, reason in c.reject_reasons
        ]
        if rejects:
            lines.append(f"rejected rows ({len(rejects)} total, first {reject_cap}):")
            for table, ref, reason in rejects[:reject_cap]:
                lines.append(f"  {ref}: {reason}")
        if self.aborted:
            lines.append(f"ABORTED: {self.cause}")
        return "\n".join(lines) + "\n"


def connect_target(path: str) -> sqlite3.Connection:
    """Open the target database read-write; it must already exist."""
    try:
        conn = sqlite3.connect(f"file:{path}?mode=rw", uri=True)
        conn.execute("SELECT 1")
    except sqlite3.Error as exc:
        raise ConnectionFailed(f"cannot open target {path!r}: {exc}") from exc
    conn.execute("PRAGMA foreign_keys = ON")
    return conn


def storage_value(value, data_kind: str):
    """Convert one canonical value into its stored form (decimals as text)."""
    if value is None:
        return None
    if data_kind == "decimal":
        return str(Decimal(value).quantize(CENT, rounding=ROUND_HALF_EVEN))
    return value


def next_identity_start(conn: sqlite3.Connection, table: TableDef) -> int:
    row = conn.execute(
        f"SELECT COALESCE(MAX({quote_ident(table.primary_key)}), 0) "
        f"FROM {quote_ident(table.name)}"
    ).fetchone()
    return int(row[0]) + 1


def generate_surrogate(
    rows: list[Row], table: TableDef, keymap: KeyMap, start: int
) -> list[Row]:
    """Assign fresh target keys in row order and record the translations.

    The old key is the row's extraction key (its legacy primary key); a
    row without one cannot be mapped and is a structural defect.
    """
    pk = table.primary_key
    next_key = start
    for row in rows:
        old = row.values.get(pk)
        if old is None:
            old = row.source_key
        if old is None:
            raise RowStructureError(f"MissingSourceKey({table.name})")
        if keymap.contains(row.origin.dbid, old):
            raise DuplicateOldKey(
                f"{table.name}: source key {old} from dbid {row.origin.dbid} "
                "appears twice"
            )
        keymap.record(row.origin.dbid, old, next_key)
        row.values[pk] = next_key
        next_key += 1
    return rows


def backfill_discriminator(
    rows: list[Row], spec: DiscriminatorSpec
) -> list[Row]:
    """Stamp each row with its source's discriminator key."""
    for row in rows:
        dbid = row.origin.dbid
        if dbid not in spec.value_by_source:
            raise UncoveredSource(
                f"no discriminator value configured for source dbid {dbid}"
            )
        row.values[spec.column] = spec.value_by_source[dbid]
    return rows


def lookup_value_column(table: TableDef) -> str:
    """The single text column a lookup or discriminator table carries
    beside its primary key."""
    others = [c for c in table.columns if c.name != table.primary_key]
    if len(others) != 1 or others[0].data_kind != "text":
        raise ConfigValidationError(
            f"table {table.name!r} must have exactly one text column "
            "beside its primary key"
        )
    return others[0].name


def seed_discriminator(
    conn: sqlite3.Connection,
    spec: DiscriminatorSpec,
    tags: list[SourceTag],
    table: TableDef,
) -> int:
    """Insert one discriminator row per configured source (key, label)."""
    label_col = lookup_value_column(table)
    sql = "INSERT INTO {} ({}, {}) VALUES (?, ?)".format(
        quote_ident(table.name), quote_ident(table.primary_key), quote_ident(label_col)
    )
    seeded = 0
    for tag in sorted(tags, key=lambda t: t.dbid):
        if tag.dbid not in spec.value_by_source:
            raise UncoveredSource(
                f"no discriminator value configured for source dbid {tag.dbid}"
            )
        conn.execute(sql, (spec.value_by_source[tag.dbid], tag.label))
        seeded += 1
    return seeded


def _record_preserved(keymap: KeyMap, all_dbids: list[int], key: int) -> None:
    for dbid in all_dbids:
        keymap.record(dbid, key, key)


def _discard_row_keys(keymap: KeyMap, mode: LoadMode, all_dbids: list[int], row: Row, pk: str):
    if mode.kind == "generateKeys":
        old = row.source_key if row.source_key is not None else row.values.get(pk)
        if old is not None:
            keymap.discard(row.origin.dbid, old)
    else:
        key = row.values.get(pk)
        if key is not None:
            for dbid in all_dbids:
                keymap.discard(dbid, key)


def load_table(
    conn: sqlite3.Connection,
    table: TableDef,
    rows: list[Row],
    mode: LoadMode,
    keymap: KeyMap,
    all_dbids: list[int],
    sink: RejectSink,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> int:
    """Insert transformed rows inside the caller's transaction.

    Returns the number of rows actually loaded. Constraint violations are
    rolled back per row (savepoints) and routed to the sink; their key-map
    entries are withdrawn so entry count always equals rows loaded.
    """
    if not rows:
        return 0
    pk = table.primary_key

    if mode.kind == "generateKeys":
        if table.identity_column is None or table.identity_column.name != pk:
            raise ConfigValidationError(
                f"{table.name}: generateKeys needs an identity primary key"
            )
        generate_surrogate(rows, table, keymap, next_identity_start(conn, table))
    else:
        for row in rows:
            if row.origin.dbid != mode.source_dbid:
                raise PreconditionError(
                    f"{table.name}: preserveKeys designated source is "
                    f"dbid {mode.source_dbid}, got a row from dbid {row.origin.dbid}"
                )

    # Self-referencing FK columns go in as null first; they are resolved in
    # a second pass once this table's own keys are all assigned.
    self_cols = [
        fk.from_column for fk in table.foreign_keys if fk.to_table == table.name
    ]
    stashed: dict[int, dict[str, int]] = {}
    if self_cols:
        for i, row in enumerate(rows):
            kept = {c: row.values[c] for c in self_cols if row.values.get(c) is not None}
            if kept:
                stashed[i] = kept
                for c in kept:
                    row.values[c] = None

    columns = [c for c in table.column_names if c in rows[0].values]
    kinds = {c: table.column(c).data_kind for c in columns}
    sql = "INSERT INTO {} ({}) VALUES ({})".format(
        quote_ident(table.name),
        ", ".join(quote_ident(c) for c in columns),
        ", ".join("?" for _ in columns),
    )

    def params(row: Row) -> tuple:
        return tuple(storage_value(row.values.get(c), kinds[c]) for c in columns)

    loaded = 0
    survivors: list[tuple[int, Row]] = []

    def insert_one(index: int, row: Row) -> bool:
        nonlocal loaded
        if mode.kind == "preserveKeys":
            key = row.values.get(pk)
            if not isinstance(key, int):
                _reject(index, row, RowStructureError(f"BadPreservedKey({key!r})"))
                return False
        conn.execute("SAVEPOINT row_insert")
        try:
            conn.execute(sql, params(row))
        except sqlite3.IntegrityError as exc:
            conn.execute("ROLLBACK TO row_insert")
            conn.execute("RELEASE row_insert")
            _reject(index, row, ConstraintViolation(str(exc)))
            return False
        conn.execute("RELEASE row_insert")
        if mode.kind == "preserveKeys":
            _record_preserved(keymap, all_dbids, row.values[pk])
        loaded += 1
        survivors.append((index, row))
        return True

    def _reject(index: int, row: Row, error) -> None:
        # generateKeys records its mapping before the insert, so a failed
        # row must withdraw it; preserved keys are recorded only after a
        # successful insert and there is nothing to undo here.
        if mode.kind == "generateKeys":
            _discard_row_keys(keymap, mode, all_dbids, row, pk)
        sink.reject(row.ref(), error)

    for offset in range(0, len(rows), batch_size):
        chunk = rows[offset : offset + batch_size]
        if mode.kind == "preserveKeys" and not all(
            isinstance(r.values.get(pk), int) for r in chunk
        ):
            for i, row in enumerate(chunk, start=offset):
                insert_one(i, row)
            continue
        conn.execute("SAVEPOINT chunk_insert")
        try:
            conn.executemany(sql, [params(r) for r in chunk])
        except sqlite3.IntegrityError:
            conn.execute("ROLLBACK TO chunk_insert")
            conn.execute("RELEASE chunk_insert")
            for i, row in enumerate(chunk, start=offset):
                insert_one(i, row)
            continue
        conn.execute("RELEASE chunk_insert")
        if mode.kind == "preserveKeys":
            for row in chunk:
                _record_preserved(keymap, all_dbids, row.values[pk])
        loaded += len(chunk)
        survivors.extend(enumerate(chunk, start=offset))

    if stashed:
        loaded = _resolve_self_references(
            conn, table, mode, keymap, all_dbids, sink, survivors, stashed, loaded
        )
    return loaded


def _resolve_self_references(
    conn, table, mode, keymap, all_dbids, sink, survivors, stashed, loaded
) -> int:
    pk = table.primary_key
    for index, row in survivors:
        kept = stashed.get(index)
        if not kept:
            continue
        updates = {}
        dangling = None
        for column, old in kept.items():
            new = keymap.translate(row.origin.dbid, old)
            if new is None:
                dangling = (column, old)
                break
            updates[column] = new
        if dangling is not None:
            conn.execute(
                f"DELETE FROM {quote_ident(table.name)} "
                f"WHERE {quote_ident(pk)} = ?",
                (row.values[pk],),
            )
            _discard_row_keys(keymap, mode, all_dbids, row, pk)
            loaded -= 1
            column, old = dangling
            sink.reject(
                row.ref(),
                ConstraintViolation(
                    f"MissingMapping({column}={old} dbid={row.origin.dbid})"
                ),
            )
            continue
        for column, new in updates.items():
            conn.execute(
                f"UPDATE {quote_ident(table.name)} SET {quote_ident(column)} = ? "
                f"WHERE {quote_ident(pk)} = ?",
                (new, row.values[pk]),
            )
            row.values[column] = new
    return loaded


@dataclass
class IntegrityReport:
    row_counts: dict[str, int]
    dangling: list[tuple[str, str, int]]
    duplicate_pks: list[tuple[str, int]]

    @property
    def dangling_total(self) -> int:
        return sum(n for _, _, n in self.dangling)

    @property
    def duplicate_total(self) -> int:
        return sum(n for _, n in self.duplicate_pks)

    @property
    def clean(self) -> bool:
        return self.dangling_total == 0 and self.duplicate_total == 0

    def render_text(self) -> str:
        lines = []
        for table in sorted(self.row_counts):
            lines.append(f"{table}: {self.row_counts[table]} rows")
        for table, column, count in self.dangling:
            if count:
                lines.append(f"DANGLING {table}.{column}: {count}")
        for table, count in self.duplicate_pks:
            if count:
                lines.append(f"DUPLICATE PK {table}: {count}")
        lines.append(
            f"dangling FKs: {self.dangling_total}, "
            f"duplicate PKs: {self.duplicate_total}"
        )
        return "\n".join(lines) + "\n"


def verify_target(conn: sqlite3.Connection, schema: SchemaModel) -> IntegrityReport:
    """Check referential integrity and key uniqueness across the target."""
    row_counts = {}
    dangling = []
    duplicate_pks = []
    for name in sorted(schema.tables):
        table = schema.tables[name]
        qt = quote_ident(name)
        row_counts[name] = conn.execute(f"SELECT COUNT(*) FROM {qt}").fetchone()[0]
        qpk = quote_ident(table.primary_key)
        dup = conn.execute(
            f"SELECT COUNT(*) FROM (SELECT {qpk} FROM {qt} "
            f"GROUP BY {qpk} HAVING COUNT(*) > 1)"
        ).fetchone()[0]
        duplicate_pks.append((name, dup))
        for fk in table.foreign_keys:
            qc = quote_ident(fk.from_column)
            count = conn.execute(
                f"SELECT COUNT(*) FROM {qt} c WHERE c.{qc} IS NOT NULL "
                f"AND NOT EXISTS (SELECT 1 FROM {quote_ident(fk.to_table)} p "
                f"WHERE p.{quote_ident(fk.to_column)} = c.{qc})"
            ).fetchone()[0]
            dangling.append((name, fk.from_column, count))
    return IntegrityReport(
        row_counts=row_counts, dangling=dangling, duplicate_pks=duplicate_pks
    )
