"""Tagged source databases: row extraction and distinct-value scans.

Every row read from a source carries the source's tag (dbid + label) so
later stages can translate its keys and stamp its discriminator. Values
are coerced to canonical Python forms at the boundary: integers stay int,
decimals become Decimal, dates become ISO text, booleans become 0/1.
Rows that cannot be coerced are diverted to the reject sink, never loaded.
"""

from __future__ import annotations

import re
import sqlite3
from dataclasses import dataclass
from datetime import date
from decimal import Decimal, InvalidOperation
from typing import Iterator, Sequence

from .errors import (
    AbortSignal,
    ConfigValidationError,
    ConnectionFailed,
    RowError,
    RowStructureError,
    RuleParameterError,
    UnknownColumn,
    UnknownTable,
)
from .schema import SchemaModel, TableDef


def quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


@dataclass(frozen=True)
class SourceTag:
    """Identifies one legacy database; dbid ends up in mapping tables."""

    dbid: int
    label: str

    def __post_init__(self):
        if self.dbid < 1:
            raise ConfigValidationError(f"source dbid must be >= 1, got {self.dbid}")
        if not self.label:
            raise ConfigValidationError("source label must be non-empty")


@dataclass
class Row:
    """One record in flight between extract and load."""

    table: str
    values: dict[str, object]
    origin: SourceTag
    source_key: int | None = None

    def ref(self) -> str:
        return f"{self.table}[dbid={self.origin.dbid} key={self.source_key}]"

    def clone(self) -> "Row":
        return Row(self.table, dict(self.values), self.origin, self.source_key)


class RejectSink:
    """Collects per-row rejections and enforces the configured error policy.

    reject() escalates to AbortSignal under the abort policy; exclude()
    records intentional filter exclusions, which never escalate.
    """

    def __init__(self, policy: str = "rejectRow"):
        if policy not in ("rejectRow", "abort"):
            raise ConfigValidationError(
                f"policy must be 'rejectRow' or 'abort', got {policy!r}"
            )
        self.policy = policy
        self.rejects: list[tuple[str, str]] = []

    def __len__(self) -> int:
        return len(self.rejects)

    def reject(self, row_ref: str, error: RowError) -> None:
        if self.policy == "abort":
            raise AbortSignal(f"{row_ref}: {error.reason}") from error
        self.rejects.append((row_ref, error.reason))

    def exclude(self, row_ref: str, reason: str) -> None:
        self.rejects.append((row_ref, reason))


@dataclass
class Source:
    """An open, read-only connection to one tagged legacy database."""

    tag: SourceTag
    conn: sqlite3.Connection

    @classmethod
    def open(cls, path: str, tag: SourceTag) -> "Source":
        try:
            conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
            conn.execute("SELECT 1")
        except sqlite3.Error as exc:
            raise ConnectionFailed(f"cannot open source {path!r}: {exc}") from exc
        return cls(tag=tag, conn=conn)

    def close(self) -> None:
        self.conn.close()


def coerce_value(value, data_kind: str, table: str, column: str):
    """Coerce one scalar to its declared kind's canonical Python form."""
    if value is None:
        return None
    try:
        if data_kind == "integer":
            if isinstance(value, bool):
                return int(value)
            if isinstance(value, int):
                return value
            if isinstance(value, str) and re.fullmatch(r"-?\d+", value.strip()):
                return int(value)
        elif data_kind == "decimal":
            if isinstance(value, Decimal):
                return value
            if isinstance(value, bool):
                raise InvalidOperation
            if isinstance(value, (int, str)):
                return Decimal(str(value).strip())
            if isinstance(value, float):
                return Decimal(str(value))
        elif data_kind == "text":
            if isinstance(value, str):
                return value
        elif data_kind == "date":
            if isinstance(value, str):
                return date.fromisoformat(value.strip()).isoformat()
        elif data_kind == "boolean":
            if isinstance(value, bool):
                return int(value)
            if isinstance(value, int) and value in (0, 1):
                return value
    except (InvalidOperation, ValueError):
        pass
    raise RowStructureError(f"BadValue({table}.{column}: {value!r} is not {data_kind})")


_IDENT_RE = r"[A-Za-z_][A-Za-z0-9_]*"
_NULL_RE = re.compile(rf"\s*({_IDENT_RE})\s+IS\s+(NOT\s+)?NULL\s*$", re.IGNORECASE)
_CMP_RE = re.compile(rf"\s*({_IDENT_RE})\s*(=|!=|<>|<=|>=|<|>)\s*(.+?)\s*$")
_STR_LIT_RE = re.compile(r"'((?:[^']|'')*)'$")
_INT_LIT_RE = re.compile(r"-?\d+$")
_DEC_LIT_RE = re.compile(r"-?\d+\.\d+$")


@dataclass(frozen=True)
class Predicate:
    """A single comparison over one row column, e.g. "Year = 2010".

    Supported forms: <column> <op> <literal> with ops = != <> < <= > >=,
    and <column> IS [NOT] NULL. Literals are integers, decimals, or
    single-quoted strings. Null operands make any comparison false.
    """

    source: str
    column: str
    op: str
    literal: object = None

    @property
    def columns(self) -> frozenset:
        return frozenset({self.column})

    def matches(self, values: dict[str, object]) -> bool:
        value = values.get(self.column)
        if self.op == "isnull":
            return value is None
        if self.op == "notnull":
            return value is not None
        if value is None:
            return False
        lit = self.literal
        if isinstance(lit, (int, Decimal)):
            if isinstance(value, bool):
                value = int(value)
            if not isinstance(value, (int, Decimal)):
                return False
            left, right = Decimal(value), Decimal(lit)
        else:
            if not isinstance(value, str):
                return False
            left, right = value, lit
        if self.op == "=":
            return left == right
        if self.op in ("!=", "<>"):
            return left != right
        if self.op == "<":
            return left < right
        if self.op == "<=":
            return left <= right
        if self.op == ">":
            return left > right
        return left >= right


def parse_predicate(text: str) -> Predicate:
    m = _NULL_RE.fullmatch(text)
    if m:
        op = "notnull" if m.group(2) else "isnull"
        return Predicate(source=text, column=m.group(1), op=op)
    m = _CMP_RE.fullmatch(text)
    if m:
        column, op, raw = m.group(1), m.group(2), m.group(3)
        s = _STR_LIT_RE.fullmatch(raw)
        if s:
            return Predicate(text, column, op, s.group(1).replace("''", "'"))
        if _INT_LIT_RE.fullmatch(raw):
            return Predicate(text, column, op, int(raw))
        if _DEC_LIT_RE.fullmatch(raw):
            return Predicate(text, column, op, Decimal(raw))
        raise RuleParameterError(f"bad literal in predicate: {raw!r}")
    raise RuleParameterError(f"cannot parse predicate: {text!r}")


def _table_exists(conn: sqlite3.Connection, name: str) -> bool:
    row = conn.execute(
        "SELECT 1 FROM sqlite_master WHERE type='table' AND name=?", (name,)
    ).fetchone()
    return row is not None


def extract_table(
    source: Source,
    table: TableDef,
    selection: Sequence[str] | None = None,
    predicate: Predicate | None = None,
    sort: Sequence[str] | None = None,
    sink: RejectSink | None = None,
) -> Iterator[Row]:
    """Stream one source table as tagged Rows in a deterministic order.

    Rows whose values cannot be coerced to their declared kinds go to the
    sink as RowStructureError; rows failing the predicate are excluded via
    the sink's non-escalating channel. Without a sink, row problems raise.
    """
    if not _table_exists(source.conn, table.name):
        raise UnknownTable(f"{table.name!r} missing from source {source.tag.label!r}")
    declared = {c.name: c for c in table.columns}
    columns = list(selection) if selection is not None else [c.name for c in table.columns]
    for name in columns:
        if name not in declared:
            raise UnknownColumn(f"{table.name}.{name} not in source schema")
    for name in sort or []:
        if name not in declared:
            raise UnknownColumn(f"sort key {table.name}.{name} not in source schema")
    if predicate is not None and predicate.column not in declared:
        raise UnknownColumn(
            f"predicate column {table.name}.{predicate.column} not in source schema"
        )

    fetch = list(columns)
    if table.primary_key not in fetch:
        fetch.insert(0, table.primary_key)
    order_cols = list(sort) if sort else [table.primary_key]
    sql = "SELECT {} FROM {} ORDER BY {}".format(
        ", ".join(quote_ident(c) for c in fetch),
        quote_ident(table.name),
        ", ".join(quote_ident(c) for c in order_cols),
    )
    for raw in source.conn.execute(sql):
        raw_map = dict(zip(fetch, raw))
        key = raw_map.get(table.primary_key)
        ref = f"{table.name}[dbid={source.tag.dbid} key={key}]"
        try:
            values = {
                name: coerce_value(raw_map[name], declared[name].data_kind, table.name, name)
                for name in columns
            }
        except RowError as exc:
            if sink is None:
                raise
            sink.reject(ref, exc)
            continue
        row = Row(
            table=table.name,
            values=values,
            origin=source.tag,
            source_key=key if isinstance(key, int) else None,
        )
        if predicate is not None and not predicate.matches(row.values):
            if sink is None:
                continue
            sink.exclude(ref, f"FilteredOut({predicate.source})")
            continue
        yield row


def normalize_text(value: str, trim_whitespace: bool, case_fold_key: bool) -> tuple[str, str]:
    """Return (dedup key, preserved original) for one raw free-text value."""
    original = value.strip() if trim_whitespace else value
    key = original.casefold() if case_fold_key else original
    return key, original


@dataclass(frozen=True)
class DistinctExtractionSpec:
    """Scan free-text columns across all sources to build one lookup table."""

    source_columns: tuple[tuple[str, str], ...]
    target_lookup_table: str
    trim_whitespace: bool = True
    case_fold_key: bool = True

    def __post_init__(self):
        if not self.source_columns:
            raise ConfigValidationError("distinct extraction needs source columns")

    def normalize(self, value: str) -> tuple[str, str]:
        return normalize_text(value, self.trim_whitespace, self.case_fold_key)


@dataclass
class DistinctResult:
    entries: list[tuple[int, str]]
    excluded: int
    scanned: int


def extract_distinct(
    sources: Sequence[Source],
    spec: DistinctExtractionSpec,
    schema: SchemaModel,
) -> DistinctResult:
    """Collect distinct normalized values across all sources.

    Entries are numbered 1..n in ascending key order so reruns over
    reordered sources produce identical lookup tables; the preserved
    original is the first-seen form (source-tag order, then row order).
    Null and empty-after-trim values are excluded and counted.
    """
    for table_name, column in spec.source_columns:
        table = schema.table(table_name)
        if not table.has_column(column):
            raise UnknownColumn(f"{table_name}.{column} not in source schema")
        kind = table.column(column).data_kind
        if kind != "text":
            raise ConfigValidationError(
                f"distinct extraction needs a text column, {table_name}.{column} "
                f"is {kind}"
            )
    first_seen: dict[str, str] = {}
    excluded = 0
    scanned = 0
    for source in sorted(sources, key=lambda s: s.tag.dbid):
        for table_name, column in spec.source_columns:
            table = schema.table(table_name)
            if not _table_exists(source.conn, table_name):
                raise UnknownTable(
                    f"{table_name!r} missing from source {source.tag.label!r}"
                )
            sql = "SELECT {} FROM {} ORDER BY {}".format(
                quote_ident(column),
                quote_ident(table_name),
                quote_ident(table.primary_key),
            )
            for (value,) in source.conn.execute(sql):
                scanned += 1
                if value is None:
                    excluded += 1
                    continue
                key, original = spec.normalize(str(value))
                if not key:
                    excluded += 1
                    continue
                if key not in first_seen:
                    first_seen[key] = original
    entries = [
        (new_id, first_seen[key])
        for new_id, key in enumerate(sorted(first_seen), start=1)
    ]
    return DistinctResult(entries=entries, excluded=excluded, scanned=scanned)
