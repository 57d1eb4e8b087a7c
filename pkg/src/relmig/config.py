"""Migration config: one JSON document declaring sources, target, schemas,
per-table modes and rule chains, and the error policy.

Shape (paths are resolved relative to the config file):

    {
      "sources": [{"dbid": 1, "label": "graduate", "path": "a.db"}, ...],
      "target": {"path": "target.db"},
      "sourceSchema": "source_schema.json",
      "targetSchema": "target_schema.json",
      "policy": "rejectRow",                       // or "abort"
      "batchSize": 500,
      "discriminator": {"table": "StudyCycle", "column": "StudyCycleID",
                        "valueBySource": {"1": 1, "2": 2, "3": 3}},
      "stepOrder": ["StudyCycle", ...],            // optional override
      "tables": {
        "Faculty":     {"mode": {"kind": "preserveKeys", "source": 1}},
        "Nationality": {"lookup": {"sourceColumns": [["Student", "Nationality"]]}},
        "Student":     {"mode": {"kind": "generateKeys"},
                        "extract": {"columns": [...], "filter": "...", "sort": [...]},
                        "rules": [...]},
        "StudentExtra": {"mode": {"kind": "generateKeys"},
                         "rowSource": {"splitFrom": "Student"}, "rules": [...]}
      }
    }

Unknown keys anywhere are rejected so typos fail fast.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import ConfigValidationError, MalformedDocument
from .loader import DEFAULT_BATCH_SIZE, DiscriminatorSpec, LoadMode
from .rules import parse_rule
from .schema import SchemaModel, load_schema, require_keys
from .sources import DistinctExtractionSpec, Predicate, SourceTag, parse_predicate

_TOP_KEYS = frozenset(
    {
        "sources",
        "target",
        "sourceSchema",
        "targetSchema",
        "policy",
        "batchSize",
        "discriminator",
        "stepOrder",
        "tables",
    }
)
_SOURCE_KEYS = frozenset({"dbid", "label", "path"})
_TARGET_KEYS = frozenset({"path"})
_DISC_KEYS = frozenset({"table", "column", "valueBySource"})
_TABLE_KEYS = frozenset({"mode", "rules", "extract", "lookup", "rowSource"})
_MODE_KEYS = frozenset({"kind", "source"})
_EXTRACT_KEYS = frozenset({"columns", "filter", "sort"})
_LOOKUP_KEYS = frozenset({"sourceColumns", "trimWhitespace", "caseFoldKey"})
_ROWSOURCE_KEYS = frozenset({"splitFrom"})


def _check(obj, allowed, required, what):
    try:
        require_keys(obj, allowed, required, what)
    except MalformedDocument as exc:
        raise ConfigValidationError(str(exc)) from None


@dataclass(frozen=True)
class SourceConfig:
    tag: SourceTag
    path: str


@dataclass(frozen=True)
class ExtractSpec:
    columns: tuple[str, ...] | None = None
    predicate: Predicate | None = None
    sort: tuple[str, ...] | None = None


@dataclass(frozen=True)
class TableConfig:
    name: str
    mode: LoadMode | None = None
    rules: tuple = ()
    extract: ExtractSpec | None = None
    lookup: DistinctExtractionSpec | None = None
    split_from: str | None = None

    @property
    def is_lookup(self) -> bool:
        return self.lookup is not None


@dataclass(frozen=True)
class MigrationConfig:
    sources: tuple[SourceConfig, ...]
    target_path: str
    source_schema: SchemaModel
    target_schema: SchemaModel
    tables: dict[str, TableConfig]
    policy: str = "rejectRow"
    batch_size: int = DEFAULT_BATCH_SIZE
    discriminator: DiscriminatorSpec | None = None
    step_order: tuple[str, ...] | None = None

    @property
    def dbids(self) -> list[int]:
        return [s.tag.dbid for s in self.sources]

    def source_by_dbid(self, dbid: int) -> SourceConfig:
        for s in self.sources:
            if s.tag.dbid == dbid:
                return s
        raise ConfigValidationError(f"no configured source with dbid {dbid}")


def _parse_sources(raw, base: Path) -> tuple[SourceConfig, ...]:
    if not isinstance(raw, list) or not raw:
        raise ConfigValidationError("'sources' must be a non-empty array")
    sources = []
    seen = set()
    for entry in raw:
        _check(entry, _SOURCE_KEYS, ("dbid", "label", "path"), "source entry")
        dbid = entry["dbid"]
        if not isinstance(dbid, int) or isinstance(dbid, bool):
            raise ConfigValidationError(f"source dbid must be an integer: {dbid!r}")
        if dbid in seen:
            raise ConfigValidationError(f"duplicate source dbid {dbid}")
        seen.add(dbid)
        sources.append(
            SourceConfig(
                tag=SourceTag(dbid=dbid, label=entry["label"]),
                path=str(base / entry["path"]),
            )
        )
    return tuple(sources)


def _parse_discriminator(raw, dbids: list[int]) -> DiscriminatorSpec:
    _check(raw, _DISC_KEYS, ("table", "column", "valueBySource"), "discriminator")
    mapping = raw["valueBySource"]
    if not isinstance(mapping, Mapping) or not mapping:
        raise ConfigValidationError("discriminator valueBySource must be a non-empty object")
    value_by_source = {}
    for key, value in mapping.items():
        try:
            dbid = int(key)
        except (TypeError, ValueError):
            raise ConfigValidationError(
                f"discriminator valueBySource key {key!r} is not a dbid"
            ) from None
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigValidationError(
                f"discriminator value for dbid {dbid} must be an integer"
            )
        value_by_source[dbid] = value
    missing = set(dbids) - set(value_by_source)
    if missing:
        raise ConfigValidationError(
            f"discriminator valueBySource misses source dbids {sorted(missing)}"
        )
    return DiscriminatorSpec(
        table=raw["table"], column=raw["column"], value_by_source=value_by_source
    )


def _parse_mode(raw, dbids: list[int], table: str) -> LoadMode:
    _check(raw, _MODE_KEYS, ("kind",), f"mode of {table!r}")
    kind = raw["kind"]
    if kind == "preserveKeys":
        if "source" not in raw:
            raise ConfigValidationError(
                f"{table}: preserveKeys needs its designated 'source' dbid"
            )
        source = raw["source"]
        if source not in dbids:
            raise ConfigValidationError(
                f"{table}: preserveKeys source dbid {source!r} is not configured"
            )
        return LoadMode(kind="preserveKeys", source_dbid=source)
    if "source" in raw:
        raise ConfigValidationError(f"{table}: generateKeys takes no 'source'")
    return LoadMode(kind=kind)


def _parse_extract(raw, table: str) -> ExtractSpec:
    _check(raw, _EXTRACT_KEYS, (), f"extract of {table!r}")
    columns = raw.get("columns")
    if columns is not None:
        if not isinstance(columns, list) or not columns:
            raise ConfigValidationError(f"{table}: extract columns must be a non-empty list")
        columns = tuple(columns)
    sort = raw.get("sort")
    if sort is not None:
        if not isinstance(sort, list) or not sort:
            raise ConfigValidationError(f"{table}: extract sort must be a non-empty list")
        sort = tuple(sort)
    predicate = None
    if raw.get("filter") is not None:
        predicate = parse_predicate(raw["filter"])
    return ExtractSpec(columns=columns, predicate=predicate, sort=sort)


def _parse_lookup(raw, table: str) -> DistinctExtractionSpec:
    _check(raw, _LOOKUP_KEYS, ("sourceColumns",), f"lookup of {table!r}")
    raw_cols = raw["sourceColumns"]
    if not isinstance(raw_cols, list) or not raw_cols:
        raise ConfigValidationError(f"{table}: lookup sourceColumns must be non-empty")
    source_columns = []
    for pair in raw_cols:
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or not all(isinstance(p, str) for p in pair)
        ):
            raise ConfigValidationError(
                f"{table}: each lookup source column is a [table, column] pair"
            )
        source_columns.append((pair[0], pair[1]))
    return DistinctExtractionSpec(
        source_columns=tuple(source_columns),
        target_lookup_table=table,
        trim_whitespace=bool(raw.get("trimWhitespace", True)),
        case_fold_key=bool(raw.get("caseFoldKey", True)),
    )


def _parse_table(name: str, raw, dbids: list[int]) -> TableConfig:
    _check(raw, _TABLE_KEYS, (), f"table {name!r}")
    if "lookup" in raw:
        extra = set(raw) - {"lookup"}
        if extra:
            raise ConfigValidationError(
                f"{name}: a lookup table takes no other settings, got {sorted(extra)}"
            )
        return TableConfig(name=name, lookup=_parse_lookup(raw["lookup"], name))
    if "mode" not in raw:
        raise ConfigValidationError(f"{name}: needs a 'mode' (or a 'lookup')")
    mode = _parse_mode(raw["mode"], dbids, name)
    rules = tuple(parse_rule(r) for r in raw.get("rules", []))
    extract = _parse_extract(raw["extract"], name) if "extract" in raw else None
    split_from = None
    if "rowSource" in raw:
        _check(raw["rowSource"], _ROWSOURCE_KEYS, ("splitFrom",), f"rowSource of {name!r}")
        split_from = raw["rowSource"]["splitFrom"]
        if extract is not None:
            raise ConfigValidationError(
                f"{name}: a split-fed table takes no extract settings"
            )
    return TableConfig(
        name=name,
        mode=mode,
        rules=rules,
        extract=extract,
        split_from=split_from,
    )


def parse_config(doc: Mapping, base: Path) -> MigrationConfig:
    _check(
        doc,
        _TOP_KEYS,
        ("sources", "target", "sourceSchema", "targetSchema", "tables"),
        "config document",
    )
    sources = _parse_sources(doc["sources"], base)
    dbids = [s.tag.dbid for s in sources]
    _check(doc["target"], _TARGET_KEYS, ("path",), "target")

    policy = doc.get("policy", "rejectRow")
    if policy not in ("rejectRow", "abort"):
        raise ConfigValidationError(f"policy must be 'rejectRow' or 'abort': {policy!r}")
    batch_size = doc.get("batchSize", DEFAULT_BATCH_SIZE)
    if not isinstance(batch_size, int) or isinstance(batch_size, bool) or batch_size < 1:
        raise ConfigValidationError(f"batchSize must be a positive integer: {batch_size!r}")

    source_schema = load_schema(base / doc["sourceSchema"])
    target_schema = load_schema(base / doc["targetSchema"])

    raw_tables = doc["tables"]
    if not isinstance(raw_tables, Mapping) or not raw_tables:
        raise ConfigValidationError("'tables' must be a non-empty object")
    tables = {
        name: _parse_table(name, raw, dbids) for name, raw in raw_tables.items()
    }

    discriminator = None
    if doc.get("discriminator") is not None:
        discriminator = _parse_discriminator(doc["discriminator"], dbids)
        if discriminator.table in tables:
            raise ConfigValidationError(
                f"discriminator table {discriminator.table!r} is seeded automatically; "
                "do not configure it under 'tables'"
            )

    step_order = None
    if doc.get("stepOrder") is not None:
        raw_order = doc["stepOrder"]
        if not isinstance(raw_order, list) or not all(
            isinstance(t, str) for t in raw_order
        ):
            raise ConfigValidationError("stepOrder must be a list of table names")
        step_order = tuple(raw_order)

    return MigrationConfig(
        sources=sources,
        target_path=str(base / doc["target"]["path"]),
        source_schema=source_schema,
        target_schema=target_schema,
        tables=tables,
        policy=policy,
        batch_size=batch_size,
        discriminator=discriminator,
        step_order=step_order,
    )


def load_config(path: str | Path) -> MigrationConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigValidationError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigValidationError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc, path.resolve().parent)
