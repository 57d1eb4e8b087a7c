"""Declarative per-row transformation rules applied between extract and load.

The catalogue: selectColumns, translateCoded, deriveColumn, filterRows,
sortRows, joinLookup, splitColumn, splitTable, validateRow and
remapForeignKey. Rules are declared per table step in the migration config
as ``rules: [{"kind": ..., ...params}]`` and applied in list order; key
remapping rules must come last in a step so they see final column values.

Surrogate-key generation is not a rule here: it is the generateKeys load
mode (the loader assigns keys at insert time and records them in the
table's key map).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Mapping, Sequence

from .errors import (
    AbortSignal,
    LookupMiss,
    MissingMapping,
    PreconditionError,
    RowError,
    RuleParameterError,
    TransformError,
)
from .expressions import Expression, compile_expression, quantize_result
from .keymap import KeyMap
from .schema import require_keys
from .sources import Predicate, RejectSink, Row, normalize_text, parse_predicate


@dataclass(frozen=True)
class CodeMap:
    """Finite code translation, e.g. {1: "M", 2: "F"} for a gender column.

    Codes are matched by their text form so JSON-declared maps (string
    keys) translate integer source codes. unknownPolicy picks the outcome
    for codes outside the map: rejectRow, mapToNull or abort.
    """

    entries: tuple[tuple[str, object], ...]
    unknown_policy: str = "rejectRow"

    @classmethod
    def from_mapping(cls, mapping: Mapping, unknown_policy: str = "rejectRow") -> "CodeMap":
        if not isinstance(mapping, Mapping) or not mapping:
            raise RuleParameterError("code map must be a non-empty object")
        if unknown_policy not in ("rejectRow", "mapToNull", "abort"):
            raise RuleParameterError(f"bad unknownPolicy {unknown_policy!r}")
        entries = []
        seen = set()
        for code, value in mapping.items():
            key = str(code)
            if key in seen:
                raise RuleParameterError(f"code map: duplicate source code {key!r}")
            seen.add(key)
            entries.append((key, value))
        return cls(entries=tuple(entries), unknown_policy=unknown_policy)

    def find(self, code) -> tuple[bool, object]:
        key = str(code)
        for k, v in self.entries:
            if k == key:
                return True, v
        return False, None


def translate_coded(value, code_map: CodeMap):
    """Translate one coded value; null passes through untranslated."""
    if value is None:
        return None
    known, mapped = code_map.find(value)
    if known:
        return mapped
    if code_map.unknown_policy == "mapToNull":
        return None
    if code_map.unknown_policy == "abort":
        raise AbortSignal(f"unknown code {value!r} with unknownPolicy=abort")
    raise TransformError(f"UnknownCode({value})")


@dataclass(frozen=True)
class ValidationCheck:
    kind: str
    column: str
    minimum: Decimal | None = None
    maximum: Decimal | None = None
    pattern: str | None = None
    values: tuple | None = None

    def failure(self, row_values: Mapping[str, object]) -> str | None:
        value = row_values.get(self.column)
        if self.kind == "notNull":
            return None if value is not None else f"NullViolation({self.column})"
        if value is None:
            return None
        if self.kind == "range":
            if isinstance(value, bool) or not isinstance(value, (int, Decimal)):
                return f"RangeViolation({self.column}={value!r})"
            v = Decimal(value)
            if (self.minimum is not None and v < self.minimum) or (
                self.maximum is not None and v > self.maximum
            ):
                return f"RangeViolation({self.column}={value})"
            return None
        if self.kind == "pattern":
            if not isinstance(value, str) or not re.search(self.pattern, value):
                return f"PatternViolation({self.column})"
            return None
        if value not in self.values:
            return f"AllowedValuesViolation({self.column}={value!r})"
        return None


def validate_row(row: Row, checks: Sequence[ValidationCheck]) -> str | None:
    """Return None when every check holds, else the first failure reason.

    Null values fail only notNull; the other checks skip nulls, matching
    SQL CHECK-constraint semantics.
    """
    for check in checks:
        reason = check.failure(row.values)
        if reason is not None:
            return reason
    return None


@dataclass
class LookupIndex:
    """Resolves free-text values to the ids of a loaded lookup table."""

    table: str
    ids: dict[str, int]
    trim_whitespace: bool = True
    case_fold_key: bool = True

    @classmethod
    def from_entries(
        cls,
        table: str,
        entries: Sequence[tuple[int, str]],
        trim_whitespace: bool = True,
        case_fold_key: bool = True,
    ) -> "LookupIndex":
        ids = {}
        for new_id, original in entries:
            key, _ = normalize_text(original, trim_whitespace, case_fold_key)
            ids[key] = new_id
        return cls(table, ids, trim_whitespace, case_fold_key)

    def find(self, value: str) -> int | None:
        key, _ = normalize_text(value, self.trim_whitespace, self.case_fold_key)
        return self.ids.get(key)


@dataclass
class TransformContext:
    """Shared state a rule chain needs: sealed key maps, lookup indexes,
    the reject sink, and an optional side channel for splitTable rows."""

    sink: RejectSink
    keymaps: dict[str, KeyMap] = field(default_factory=dict)
    lookups: dict[str, LookupIndex] = field(default_factory=dict)
    collect_split_for: str | None = None
    split_rows: list[Row] = field(default_factory=list)


@dataclass(frozen=True)
class SelectColumns:
    kind = "selectColumns"
    columns: tuple[str, ...]

    def check(self, columns: set[str]) -> set[str]:
        missing = set(self.columns) - columns
        if missing:
            raise RuleParameterError(f"selectColumns: unknown columns {sorted(missing)}")
        return set(self.columns)

    def apply(self, rows: list[Row], context: TransformContext) -> list[Row]:
        for row in rows:
            row.values = {c: row.values[c] for c in self.columns}
        return rows


@dataclass(frozen=True)
class TranslateCoded:
    kind = "translateCoded"
    column: str
    code_map: CodeMap

    def check(self, columns: set[str]) -> set[str]:
        if self.column not in columns:
            raise RuleParameterError(f"translateCoded: unknown column {self.column!r}")
        return columns

    def apply(self, rows: list[Row], context: TransformContext) -> list[Row]:
        kept = []
        for row in rows:
            try:
                row.values[self.column] = translate_coded(
                    row.values[self.column], self.code_map
                )
            except RowError as exc:
                context.sink.reject(row.ref(), exc)
                continue
            kept.append(row)
        return kept


@dataclass(frozen=True)
class DeriveColumn:
    kind = "deriveColumn"
    target: str
    expression: Expression
    result_kind: str = "decimal"

    def check(self, columns: set[str]) -> set[str]:
        missing = self.expression.columns - columns
        if missing:
            raise RuleParameterError(
                f"deriveColumn {self.target!r}: unknown columns {sorted(missing)}"
            )
        return columns | {self.target}

    def apply(self, rows: list[Row], context: TransformContext) -> list[Row]:
        kept = []
        for row in rows:
            try:
                value = self.expression.evaluate(row.values)
            except RowError as exc:
                context.sink.reject(row.ref(), exc)
                continue
            row.values[self.target] = quantize_result(value, self.result_kind)
            kept.append(row)
        return kept


@dataclass(frozen=True)
class FilterRows:
    kind = "filterRows"
    predicate: Predicate

    def check(self, columns: set[str]) -> set[str]:
        missing = self.predicate.columns - columns
        if missing:
            raise RuleParameterError(f"filterRows: unknown columns {sorted(missing)}")
        return columns

    def apply(self, rows: list[Row], context: TransformContext) -> list[Row]:
        kept = []
        for row in rows:
            if self.predicate.matches(row.values):
                kept.append(row)
            else:
                context.sink.exclude(
                    row.ref(), f"FilteredOut({self.predicate.source})"
                )
        return kept


@dataclass(frozen=True)
class SortRows:
    kind = "sortRows"
    keys: tuple[tuple[str, bool], ...]

    def check(self, columns: set[str]) -> set[str]:
        missing = {c for c, _ in self.keys} - columns
        if missing:
            raise RuleParameterError(f"sortRows: unknown columns {sorted(missing)}")
        return columns

    def apply(self, rows: list[Row], context: TransformContext) -> list[Row]:
        for column, descending in reversed(self.keys):
            rows.sort(
                key=lambda r, c=column: (r.values.get(c) is not None, r.values.get(c)),
                reverse=descending,
            )
        return rows


@dataclass(frozen=True)
class JoinLookup:
    kind = "joinLookup"
    column: str
    lookup_table: str
    target_column: str

    def check(self, columns: set[str]) -> set[str]:
        if self.column not in columns:
            raise RuleParameterError(f"joinLookup: unknown column {self.column!r}")
        return (columns - {self.column}) | {self.target_column}

    def apply(self, rows: list[Row], context: TransformContext) -> list[Row]:
        index = context.lookups.get(self.lookup_table)
        if index is None:
            raise PreconditionError(
                f"joinLookup: lookup table {self.lookup_table!r} not loaded yet"
            )
        kept = []
        for row in rows:
            raw = row.values.get(self.column)
            if raw is None:
                mapped = None
            else:
                mapped = index.find(str(raw))
                if mapped is None:
                    context.sink.reject(
                        row.ref(), LookupMiss(f"LookupMiss({self.column}={raw!r})")
                    )
                    continue
            row.values = _replace_column(row.values, self.column, self.target_column, mapped)
            kept.append(row)
        return kept


@dataclass(frozen=True)
class SplitColumn:
    kind = "splitColumn"
    column: str
    separator: str
    targets: tuple[str, ...]

    def check(self, columns: set[str]) -> set[str]:
        if self.column not in columns:
            raise RuleParameterError(f"splitColumn: unknown column {self.column!r}")
        return (columns - {self.column}) | set(self.targets)

    def apply(self, rows: list[Row], context: TransformContext) -> list[Row]:
        for row in rows:
            raw = row.values.get(self.column)
            if raw is None:
                parts = [None] * len(self.targets)
            else:
                pieces = str(raw).split(self.separator, len(self.targets) - 1)
                parts = [p.strip() or None for p in pieces]
                parts += [None] * (len(self.targets) - len(parts))
            new = {}
            for key, value in row.values.items():
                if key == self.column:
                    for target, part in zip(self.targets, parts):
                        new[target] = part
                else:
                    new[key] = value
            row.values = new
        return rows


@dataclass(frozen=True)
class SplitTable:
    """Partition each row: moved columns leave for a second target table,
    keyed by the row's extraction key so the two halves re-join exactly."""

    kind = "splitTable"
    table: str
    columns: tuple[str, ...]
    key_column: str

    def check(self, columns: set[str]) -> set[str]:
        missing = set(self.columns) - columns
        if missing:
            raise RuleParameterError(f"splitTable: unknown columns {sorted(missing)}")
        return columns - set(self.columns)

    def apply(self, rows: list[Row], context: TransformContext) -> list[Row]:
        collect = context.collect_split_for == self.table
        for row in rows:
            if collect:
                values = {self.key_column: row.source_key}
                for column in self.columns:
                    values[column] = row.values[column]
                context.split_rows.append(
                    Row(self.table, values, row.origin, row.source_key)
                )
            for column in self.columns:
                del row.values[column]
        return rows


@dataclass(frozen=True)
class ValidateRow:
    kind = "validateRow"
    checks: tuple[ValidationCheck, ...]

    def check(self, columns: set[str]) -> set[str]:
        missing = {c.column for c in self.checks} - columns
        if missing:
            raise RuleParameterError(f"validateRow: unknown columns {sorted(missing)}")
        return columns

    def apply(self, rows: list[Row], context: TransformContext) -> list[Row]:
        kept = []
        for row in rows:
            reason = validate_row(row, self.checks)
            if reason is None:
                kept.append(row)
            else:
                context.sink.reject(row.ref(), TransformError(reason))
        return kept


@dataclass(frozen=True)
class RemapForeignKey:
    kind = "remapForeignKey"
    column: str
    table: str

    def check(self, columns: set[str]) -> set[str]:
        if self.column not in columns:
            raise RuleParameterError(f"remapForeignKey: unknown column {self.column!r}")
        return columns

    def apply(self, rows: list[Row], context: TransformContext) -> list[Row]:
        keymap = context.keymaps.get(self.table)
        if keymap is None:
            raise PreconditionError(
                f"remapForeignKey: no key map for {self.table!r}; "
                "the referenced table must load first"
            )
        return remap_foreign_key(rows, keymap, self.column, context.sink)


def remap_foreign_key(
    rows: list[Row], keymap: KeyMap, column: str, sink: RejectSink
) -> list[Row]:
    """Translate one FK column through a sealed key map; nulls pass through."""
    kept = []
    for row in rows:
        old = row.values.get(column)
        if old is None:
            kept.append(row)
            continue
        new = keymap.lookup(row.origin.dbid, old)
        if new is None:
            sink.reject(
                row.ref(),
                MissingMapping(
                    f"MissingMapping({column}={old} dbid={row.origin.dbid})"
                ),
            )
            continue
        row.values[column] = new
        kept.append(row)
    return kept


def _replace_column(values: dict, old: str, new: str, new_value) -> dict:
    """Swap one column for another in place in the ordered value map."""
    out = {}
    for key, value in values.items():
        if key == old:
            out[new] = new_value
        else:
            out[key] = value
    if old not in values:
        out[new] = new_value
    return out


def join_lookup(
    rows: list[Row],
    index: LookupIndex,
    on: str,
    produce: str,
    sink: RejectSink,
) -> list[Row]:
    """Replace a free-text column with its lookup id (see JoinLookup)."""
    context = TransformContext(sink=sink, lookups={index.table: index})
    return JoinLookup(column=on, lookup_table=index.table, target_column=produce).apply(
        rows, context
    )


_SORT_KEY_RE = re.compile(r"^(-?)([A-Za-z_][A-Za-z0-9_]*)$")

_RULE_KEYS: dict[str, tuple[frozenset[str], tuple[str, ...]]] = {
    "selectColumns": (frozenset({"kind", "columns"}), ("columns",)),
    "translateCoded": (
        frozenset({"kind", "column", "map", "unknownPolicy"}),
        ("column", "map"),
    ),
    "deriveColumn": (
        frozenset({"kind", "target", "expression", "resultKind"}),
        ("target", "expression"),
    ),
    "filterRows": (frozenset({"kind", "predicate"}), ("predicate",)),
    "sortRows": (frozenset({"kind", "keys"}), ("keys",)),
    "joinLookup": (
        frozenset({"kind", "column", "lookupTable", "targetColumn"}),
        ("column", "lookupTable", "targetColumn"),
    ),
    "splitColumn": (
        frozenset({"kind", "column", "separator", "targets"}),
        ("column", "separator", "targets"),
    ),
    "splitTable": (
        frozenset({"kind", "table", "columns", "keyColumn"}),
        ("table", "columns", "keyColumn"),
    ),
    "validateRow": (frozenset({"kind", "checks"}), ("checks",)),
    "remapForeignKey": (frozenset({"kind", "column", "table"}), ("column", "table")),
}

_CHECK_KEYS: dict[str, tuple[frozenset[str], tuple[str, ...]]] = {
    "notNull": (frozenset({"check", "column"}), ()),
    "range": (frozenset({"check", "column", "min", "max"}), ()),
    "pattern": (frozenset({"check", "column", "pattern"}), ("pattern",)),
    "allowedValues": (frozenset({"check", "column", "values"}), ("values",)),
}


def _string_list(value, what: str, minimum: int = 1) -> tuple[str, ...]:
    if (
        not isinstance(value, list)
        or len(value) < minimum
        or not all(isinstance(v, str) and v for v in value)
    ):
        raise RuleParameterError(f"{what}: expected a list of at least {minimum} names")
    return tuple(value)


def _parse_check(doc: Mapping) -> ValidationCheck:
    if not isinstance(doc, Mapping) or "check" not in doc or "column" not in doc:
        raise RuleParameterError(f"bad validation check: {doc!r}")
    kind = doc["check"]
    if kind not in _CHECK_KEYS:
        raise RuleParameterError(f"unknown validation check {kind!r}")
    allowed, required = _CHECK_KEYS[kind]
    try:
        require_keys(doc, allowed, ("check", "column") + required, f"{kind} check")
    except Exception as exc:
        raise RuleParameterError(str(exc)) from None
    column = doc["column"]
    if kind == "notNull":
        return ValidationCheck("notNull", column)
    if kind == "range":
        minimum = doc.get("min")
        maximum = doc.get("max")
        if minimum is None and maximum is None:
            raise RuleParameterError("range check needs min and/or max")
        return ValidationCheck(
            "range",
            column,
            minimum=None if minimum is None else Decimal(str(minimum)),
            maximum=None if maximum is None else Decimal(str(maximum)),
        )
    if kind == "pattern":
        try:
            re.compile(doc["pattern"])
        except re.error as exc:
            raise RuleParameterError(f"bad pattern: {exc}") from None
        return ValidationCheck("pattern", column, pattern=doc["pattern"])
    values = doc["values"]
    if not isinstance(values, list) or not values:
        raise RuleParameterError("allowedValues check needs a non-empty values list")
    return ValidationCheck("allowedValues", column, values=tuple(values))


def parse_rule(doc: Mapping):
    """Build one rule from its config object; unknown keys are rejected."""
    if not isinstance(doc, Mapping) or "kind" not in doc:
        raise RuleParameterError(f"rule must be an object with a 'kind': {doc!r}")
    kind = doc["kind"]
    if kind == "generateSurrogate":
        raise RuleParameterError(
            "surrogate keys are generated by load mode 'generateKeys', "
            "not declared as a rule"
        )
    if kind not in _RULE_KEYS:
        raise RuleParameterError(f"unknown rule kind {kind!r}")
    allowed, required = _RULE_KEYS[kind]
    try:
        require_keys(doc, allowed, ("kind",) + required, f"{kind} rule")
    except Exception as exc:
        raise RuleParameterError(str(exc)) from None

    if kind == "selectColumns":
        return SelectColumns(columns=_string_list(doc["columns"], "selectColumns"))
    if kind == "translateCoded":
        return TranslateCoded(
            column=doc["column"],
            code_map=CodeMap.from_mapping(
                doc["map"], doc.get("unknownPolicy", "rejectRow")
            ),
        )
    if kind == "deriveColumn":
        result_kind = doc.get("resultKind", "decimal")
        if result_kind not in ("decimal", "integer"):
            raise RuleParameterError(f"bad resultKind {result_kind!r}")
        return DeriveColumn(
            target=doc["target"],
            expression=compile_expression(doc["expression"]),
            result_kind=result_kind,
        )
    if kind == "filterRows":
        return FilterRows(predicate=parse_predicate(doc["predicate"]))
    if kind == "sortRows":
        keys = []
        for raw in _string_list(doc["keys"], "sortRows"):
            m = _SORT_KEY_RE.match(raw)
            if not m:
                raise RuleParameterError(f"bad sort key {raw!r}")
            keys.append((m.group(2), m.group(1) == "-"))
        return SortRows(keys=tuple(keys))
    if kind == "joinLookup":
        return JoinLookup(
            column=doc["column"],
            lookup_table=doc["lookupTable"],
            target_column=doc["targetColumn"],
        )
    if kind == "splitColumn":
        separator = doc["separator"]
        if not isinstance(separator, str) or not separator:
            raise RuleParameterError("splitColumn: separator must be a non-empty string")
        return SplitColumn(
            column=doc["column"],
            separator=separator,
            targets=_string_list(doc["targets"], "splitColumn targets", minimum=2),
        )
    if kind == "splitTable":
        return SplitTable(
            table=doc["table"],
            columns=_string_list(doc["columns"], "splitTable columns"),
            key_column=doc["keyColumn"],
        )
    if kind == "validateRow":
        checks = doc["checks"]
        if not isinstance(checks, list) or not checks:
            raise RuleParameterError("validateRow needs a non-empty checks list")
        return ValidateRow(checks=tuple(_parse_check(c) for c in checks))
    return RemapForeignKey(column=doc["column"], table=doc["table"])


def apply_rule(rule, rows: list[Row], context: TransformContext) -> list[Row]:
    """Apply one rule to a materialized row list."""
    return rule.apply(rows, context)


def apply_rules(rules: Sequence, rows: list[Row], context: TransformContext) -> list[Row]:
    """Apply a rule chain in declared order."""
    for rule in rules:
        rows = rule.apply(rows, context)
    return rows


def check_rule_chain(rules: Sequence, columns: set[str]) -> set[str]:
    """Statically walk a rule chain, returning the post-chain column set.

    Raises RuleParameterError when a rule references a column its
    predecessors did not provide, or when a remapForeignKey rule is
    followed by a rule of any other kind.
    """
    seen_remap = False
    for rule in rules:
        if seen_remap and rule.kind != "remapForeignKey":
            raise RuleParameterError(
                f"{rule.kind} rule after remapForeignKey; key remapping must come last"
            )
        if rule.kind == "remapForeignKey":
            seen_remap = True
        columns = rule.check(columns)
    return columns
