"""Plan compilation: turn a validated config into an ordered step list.

Order follows populate-by-priority: tables without FK dependencies first,
every table after all tables it references, ties broken by name. The
discriminator table is pinned to the front since consolidated rows from
every source are stamped with its keys. Beyond FK edges, a step also waits
for lookup tables its joinLookup rules use and for the table a split-fed
step receives rows from.

Compilation also statically walks each rule chain against the schemas so
missing columns, misdirected key remaps, and uncovered FK columns fail
before any row moves.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import ExtractSpec, MigrationConfig, TableConfig
from .errors import ConfigValidationError, CyclicDependency, UnknownTable
from .loader import DiscriminatorSpec, LoadMode, lookup_value_column
from .rules import JoinLookup, RemapForeignKey, SplitTable, check_rule_chain
from .schema import FkGraph, TableDef, find_cycle
from .sources import DistinctExtractionSpec


@dataclass(frozen=True)
class PlanStep:
    table: str
    kind: str  # "seed" | "lookup" | "migrate"
    depends_on: tuple[str, ...] = ()
    mode: LoadMode | None = None
    rules: tuple = ()
    extract: ExtractSpec | None = None
    lookup: DistinctExtractionSpec | None = None
    split_from: str | None = None


@dataclass(frozen=True)
class MigrationPlan:
    steps: tuple[PlanStep, ...]

    @property
    def order(self) -> list[str]:
        return [s.table for s in self.steps]

    def step(self, table: str) -> PlanStep:
        for s in self.steps:
            if s.table == table:
                return s
        raise KeyError(table)

    def render_text(self) -> str:
        lines = []
        for i, s in enumerate(self.steps, start=1):
            deps = ", ".join(s.depends_on) if s.depends_on else "-"
            detail = s.kind
            if s.kind == "migrate":
                detail = s.mode.kind
                if s.split_from:
                    detail += f", rows split from {s.split_from}"
            lines.append(f"{i}. {s.table} ({detail}) after: {deps}")
        return "\n".join(lines) + "\n"


def _layered_order(nodes: set[str], deps: dict[str, set[str]]) -> list[str]:
    """Sort by (dependency depth, name); raises on a dependency cycle."""
    edges = frozenset(
        (dep, node) for node, node_deps in deps.items() for dep in node_deps
    )
    cycle = find_cycle(FkGraph(tuple(sorted(nodes)), edges, frozenset()))
    if cycle:
        raise CyclicDependency(cycle)
    depths: dict[str, int] = {}

    def depth(name: str) -> int:
        if name in depths:
            return depths[name]
        node_deps = deps.get(name, set())
        value = 0 if not node_deps else 1 + max(depth(d) for d in node_deps)
        depths[name] = value
        return value

    for name in nodes:
        depth(name)
    return sorted(nodes, key=lambda n: (depths[n], n))


def _table_deps(
    table: TableDef, cfg: TableConfig, disc: DiscriminatorSpec | None
) -> set[str]:
    deps = {fk.to_table for fk in table.foreign_keys if fk.to_table != table.name}
    for rule in cfg.rules:
        if isinstance(rule, JoinLookup):
            deps.add(rule.lookup_table)
    if cfg.split_from:
        deps.add(cfg.split_from)
    if disc and table.name != disc.table and table.has_column(disc.column):
        deps.add(disc.table)
    return deps


def _require_identity_pk(table: TableDef, what: str) -> None:
    identity = table.identity_column
    if identity is None or identity.name != table.primary_key:
        raise ConfigValidationError(
            f"{table.name}: {what} needs an identity primary key"
        )


def _split_input_columns(
    cfg: TableConfig, config: MigrationConfig
) -> set[str]:
    producer = config.tables.get(cfg.split_from)
    if producer is None or producer.is_lookup:
        raise ConfigValidationError(
            f"{cfg.name}: splitFrom table {cfg.split_from!r} is not a migrated table"
        )
    for rule in producer.rules:
        if isinstance(rule, SplitTable) and rule.table == cfg.name:
            return {rule.key_column, *rule.columns}
    raise ConfigValidationError(
        f"{cfg.name}: {cfg.split_from!r} has no splitTable rule targeting it"
    )


def _initial_columns(cfg: TableConfig, config: MigrationConfig) -> set[str]:
    if cfg.split_from:
        return _split_input_columns(cfg, config)
    try:
        source_table = config.source_schema.table(cfg.name)
    except UnknownTable:
        raise ConfigValidationError(
            f"{cfg.name}: not present in the source schema"
        ) from None
    if cfg.extract is None:
        return set(source_table.column_names)
    names = set(source_table.column_names)
    for column in cfg.extract.columns or ():
        if column not in names:
            raise ConfigValidationError(
                f"{cfg.name}: extract column {column!r} not in source schema"
            )
    for column in cfg.extract.sort or ():
        if column not in names:
            raise ConfigValidationError(
                f"{cfg.name}: extract sort key {column!r} not in source schema"
            )
    if cfg.extract.predicate and cfg.extract.predicate.column not in names:
        raise ConfigValidationError(
            f"{cfg.name}: extract filter column "
            f"{cfg.extract.predicate.column!r} not in source schema"
        )
    if cfg.extract.columns is None:
        return names
    return set(cfg.extract.columns)


def _check_migrate_step(
    cfg: TableConfig,
    config: MigrationConfig,
    step_tables: set[str],
) -> None:
    target = config.target_schema.table(cfg.name)
    disc = config.discriminator
    _require_identity_pk(target, cfg.mode.kind)

    for fk in target.foreign_keys:
        if fk.to_table != cfg.name and fk.to_table not in step_tables:
            raise ConfigValidationError(
                f"{cfg.name}: references {fk.to_table!r}, which no step loads"
            )

    covered: dict[str, str] = {}
    for rule in cfg.rules:
        if isinstance(rule, RemapForeignKey):
            fk = next(
                (f for f in target.foreign_keys if f.from_column == rule.column), None
            )
            if fk is None:
                raise ConfigValidationError(
                    f"{cfg.name}: remapForeignKey on {rule.column!r}, "
                    "which is not a foreign key column"
                )
            if fk.to_table != rule.table:
                raise ConfigValidationError(
                    f"{cfg.name}: {rule.column!r} references {fk.to_table!r}, "
                    f"not {rule.table!r}"
                )
            if fk.to_table == cfg.name:
                raise ConfigValidationError(
                    f"{cfg.name}: self-references are resolved by the loader, "
                    f"do not remap {rule.column!r}"
                )
            producer_cfg = config.tables.get(rule.table)
            if producer_cfg is None or producer_cfg.is_lookup:
                raise ConfigValidationError(
                    f"{cfg.name}: remap through {rule.table!r} needs that table "
                    "to be a migrated step with a key map"
                )
            covered[rule.column] = "remapForeignKey"
        elif isinstance(rule, JoinLookup):
            lookup_cfg = config.tables.get(rule.lookup_table)
            if lookup_cfg is None or not lookup_cfg.is_lookup:
                raise ConfigValidationError(
                    f"{cfg.name}: joinLookup table {rule.lookup_table!r} "
                    "is not a configured lookup table"
                )
            covered[rule.target_column] = "joinLookup"

    chain_out = check_rule_chain(cfg.rules, _initial_columns(cfg, config))

    expected = set(target.column_names)
    if disc and cfg.name != disc.table and target.has_column(disc.column):
        if disc.column in chain_out:
            raise ConfigValidationError(
                f"{cfg.name}: {disc.column!r} is backfilled from the source tag; "
                "the rule chain must not produce it"
            )
        chain_out = chain_out | {disc.column}
        covered[disc.column] = "discriminator"
    if cfg.split_from and target.primary_key not in chain_out:
        chain_out = chain_out | {target.primary_key}

    if chain_out != expected:
        missing = sorted(expected - chain_out)
        extra = sorted(chain_out - expected)
        problems = []
        if missing:
            problems.append(f"missing {missing}")
        if extra:
            problems.append(f"extra {extra}")
        raise ConfigValidationError(
            f"{cfg.name}: rule chain output does not match the target columns: "
            + ", ".join(problems)
        )

    for fk in target.foreign_keys:
        if fk.to_table == cfg.name:
            continue
        if fk.from_column not in covered:
            raise ConfigValidationError(
                f"{cfg.name}: FK column {fk.from_column!r} has no remapForeignKey, "
                "joinLookup, or discriminator backfill producing it"
            )


def _check_lookup_step(cfg: TableConfig, config: MigrationConfig) -> None:
    target = config.target_schema.table(cfg.name)
    _require_identity_pk(target, "a lookup table")
    lookup_value_column(target)
    for table_name, column in cfg.lookup.source_columns:
        try:
            source_table = config.source_schema.table(table_name)
        except UnknownTable:
            raise ConfigValidationError(
                f"{cfg.name}: lookup source table {table_name!r} "
                "not in source schema"
            ) from None
        if not source_table.has_column(column):
            raise ConfigValidationError(
                f"{cfg.name}: lookup source column {table_name}.{column} missing"
            )
        if source_table.column(column).data_kind != "text":
            raise ConfigValidationError(
                f"{cfg.name}: lookup source column {table_name}.{column} "
                "must be text"
            )


def _validate_explicit_order(
    order: tuple[str, ...], step_tables: set[str], deps: dict[str, set[str]]
) -> list[str]:
    if len(set(order)) != len(order):
        raise ConfigValidationError("stepOrder lists a table twice")
    if set(order) != step_tables:
        missing = sorted(step_tables - set(order))
        extra = sorted(set(order) - step_tables)
        raise ConfigValidationError(
            f"stepOrder must list every step table exactly once "
            f"(missing {missing}, unknown {extra})"
        )
    seen: set[str] = set()
    for table in order:
        late = deps.get(table, set()) - seen
        if late:
            raise ConfigValidationError(
                f"stepOrder places {table!r} before its dependencies {sorted(late)}"
            )
        seen.add(table)
    return list(order)


def compile_plan(config: MigrationConfig) -> MigrationPlan:
    """Validate the config against both schemas and produce the step list."""
    disc = config.discriminator
    step_tables = set(config.tables)
    if disc:
        step_tables.add(disc.table)

    for name in sorted(step_tables):
        try:
            config.target_schema.table(name)
        except UnknownTable:
            raise ConfigValidationError(
                f"{name!r} is not a table of the target schema"
            ) from None
    if disc:
        seed_table = config.target_schema.table(disc.table)
        lookup_value_column(seed_table)
        _require_identity_pk(seed_table, "the discriminator table")

    deps: dict[str, set[str]] = {}
    for name in step_tables:
        if disc and name == disc.table:
            deps[name] = set()
            continue
        cfg = config.tables[name]
        if cfg.is_lookup:
            deps[name] = set()
        else:
            deps[name] = _table_deps(
                config.target_schema.table(name), cfg, disc
            )
    for name, name_deps in deps.items():
        outside = name_deps - step_tables
        if outside:
            raise ConfigValidationError(
                f"{name}: depends on {sorted(outside)}, which no step loads"
            )

    for name in sorted(step_tables):
        if disc and name == disc.table:
            continue
        cfg = config.tables[name]
        if cfg.is_lookup:
            _check_lookup_step(cfg, config)
        else:
            _check_migrate_step(cfg, config, step_tables)

    if config.step_order is not None:
        order = _validate_explicit_order(config.step_order, step_tables, deps)
    else:
        order = _layered_order(step_tables, deps)
        if disc:
            order.remove(disc.table)
            order.insert(0, disc.table)

    steps = []
    for name in order:
        depends_on = tuple(sorted(deps[name]))
        if disc and name == disc.table:
            steps.append(PlanStep(table=name, kind="seed", depends_on=depends_on))
            continue
        cfg = config.tables[name]
        if cfg.is_lookup:
            steps.append(
                PlanStep(
                    table=name,
                    kind="lookup",
                    depends_on=depends_on,
                    lookup=cfg.lookup,
                )
            )
        else:
            steps.append(
                PlanStep(
                    table=name,
                    kind="migrate",
                    depends_on=depends_on,
                    mode=cfg.mode,
                    rules=cfg.rules,
                    extract=cfg.extract,
                    split_from=cfg.split_from,
                )
            )
    return MigrationPlan(steps=tuple(steps))
