"""Step execution: extract, transform, and load each plan step in order.

Each step is one target-database transaction: its rows, its persisted key
map, and its completion mark in the ``_mig_state`` progress table commit
together. A failed or aborted step rolls back completely while prior
steps stay committed, so a rerun of the same config resumes right after
the last completed step (key maps and lookup indexes are rebuilt from the
target database as needed).

Rows are extracted and transformed outside the write transaction, so with
``jobs`` > 1 independent steps overlap their source reads while target
writes stay serialized by the database.
"""

from __future__ import annotations

import concurrent.futures
import logging
import sqlite3
import threading
import time
from dataclasses import dataclass, field

from .config import MigrationConfig
from .errors import AbortSignal, MigrationError
from .keymap import KeyMap, drop_keymaps, load_keymap, persist_keymap
from .loader import (
    IntegrityReport,
    LoadReport,
    TableCounts,
    backfill_discriminator,
    connect_target,
    load_table,
    lookup_value_column,
    seed_discriminator,
    verify_target,
)
from .plan import MigrationPlan, PlanStep, compile_plan
from .rules import (
    JoinLookup,
    LookupIndex,
    RemapForeignKey,
    SplitTable,
    TransformContext,
)
from .schema import TableDef
from .sources import (
    RejectSink,
    Row,
    Source,
    extract_distinct,
    extract_table,
    quote_ident,
)

log = logging.getLogger("relmig")

STATE_TABLE = "_mig_state"


@dataclass
class RunOutcome:
    report: LoadReport
    integrity: IntegrityReport | None = None

    @property
    def ok(self) -> bool:
        if self.report.aborted:
            return False
        return self.integrity is None or self.integrity.clean


def _ensure_state_table(conn: sqlite3.Connection) -> None:
    conn.execute(
        f'CREATE TABLE IF NOT EXISTS "{STATE_TABLE}" '
        "(step TEXT PRIMARY KEY, completed_at TEXT NOT NULL)"
    )


def _completed_steps(conn: sqlite3.Connection) -> set[str]:
    return {r[0] for r in conn.execute(f'SELECT step FROM "{STATE_TABLE}"')}


def _mark_done(conn: sqlite3.Connection, step: str) -> None:
    conn.execute(
        f'INSERT OR REPLACE INTO "{STATE_TABLE}" (step, completed_at) '
        "VALUES (?, datetime('now'))",
        (step,),
    )


@dataclass
class _RunState:
    config: MigrationConfig
    plan: MigrationPlan
    report: LoadReport
    keymaps: dict[str, KeyMap] = field(default_factory=dict)
    lookups: dict[str, LookupIndex] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _open_target(config: MigrationConfig) -> sqlite3.Connection:
    conn = connect_target(config.target_path)
    conn.isolation_level = None
    conn.execute("PRAGMA busy_timeout = 60000")
    return conn


def _open_sources(config: MigrationConfig) -> list[Source]:
    return [
        Source.open(s.path, s.tag)
        for s in sorted(config.sources, key=lambda s: s.tag.dbid)
    ]


def _get_keymap(state: _RunState, conn: sqlite3.Connection, table: str) -> KeyMap:
    with state.lock:
        keymap = state.keymaps.get(table)
        if keymap is None:
            keymap = load_keymap(conn, table)
            state.keymaps[table] = keymap
        return keymap


def _get_lookup(state: _RunState, conn: sqlite3.Connection, table: str) -> LookupIndex:
    with state.lock:
        index = state.lookups.get(table)
        if index is not None:
            return index
        spec = state.config.tables[table].lookup
        target = state.config.target_schema.table(table)
        value_col = lookup_value_column(target)
        entries = conn.execute(
            "SELECT {}, {} FROM {} ORDER BY 1".format(
                quote_ident(target.primary_key),
                quote_ident(value_col),
                quote_ident(table),
            )
        ).fetchall()
        index = LookupIndex.from_entries(
            table, entries, spec.trim_whitespace, spec.case_fold_key
        )
        state.lookups[table] = index
        return index


def _build_context(
    state: _RunState,
    conn: sqlite3.Connection,
    rules,
    sink: RejectSink,
    collect_split_for: str | None = None,
) -> TransformContext:
    context = TransformContext(sink=sink, collect_split_for=collect_split_for)
    for rule in rules:
        if isinstance(rule, RemapForeignKey):
            context.keymaps[rule.table] = _get_keymap(state, conn, rule.table)
        elif isinstance(rule, JoinLookup):
            context.lookups[rule.lookup_table] = _get_lookup(
                state, conn, rule.lookup_table
            )
    return context


def _extract_step_rows(
    state: _RunState, sources: list[Source], step: PlanStep, sink: RejectSink
) -> tuple[list[Row], int]:
    """All input rows for a migrate step, plus the exact extracted count
    (emitted rows plus rows the extractor diverted to the sink)."""
    config = state.config
    source_table = config.source_schema.table(step.table)
    if step.mode.kind == "preserveKeys":
        chosen = [s for s in sources if s.tag.dbid == step.mode.source_dbid]
    else:
        chosen = sources
    extract = step.extract
    rows: list[Row] = []
    before = len(sink)
    for source in chosen:
        rows.extend(
            extract_table(
                source,
                source_table,
                selection=extract.columns if extract else None,
                predicate=extract.predicate if extract else None,
                sort=extract.sort if extract else None,
                sink=sink,
            )
        )
    return rows, len(rows) + (len(sink) - before)


def _replay_split_rows(
    state: _RunState,
    conn: sqlite3.Connection,
    sources: list[Source],
    step: PlanStep,
) -> list[Row]:
    """Re-derive a split-fed step's input by replaying its producer's rule
    prefix; producer-side rejects were already accounted in the producer's
    own step, so they go to a throwaway sink here."""
    producer = state.plan.step(step.split_from)
    throwaway = RejectSink("rejectRow")
    prefix = []
    for rule in producer.rules:
        prefix.append(rule)
        if isinstance(rule, SplitTable) and rule.table == step.table:
            break
    context = _build_context(
        state, conn, prefix, throwaway, collect_split_for=step.table
    )
    rows, _ = _extract_step_rows(state, sources, producer, throwaway)
    for rule in prefix:
        rows = rule.apply(rows, context)
    return context.split_rows


def _run_seed(state: _RunState, conn, step: PlanStep, counts: TableCounts) -> None:
    config = state.config
    n = seed_discriminator(
        conn,
        config.discriminator,
        [s.tag for s in config.sources],
        config.target_schema.table(step.table),
    )
    counts.extracted = counts.transformed = counts.loaded = n


def _run_lookup(
    state: _RunState, conn, sources: list[Source], step: PlanStep, counts: TableCounts
) -> None:
    config = state.config
    result = extract_distinct(sources, step.lookup, config.source_schema)
    target = config.target_schema.table(step.table)
    value_col = lookup_value_column(target)
    conn.executemany(
        "INSERT INTO {} ({}, {}) VALUES (?, ?)".format(
            quote_ident(step.table),
            quote_ident(target.primary_key),
            quote_ident(value_col),
        ),
        result.entries,
    )
    counts.extracted = counts.transformed = counts.loaded = len(result.entries)
    if result.excluded:
        with state.lock:
            state.report.notes.append(
                f"{step.table}: {result.excluded} null or empty "
                "source values excluded from the lookup scan"
            )
    with state.lock:
        state.lookups[step.table] = LookupIndex.from_entries(
            step.table,
            result.entries,
            step.lookup.trim_whitespace,
            step.lookup.case_fold_key,
        )


def _prepare_migrate(
    state: _RunState,
    conn,
    sources: list[Source],
    step: PlanStep,
    counts: TableCounts,
    sink: RejectSink,
) -> list[Row]:
    """Extract and transform; runs outside the write transaction."""
    config = state.config
    if step.split_from:
        rows = _replay_split_rows(state, conn, sources, step)
        counts.extracted = len(rows)
    else:
        rows, counts.extracted = _extract_step_rows(state, sources, step, sink)
    context = _build_context(state, conn, step.rules, sink)
    for rule in step.rules:
        rows = rule.apply(rows, context)
    counts.transformed = len(rows)
    disc = config.discriminator
    target = config.target_schema.table(step.table)
    if disc and step.table != disc.table and target.has_column(disc.column):
        backfill_discriminator(rows, disc)
    return rows


def _load_migrate(
    state: _RunState,
    conn,
    step: PlanStep,
    rows: list[Row],
    counts: TableCounts,
    sink: RejectSink,
) -> None:
    config = state.config
    keymap = KeyMap(step.table, unique_new_keys=step.mode.kind == "generateKeys")
    counts.loaded = load_table(
        conn,
        config.target_schema.table(step.table),
        rows,
        step.mode,
        keymap,
        config.dbids,
        sink,
        config.batch_size,
    )
    keymap.seal()
    persist_keymap(conn, keymap)
    with state.lock:
        state.keymaps[step.table] = keymap


def _execute_step(state: _RunState, step: PlanStep, position: str) -> None:
    """Run one step; raises AbortSignal after recording partial counts."""
    started = time.perf_counter()
    counts = TableCounts()
    sink = RejectSink(state.config.policy)
    conn = _open_target(state.config)
    sources: list[Source] = []
    rows: list[Row] = []
    in_txn = False
    try:
        if step.kind != "seed":
            sources = _open_sources(state.config)
        if step.kind == "migrate":
            rows = _prepare_migrate(state, conn, sources, step, counts, sink)
        conn.execute("BEGIN IMMEDIATE")
        in_txn = True
        if step.kind == "seed":
            _run_seed(state, conn, step, counts)
        elif step.kind == "lookup":
            _run_lookup(state, conn, sources, step, counts)
        else:
            _load_migrate(state, conn, step, rows, counts, sink)
        _mark_done(conn, step.table)
        conn.execute("COMMIT")
        in_txn = False
    except AbortSignal:
        if in_txn:
            conn.execute("ROLLBACK")
        counts.loaded = 0
        raise
    finally:
        counts.rejected = len(sink)
        counts.reject_reasons = list(sink.rejects)
        with state.lock:
            state.report.per_table[step.table] = counts
        for source in sources:
            source.close()
        conn.close()
        duration_ms = int((time.perf_counter() - started) * 1000)
        log.info(
            "step=%s table=%s kind=%s extracted=%d transformed=%d "
            "loaded=%d rejected=%d duration_ms=%d",
            position,
            step.table,
            step.kind,
            counts.extracted,
            counts.transformed,
            counts.loaded,
            counts.rejected,
            duration_ms,
        )


def _run_serial(state: _RunState, pending: list[tuple[int, PlanStep]], total: int) -> None:
    for position, step in pending:
        _execute_step(state, step, f"{position}/{total}")


def _run_parallel(
    state: _RunState, pending: list[tuple[int, PlanStep]], total: int, jobs: int
) -> None:
    done = {s.table for s in state.plan.steps} - {step.table for _, step in pending}
    remaining = list(pending)
    failure: BaseException | None = None
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
        futures: dict[concurrent.futures.Future, str] = {}
        while remaining or futures:
            if failure is None:
                ready = [
                    (position, step)
                    for position, step in remaining
                    if set(step.depends_on) <= done
                ]
                for position, step in ready:
                    futures[
                        pool.submit(_execute_step, state, step, f"{position}/{total}")
                    ] = step.table
                remaining = [
                    (p, s) for p, s in remaining if s.table not in {x[1].table for x in ready}
                ]
            if not futures:
                break
            finished, _ = concurrent.futures.wait(
                futures, return_when=concurrent.futures.FIRST_COMPLETED
            )
            for future in finished:
                table = futures.pop(future)
                exc = future.exception()
                if exc is not None and failure is None:
                    failure = exc
                elif exc is None:
                    done.add(table)
    if failure is not None:
        raise failure


def run(
    config: MigrationConfig,
    plan: MigrationPlan | None = None,
    jobs: int = 1,
    verify: bool = True,
) -> RunOutcome:
    """Execute the plan against the configured target; resumes past steps
    already marked complete in the target's progress table."""
    plan = plan if plan is not None else compile_plan(config)
    conn = _open_target(config)
    try:
        _ensure_state_table(conn)
        completed = _completed_steps(conn)
    finally:
        conn.close()

    report = LoadReport()
    state = _RunState(config=config, plan=plan, report=report)
    total = len(plan.steps)
    pending: list[tuple[int, PlanStep]] = []
    for position, step in enumerate(plan.steps, start=1):
        if step.table in completed:
            report.notes.append(f"{step.table}: already completed, skipped")
            log.info("step=%d/%d table=%s skipped (already completed)",
                     position, total, step.table)
            continue
        report.per_table[step.table] = TableCounts()
        pending.append((position, step))

    try:
        if jobs <= 1:
            _run_serial(state, pending, total)
        else:
            _run_parallel(state, pending, total, jobs)
    except AbortSignal as exc:
        report.aborted = True
        report.cause = str(exc)
        log.error("aborted: %s", exc)
        return RunOutcome(report=report, integrity=None)

    integrity = None
    if verify:
        conn = _open_target(config)
        try:
            integrity = verify_target(conn, config.target_schema)
        finally:
            conn.close()
    return RunOutcome(report=report, integrity=integrity)


def validate(config: MigrationConfig) -> IntegrityReport:
    """verify_target against the configured target database."""
    conn = _open_target(config)
    try:
        return verify_target(conn, config.target_schema)
    finally:
        conn.close()


def cleanup(config: MigrationConfig) -> list[str]:
    """Drop the persisted key maps and the progress table."""
    conn = _open_target(config)
    try:
        conn.execute("BEGIN IMMEDIATE")
        dropped = drop_keymaps(conn)
        row = conn.execute(
            "SELECT name FROM sqlite_master WHERE type='table' AND name=?",
            (STATE_TABLE,),
        ).fetchone()
        if row is not None:
            conn.execute(f'DROP TABLE "{STATE_TABLE}"')
            dropped.append(STATE_TABLE)
        conn.execute("COMMIT")
        return dropped
    finally:
        conn.close()
