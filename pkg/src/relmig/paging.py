"""Offset versus keyset pagination over an indexed name column.

Offset paging (``LIMIT k OFFSET i*k``) scans and discards every row in
front of the requested page, so its cost grows with the page index.
Keyset paging (``WHERE key > last-seen ORDER BY key LIMIT k``) seeks the
index instead and stays flat. ``bench`` measures both over the same
generated table and reports mean/stddev per sampled page; the first
repetition is a warm-up and is discarded.
"""

from __future__ import annotations

import csv
import io
import math
import random
import sqlite3
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

USER_WORDS = (
    "amber", "birch", "cedar", "delta", "ember", "fjord", "grove", "harbor",
    "indigo", "juniper", "krypton", "lumen", "maple", "nimbus", "onyx",
    "pine", "quartz", "raven", "slate", "tundra",
)


def build_users(conn: sqlite3.Connection, count: int, seed: int = 7) -> None:
    """Create and fill the Users table; insert order is shuffled so the
    name index, not the rowid order, is what paging exercises."""
    conn.execute(
        'CREATE TABLE "Users" ('
        '"ID" INTEGER PRIMARY KEY, '
        '"UserName" TEXT NOT NULL, '
        '"LoweredUserName" TEXT NOT NULL UNIQUE, '
        '"Email" TEXT)'
    )
    rng = random.Random(seed)
    rows = []
    for i in range(1, count + 1):
        word = USER_WORDS[i % len(USER_WORDS)]
        name = f"{word.capitalize()}{i:07d}" if i % 3 else f"{word.upper()}{i:07d}"
        lowered = name.lower()
        rows.append((i, name, lowered, f"{lowered}@example.edu"))
    rng.shuffle(rows)
    conn.executemany('INSERT INTO "Users" VALUES (?, ?, ?, ?)', rows)
    conn.commit()


_PAGE_COLUMNS = '"ID", "UserName", "LoweredUserName", "Email"'


def page_offset(conn: sqlite3.Connection, page_size: int, page_index: int) -> list[tuple]:
    """One page by skip count."""
    return conn.execute(
        f'SELECT {_PAGE_COLUMNS} FROM "Users" '
        'ORDER BY "LoweredUserName" LIMIT ? OFFSET ?',
        (page_size, page_size * page_index),
    ).fetchall()


def page_keyset(
    conn: sqlite3.Connection, page_size: int, after_key: str = ""
) -> tuple[list[tuple], str]:
    """One page by index seek; returns the rows and the key to resume
    from (unchanged when the page is empty)."""
    rows = conn.execute(
        f'SELECT {_PAGE_COLUMNS} FROM "Users" '
        'WHERE "LoweredUserName" > ? ORDER BY "LoweredUserName" LIMIT ?',
        (after_key, page_size),
    ).fetchall()
    return rows, rows[-1][2] if rows else after_key


def key_before_page(conn: sqlite3.Connection, page_size: int, page_index: int) -> str:
    """The resume key that positions a keyset query at the given page."""
    if page_index == 0:
        return ""
    row = conn.execute(
        'SELECT "LoweredUserName" FROM "Users" '
        'ORDER BY "LoweredUserName" LIMIT 1 OFFSET ?',
        (page_size * page_index - 1,),
    ).fetchone()
    return row[0] if row else ""


def default_page_indices(record_count: int, page_size: int) -> tuple[int, ...]:
    """First page plus pages at 1%, 10%, 50% and 99% of the way through."""
    pages = max(record_count // page_size, 1)
    picked = {0} | {round(f * pages) for f in (0.01, 0.1, 0.5, 0.99)}
    return tuple(sorted(picked))


@dataclass(frozen=True)
class BenchSpec:
    record_counts: tuple[int, ...] = (100_000,)
    page_size: int = 10
    reps: int = 30
    page_indices: tuple[int, ...] | None = None
    seed: int = 7

    def indices_for(self, record_count: int) -> tuple[int, ...]:
        if self.page_indices is not None:
            return self.page_indices
        return default_page_indices(record_count, self.page_size)


@dataclass(frozen=True)
class Measurement:
    strategy: str
    record_count: int
    page_index: int
    mean_ms: float
    stddev_ms: float
    reps: int

    def ci95(self) -> tuple[float, float]:
        half = 1.96 * self.stddev_ms / math.sqrt(self.reps)
        return (self.mean_ms - half, self.mean_ms + half)


def _measure(run, reps: int) -> tuple[float, float]:
    """Mean and stddev in ms over reps runs, after one discarded warm-up."""
    timings = []
    for i in range(reps + 1):
        started = time.perf_counter()
        run()
        elapsed = (time.perf_counter() - started) * 1000.0
        if i > 0:
            timings.append(elapsed)
    return statistics.mean(timings), statistics.stdev(timings)


def bench(spec: BenchSpec, db_dir: Path | None = None) -> list[Measurement]:
    """Measure both strategies at each sampled page of each table size."""
    results: list[Measurement] = []
    with tempfile.TemporaryDirectory() as tmp:
        base = Path(db_dir) if db_dir is not None else Path(tmp)
        for count in spec.record_counts:
            db_path = base / f"users_{count}.db"
            if not db_path.exists():
                conn = sqlite3.connect(db_path)
                build_users(conn, count, spec.seed)
                conn.close()
            conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
            try:
                for index in spec.indices_for(count):
                    mean, stddev = _measure(
                        lambda: page_offset(conn, spec.page_size, index), spec.reps
                    )
                    results.append(
                        Measurement("offset", count, index, mean, stddev, spec.reps)
                    )
                for index in spec.indices_for(count):
                    after = key_before_page(conn, spec.page_size, index)
                    mean, stddev = _measure(
                        lambda: page_keyset(conn, spec.page_size, after), spec.reps
                    )
                    results.append(
                        Measurement("keyset", count, index, mean, stddev, spec.reps)
                    )
            finally:
                conn.close()
    return results


def csv_text(results: list[Measurement]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["strategy", "record_count", "page_index", "mean_ms", "stddev_ms"])
    for m in results:
        writer.writerow(
            [m.strategy, m.record_count, m.page_index,
             f"{m.mean_ms:.4f}", f"{m.stddev_ms:.4f}"]
        )
    return out.getvalue()


@dataclass
class TrendReport:
    offset_grows: bool
    keyset_flat: bool
    lines: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.offset_grows and self.keyset_flat

    def render_text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _series(results: list[Measurement], strategy: str, count: int) -> list[Measurement]:
    picked = [m for m in results if m.strategy == strategy and m.record_count == count]
    return sorted(picked, key=lambda m: m.page_index)


def check_trend(results: list[Measurement], ratio_bound: float = 10.0) -> TrendReport:
    """Offset cost must grow with page depth (95% intervals of the first
    and last sampled pages must not overlap); keyset cost must stay flat
    (intervals overlap, or the mean ratio stays under ratio_bound)."""
    offset_grows = True
    keyset_flat = True
    lines = []
    for count in sorted({m.record_count for m in results}):
        offsets = _series(results, "offset", count)
        keysets = _series(results, "keyset", count)
        if len(offsets) >= 2:
            first, last = offsets[0], offsets[-1]
            grows = first.ci95()[1] < last.ci95()[0]
            offset_grows = offset_grows and grows
            lines.append(
                f"offset n={count}: page {first.page_index} "
                f"{first.mean_ms:.4f}ms -> page {last.page_index} "
                f"{last.mean_ms:.4f}ms "
                f"({'grows' if grows else 'no growth'})"
            )
        if len(keysets) >= 2:
            slowest = max(keysets, key=lambda m: m.mean_ms)
            fastest = min(keysets, key=lambda m: m.mean_ms)
            overlap = slowest.ci95()[0] <= fastest.ci95()[1]
            ratio = (
                slowest.mean_ms / fastest.mean_ms
                if fastest.mean_ms > 0
                else math.inf
            )
            flat = overlap or ratio <= ratio_bound
            keyset_flat = keyset_flat and flat
            lines.append(
                f"keyset n={count}: spread {fastest.mean_ms:.4f}ms to "
                f"{slowest.mean_ms:.4f}ms, ratio {ratio:.2f} "
                f"({'flat' if flat else 'not flat'})"
            )
    return TrendReport(offset_grows, keyset_flat, lines)
