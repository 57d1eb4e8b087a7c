"""Per-table key maps: (dbid, oldKey) -> newKey translations.

One map per migrated table. The owning table step records entries while it
loads, then seals the map; dependent steps may only look up sealed maps.
Maps persist into the target database as ``_mig_keys_<table>`` with the
three integer columns NewKey, OldKey, DBID so an operator can inspect them
with plain SQL, and an explicit cleanup drops them after the migration.
"""

from __future__ import annotations

import sqlite3
from dataclasses import dataclass
from typing import Iterator

from .errors import (
    DuplicateNewKey,
    DuplicateOldKey,
    PreconditionError,
    SealedMap,
    StorageError,
    UnsealedMap,
)

TABLE_PREFIX = "_mig_keys_"


@dataclass(frozen=True)
class KeyMapEntry:
    new_key: int
    old_key: int
    dbid: int


class KeyMap:
    """Mutable while its table step runs; immutable and lookup-enabled after seal.

    unique_new_keys is relaxed for identity-preserved tables: those maps
    carry newKey = oldKey once per configured source, so one newKey
    legitimately appears under several dbids.
    """

    def __init__(self, table_name: str, unique_new_keys: bool = True):
        self.table_name = table_name
        self.unique_new_keys = unique_new_keys
        self._by_old: dict[tuple[int, int], int] = {}
        self._new_keys: set[int] = set()
        self._sealed = False

    @property
    def sealed(self) -> bool:
        return self._sealed

    def __len__(self) -> int:
        return len(self._by_old)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KeyMap):
            return NotImplemented
        return (
            self.table_name == other.table_name
            and self._sealed == other._sealed
            and self._by_old == other._by_old
        )

    def record(self, dbid: int, old_key: int, new_key: int) -> None:
        """Insert one translation; re-recording an identical triple is a no-op
        so a partially completed step can be replayed safely."""
        if self._sealed:
            raise SealedMap(f"key map for {self.table_name!r} is sealed")
        existing = self._by_old.get((dbid, old_key))
        if existing is not None:
            if existing != new_key:
                raise DuplicateOldKey(
                    f"{self.table_name}: (dbid={dbid}, oldKey={old_key}) already maps "
                    f"to {existing}, refusing {new_key}"
                )
            return
        if self.unique_new_keys:
            if new_key in self._new_keys:
                raise DuplicateNewKey(
                    f"{self.table_name}: newKey {new_key} assigned twice"
                )
            self._new_keys.add(new_key)
        self._by_old[(dbid, old_key)] = new_key

    def discard(self, dbid: int, old_key: int) -> None:
        """Remove a not-yet-sealed entry (used when a loaded row is withdrawn)."""
        if self._sealed:
            raise SealedMap(f"key map for {self.table_name!r} is sealed")
        new_key = self._by_old.pop((dbid, old_key), None)
        if new_key is not None:
            self._new_keys.discard(new_key)

    def contains(self, dbid: int, old_key: int) -> bool:
        return (dbid, old_key) in self._by_old

    def translate(self, dbid: int, old_key: int) -> int | None:
        """Owner-side lookup, valid before sealing; dependents use lookup()."""
        return self._by_old.get((dbid, old_key))

    def seal(self) -> "KeyMap":
        self._sealed = True
        return self

    def lookup(self, dbid: int, old_key: int) -> int | None:
        """Exact translation or None; never fabricates a key."""
        if not self._sealed:
            raise UnsealedMap(
                f"key map for {self.table_name!r} not sealed yet; "
                "dependent steps must wait for the owning step to finish"
            )
        return self._by_old.get((dbid, old_key))

    def entries(self) -> Iterator[KeyMapEntry]:
        for (dbid, old_key), new_key in sorted(self._by_old.items()):
            yield KeyMapEntry(new_key=new_key, old_key=old_key, dbid=dbid)


def storage_table(table_name: str) -> str:
    return TABLE_PREFIX + table_name


def persist_keymap(conn: sqlite3.Connection, keymap: KeyMap) -> str:
    """Write a sealed map to its ``_mig_keys_<table>`` table; returns the name."""
    if not keymap.sealed:
        raise PreconditionError(
            f"key map for {keymap.table_name!r} must be sealed before persisting"
        )
    name = storage_table(keymap.table_name)
    quoted = f'"{name}"'
    conn.execute(f"DROP TABLE IF EXISTS {quoted}")
    conn.execute(
        f"CREATE TABLE {quoted} ("
        "NewKey INTEGER NOT NULL, "
        "OldKey INTEGER NOT NULL, "
        "DBID INTEGER NOT NULL, "
        "PRIMARY KEY (DBID, OldKey))"
    )
    conn.executemany(
        f"INSERT INTO {quoted} (NewKey, OldKey, DBID) VALUES (?, ?, ?)",
        [(e.new_key, e.old_key, e.dbid) for e in keymap.entries()],
    )
    return name


def load_keymap(conn: sqlite3.Connection, table_name: str) -> KeyMap:
    """Restore a persisted map; the result is sealed (its step had committed)."""
    name = storage_table(table_name)
    row = conn.execute(
        "SELECT name FROM sqlite_master WHERE type='table' AND name=?", (name,)
    ).fetchone()
    if row is None:
        raise StorageError(f"no persisted key map {name!r} in target database")
    keymap = KeyMap(table_name, unique_new_keys=False)
    for new_key, old_key, dbid in conn.execute(
        f'SELECT NewKey, OldKey, DBID FROM "{name}" ORDER BY DBID, OldKey'
    ):
        keymap.record(dbid, old_key, new_key)
    return keymap.seal()


def drop_keymaps(conn: sqlite3.Connection) -> list[str]:
    """Drop every persisted ``_mig_keys_*`` table; returns what was dropped."""
    names = [
        r[0]
        for r in conn.execute(
            "SELECT name FROM sqlite_master WHERE type='table' AND name LIKE ?",
            (TABLE_PREFIX + "%",),
        )
    ]
    for name in sorted(names):
        conn.execute(f'DROP TABLE "{name}"')
    return sorted(names)
