"""Exception hierarchy for the migration engine.

Two families: hard errors that stop whatever is running (setup, config,
registry misuse), and per-row signals (RowError subclasses) that the step
executor routes through the configured policy -- reject the row or abort
the run.
"""

from __future__ import annotations


class MigrationError(Exception):
    """Base class for every error raised by this package."""


# -- schema / document errors -------------------------------------------------

class MalformedDocument(MigrationError):
    """Schema or config document is syntactically or structurally invalid."""


class DuplicateTable(MigrationError):
    pass


class DanglingReference(MigrationError):
    """Foreign key points at an unknown table or a non-primary-key column."""


class CyclicDependency(MigrationError):
    """FK dependency graph contains a cycle (self-loops excluded)."""

    def __init__(self, cycle: list[str]):
        self.cycle = list(cycle)
        super().__init__("cyclic foreign-key dependency: " + " -> ".join(self.cycle))


# -- extraction / rule setup ---------------------------------------------------

class UnknownTable(MigrationError):
    pass


class UnknownColumn(MigrationError):
    pass


class RuleParameterError(MigrationError):
    """Transformation rule declared with invalid or inconsistent parameters."""


class ConfigValidationError(MigrationError):
    """Migration config rejected before any step ran."""


class ConnectionFailed(MigrationError):
    """A source or the target database could not be opened."""


# -- key-map registry ----------------------------------------------------------

class SealedMap(MigrationError):
    """Insertion attempted on a sealed key map."""


class UnsealedMap(MigrationError):
    """Lookup attempted before the owning table step sealed its map."""


class DuplicateOldKey(MigrationError):
    """Same (dbid, oldKey) recorded twice with different new keys."""


class DuplicateNewKey(MigrationError):
    """A new key was assigned to two different source rows."""


class StorageError(MigrationError):
    """Persisted key map missing or unreadable."""


class PreconditionError(MigrationError):
    """A step ran before its dependencies were complete."""


class UncoveredSource(MigrationError):
    """Discriminator spec has no value for a row's source dbid."""


class AbortSignal(MigrationError):
    """Raised under the abort policy; rolls back the current table step."""


# -- per-row signals (routed to policy, never fatal by themselves) -------------

class RowError(MigrationError):
    """Base for per-row failures; carries a short reject reason."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


class RowStructureError(RowError):
    """Extracted row does not match the declared table structure."""


class TransformError(RowError):
    """A transformation rule failed on one row."""


class LookupMiss(RowError):
    """joinLookup found no entry for a non-empty source value."""


class MissingMapping(RowError):
    """Key map has no translation for (dbid, oldKey): dangling legacy reference."""


class ConstraintViolation(RowError):
    """Target constraint (uniqueness, nullability, FK) rejected the row."""
