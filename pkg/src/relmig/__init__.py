"""relmig: consolidate several structurally-identical legacy databases into one target.

The engine extracts rows from tagged source databases, applies a declarative
transformation-rule catalogue, translates surrogate keys through per-table
mapping tables, and loads the result while enforcing the target's constraints.
A small pagination benchmark (offset vs keyset) ships alongside.
"""

__version__ = "0.1.0"
