"""Dataset diagnostics: SQL sketches, normalized entropy, normalized MI.

A sketch is a query with table and column names (and literals) masked,
exposing only logical structure. Complex queries are deconstructed into
simpler parts (set-operation branches and subqueries) before counting.
Diversity is measured by normalized entropy, association between column
sets and sketches by normalized mutual information; both live in [0, 1]
so they can be averaged across databases.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import SqlResolutionError, SqlTokenError, UnsupportedConstructError
from .schema import SchemaGraph, extract_entity_sequence
from . import sqltext

TABLE_MASK = "_TAB_"
COLUMN_MASK = "_COL_"
VALUE_MASK = "_VAL_"
SUBQUERY_MASK = "_SUB_"

_SET_OPS = {"union", "intersect", "except"}


@dataclass(frozen=True)
class Sketch:
    """Masked form of one query plus its deconstructed parts."""

    masked_sql: str
    parts: tuple[str, ...]


def _mask_tokens(tokens: list[str], schema: SchemaGraph) -> list[str]:
    table_names = set(schema.tables)
    aliases = sqltext.table_aliases(tokens, table_names)
    scope = sqltext.from_scope_tables(tokens, table_names)
    columns_by_table = schema.columns_by_table()
    table_lower = {t.lower() for t in table_names}
    masked: list[str] = []
    skip_next = False
    for i, tok in enumerate(tokens):
        if skip_next:
            skip_next = False
            masked.append(TABLE_MASK)
            continue
        low = tok.lower()
        if low == "as":
            skip_next = True
            masked.append(tok)
            continue
        if tok == SUBQUERY_MASK:
            masked.append(tok)
            continue
        if sqltext.is_string_literal(tok) or sqltext.is_number_literal(tok):
            masked.append(VALUE_MASK)
            continue
        if not sqltext.is_identifier(tok):
            masked.append(tok)
            continue
        if i + 1 < len(tokens) and tokens[i + 1] == "(" and "." not in tok:
            masked.append(tok)  # function name
            continue
        if "." in tok:
            masked.append(COLUMN_MASK)
            continue
        if low in table_lower or low in aliases:
            masked.append(TABLE_MASK)
            continue
        resolved = sqltext.resolve_column_token(tok, aliases, scope, columns_by_table)
        masked.append(COLUMN_MASK if resolved is not None else tok)
    return masked


def sketch(sql: str, schema: SchemaGraph) -> Sketch:
    """Mask identifiers and literals; deconstruct into simpler parts.

    Keywords, operators, and structure are preserved verbatim (including
    their original case); every table name becomes _TAB_, every column
    reference _COL_, every literal _VAL_.
    """
    tokens = sqltext.tokenize_sql(sql)
    while tokens and tokens[-1] == ";":
        tokens = tokens[:-1]
    part_tokens = _deconstruct_tokens(tokens)  # raises on unsupported constructs
    masked_full = sqltext.render_tokens(_mask_tokens(tokens, schema))
    parts = tuple(
        sqltext.render_tokens(_mask_tokens(part, schema)) for part in part_tokens
    )
    return Sketch(masked_sql=masked_full, parts=parts)


def _deconstruct_tokens(tokens: list[str]) -> list[list[str]]:
    """Split at top-level set operators, then peel out subqueries."""
    if tokens and tokens[0].lower() == "with":
        raise UnsupportedConstructError("WITH")
    segments = sqltext._split_top_level(tokens, _SET_OPS)
    parts: list[list[str]] = []
    for seg in segments:
        if seg and seg[0].lower() == "all":
            seg = seg[1:]  # the ALL of "UNION ALL" lands at the segment start
        parts.extend(_extract_subqueries(seg))
    return parts


def _extract_subqueries(tokens: list[str]) -> list[list[str]]:
    """Replace each top-level ``( SELECT ... )`` with a placeholder.

    Returns the parent (with placeholders) followed by the recursively
    deconstructed children, depth first in appearance order.
    """
    parent: list[str] = []
    children: list[list[str]] = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok == "(" and i + 1 < len(tokens) and tokens[i + 1].lower() == "select":
            depth = 1
            j = i + 1
            while j < len(tokens) and depth > 0:
                if tokens[j] == "(":
                    depth += 1
                elif tokens[j] == ")":
                    depth -= 1
                j += 1
            inner = tokens[i + 1 : j - 1] if depth == 0 else tokens[i + 1 :]
            parent.extend(["(", SUBQUERY_MASK, ")"])
            children.append(inner)
            i = j if depth == 0 else len(tokens)
        else:
            parent.append(tok)
            i += 1
    out = [parent]
    for child in children:
        out.extend(_deconstruct_tokens(child))
    return out


def deconstruct(sql: str, schema: SchemaGraph) -> list[str]:
    """Masked sketch parts of a query; a simple query yields exactly one."""
    return list(sketch(sql, schema).parts)


def normalized_entropy(counts: Mapping) -> float:
    """H(empirical) / log|support| with support = nonzero categories.

    A single-category distribution has no diversity: returns 0.0 by
    convention. Base-2 logs throughout (the base cancels in the ratio).
    """
    positive = [c for c in counts.values() if c > 0]
    if not positive:
        raise ValueError("normalized_entropy requires at least one nonzero count")
    if len(positive) == 1:
        return 0.0
    total = float(sum(positive))
    h = -sum((c / total) * math.log2(c / total) for c in positive)
    h_uniform = math.log2(len(positive))
    return min(1.0, max(0.0, h / h_uniform))


def normalized_mutual_information(joint: Mapping) -> float:
    """2 I(X:Y) / (H(X) + H(Y)) over a joint count table keyed by (x, y).

    Computed via I = H(X) + H(Y) - H(X,Y). Returns 0.0 when both marginals
    are point masses (H(X) + H(Y) = 0). Result clamped to [0, 1].
    """
    items = [(k, c) for k, c in joint.items() if c > 0]
    if not items:
        raise ValueError("normalized_mutual_information requires a nonempty joint table")
    total = float(sum(c for _, c in items))
    x_counts: Counter = Counter()
    y_counts: Counter = Counter()
    for (x, y), c in items:
        x_counts[x] += c
        y_counts[y] += c

    def entropy(counter: Counter) -> float:
        return -sum((c / total) * math.log2(c / total) for c in counter.values())

    h_x = entropy(x_counts)
    h_y = entropy(y_counts)
    if h_x + h_y == 0.0:
        return 0.0
    h_xy = -sum((c / total) * math.log2(c / total) for _, c in items)
    mi = h_x + h_y - h_xy
    return min(1.0, max(0.0, 2.0 * mi / (h_x + h_y)))


@dataclass
class DbStats:
    """Per-database diagnostic values."""

    n_instances: int
    h_col: float
    h_sketch: float
    i_col_sketch: float


@dataclass
class DatasetStats:
    """Dataset-level diagnostics.

    h_db and i_db_sketch are global (the database is the random variable);
    h_col, h_sketch, and i_col_sketch are computed per database and averaged
    unweighted across databases. Sketch categories are the deconstructed
    parts; the deconstruction rules are fixed but handcrafted, so unique
    counts are approximate rather than authoritative.
    """

    n_instances: int
    n_skipped: int
    n_unique_sketches: int
    n_unique_column_sets: int
    h_db: float
    h_col: float
    h_sketch: float
    i_db_sketch: float
    i_col_sketch: float
    per_db: dict[str, DbStats] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_instances": self.n_instances,
            "n_skipped": self.n_skipped,
            "n_unique_sketches": self.n_unique_sketches,
            "n_unique_column_sets": self.n_unique_column_sets,
            "h_db": self.h_db,
            "h_col": self.h_col,
            "h_sketch": self.h_sketch,
            "i_db_sketch": self.i_db_sketch,
            "i_col_sketch": self.i_col_sketch,
            "sketch_counts_approximate": True,
            "per_db": {
                db: {
                    "n_instances": s.n_instances,
                    "h_col": s.h_col,
                    "h_sketch": s.h_sketch,
                    "i_col_sketch": s.i_col_sketch,
                }
                for db, s in sorted(self.per_db.items())
            },
        }


def _column_set_category(sql: str, schema: SchemaGraph) -> tuple[str, ...]:
    seq = extract_entity_sequence(sql, schema)
    return tuple(sorted(str(e) for e in seq.entities))


def dataset_stats(examples: Iterable, schemas: list[SchemaGraph]) -> DatasetStats:
    """Diagnostics over a dataset of examples with question/sql/db_id fields.

    Examples whose SQL cannot be sketched or resolved are skipped and
    counted. Every deconstructed part of a query is one sketch observation.
    """
    by_id = {s.db_id: s for s in schemas}
    examples = list(examples)
    n_skipped = 0
    db_counts: Counter = Counter()
    db_part_joint: Counter = Counter()
    global_parts: set[str] = set()
    global_colsets: set[tuple[str, ...]] = set()
    per_db_colsets: dict[str, Counter] = defaultdict(Counter)
    per_db_parts: dict[str, Counter] = defaultdict(Counter)
    per_db_joint: dict[str, Counter] = defaultdict(Counter)
    n_processed = 0
    for ex in examples:
        db_id = ex.db_id
        schema = by_id.get(db_id)
        if schema is None:
            n_skipped += 1
            continue
        try:
            parts = sketch(ex.sql, schema).parts
            colset = _column_set_category(ex.sql, schema)
        except (SqlTokenError, SqlResolutionError, UnsupportedConstructError):
            n_skipped += 1
            continue
        n_processed += 1
        db_counts[db_id] += 1
        global_colsets.add(colset)
        per_db_colsets[db_id][colset] += 1
        for part in parts:
            global_parts.add(part)
            db_part_joint[(db_id, part)] += 1
            per_db_parts[db_id][part] += 1
            per_db_joint[db_id][(colset, part)] += 1

    if n_processed == 0:
        raise ValueError("dataset_stats: no analyzable examples")

    per_db: dict[str, DbStats] = {}
    for db_id in db_counts:
        per_db[db_id] = DbStats(
            n_instances=db_counts[db_id],
            h_col=normalized_entropy(per_db_colsets[db_id]),
            h_sketch=normalized_entropy(per_db_parts[db_id]),
            i_col_sketch=normalized_mutual_information(per_db_joint[db_id]),
        )
    n_dbs = len(per_db)
    return DatasetStats(
        n_instances=len(examples),
        n_skipped=n_skipped,
        n_unique_sketches=len(global_parts),
        n_unique_column_sets=len(global_colsets),
        h_db=normalized_entropy(db_counts),
        h_col=sum(s.h_col for s in per_db.values()) / n_dbs,
        h_sketch=sum(s.h_sketch for s in per_db.values()) / n_dbs,
        i_db_sketch=normalized_mutual_information(db_part_joint),
        i_col_sketch=sum(s.i_col_sketch for s in per_db.values()) / n_dbs,
        per_db=per_db,
    )


_REPORT_ROWS = [
    ("# instances", "n_instances", "d"),
    ("# skipped", "n_skipped", "d"),
    ("# unique sketch (approx)", "n_unique_sketches", "d"),
    ("# unique col set", "n_unique_column_sets", "d"),
    ("H~ db", "h_db", ".3f"),
    ("H~ col", "h_col", ".3f"),
    ("H~ sketch", "h_sketch", ".3f"),
    ("I~ db:sketch", "i_db_sketch", ".3f"),
    ("I~ col:sketch", "i_col_sketch", ".3f"),
]


def render_stats_table(stats_by_name: dict[str, DatasetStats]) -> str:
    """Side-by-side human-readable comparison of one or more datasets."""
    names = list(stats_by_name)
    width = max(24, *(len(n) + 2 for n in names))
    header = f"{'metric':<26}" + "".join(f"{n:>{width}}" for n in names)
    lines = [header, "-" * len(header)]
    for label, attr, fmt in _REPORT_ROWS:
        row = f"{label:<26}"
        for n in names:
            row += f"{format(getattr(stats_by_name[n], attr), fmt):>{width}}"
        lines.append(row)
    return "\n".join(lines)


def stats_csv_rows(stats_by_name: dict[str, DatasetStats]) -> list[list[str]]:
    """Plot-ready rows: metric name followed by one value per dataset."""
    names = list(stats_by_name)
    rows = [["metric", *names]]
    for label, attr, _ in _REPORT_ROWS:
        rows.append([attr, *[str(getattr(stats_by_name[n], attr)) for n in names]])
    return rows
