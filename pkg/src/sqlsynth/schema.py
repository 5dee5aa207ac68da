"""Domain schemas, annotated examples, and entity sequences.

A domain is one database: its tables, typed columns, and key links. An
entity is a ``table.column`` pair; questions and queries are described by
the ordered, deduplicated sequence of entities they mention.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

from .errors import DataParseError, SchemaInvariantError, SqlResolutionError, UnknownDbError
from . import sqltext

COLUMN_TYPES = ("text", "number", "time", "boolean", "others")


@dataclass(frozen=True)
class Entity:
    """One table.column pair."""

    table: str
    column: str

    def __post_init__(self):
        if not self.table or not self.column:
            raise SchemaInvariantError("entity table and column must be non-empty")

    def __str__(self) -> str:
        return f"{self.table}.{self.column}"


@dataclass(frozen=True)
class SchemaGraph:
    """One database: ordered tables, typed columns, and key links.

    ``columns`` holds (table index, column name, column type) triples;
    ``foreign_keys`` holds (column index, column index) pairs into that list.
    """

    db_id: str
    tables: tuple[str, ...]
    columns: tuple[tuple[int, str, str], ...]
    primary_keys: frozenset[int] = frozenset()
    foreign_keys: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self):
        if not self.db_id:
            raise SchemaInvariantError("db_id must be non-empty")
        n_cols = len(self.columns)
        seen: set[tuple[str, str]] = set()
        for t_idx, name, ctype in self.columns:
            if not 0 <= t_idx < len(self.tables):
                raise SchemaInvariantError(
                    f"{self.db_id}: column {name!r} has invalid table index {t_idx}"
                )
            if ctype not in COLUMN_TYPES:
                raise SchemaInvariantError(
                    f"{self.db_id}: column {name!r} has unknown type {ctype!r}"
                )
            key = (self.tables[t_idx].lower(), name.lower())
            if key in seen:
                raise SchemaInvariantError(
                    f"{self.db_id}: duplicate column {self.tables[t_idx]}.{name}"
                )
            seen.add(key)
        for idx in self.primary_keys:
            if not 0 <= idx < n_cols:
                raise SchemaInvariantError(f"{self.db_id}: primary key index {idx} out of range")
        for a, b in self.foreign_keys:
            if not (0 <= a < n_cols and 0 <= b < n_cols):
                raise SchemaInvariantError(
                    f"{self.db_id}: foreign key ({a}, {b}) out of range"
                )
            if a == b:
                raise SchemaInvariantError(f"{self.db_id}: self-referential foreign key ({a}, {a})")

    @property
    def entities(self) -> list[Entity]:
        return [Entity(self.tables[t], name) for t, name, _ in self.columns]

    def column_type(self, entity: Entity) -> str:
        idx = self.column_index(entity)
        return self.columns[idx][2]

    def column_index(self, entity: Entity) -> int:
        for i, (t_idx, name, _) in enumerate(self.columns):
            if self.tables[t_idx].lower() == entity.table.lower() and name.lower() == entity.column.lower():
                return i
        raise SqlResolutionError(f"{self.db_id}: no column {entity}")

    def columns_by_table(self) -> dict[str, dict[str, str]]:
        out: dict[str, dict[str, str]] = {t: {} for t in self.tables}
        for t_idx, name, _ in self.columns:
            out[self.tables[t_idx]][name.lower()] = name
        return out


@dataclass(frozen=True)
class EntitySequence:
    """Ordered entities as they appear in a query, db-name prefixed.

    ``terminated`` records whether the end-of-sequence token was emitted
    (extraction always terminates; sampling may truncate at max length).
    """

    db_name: str
    entities: tuple[Entity, ...]
    terminated: bool = True

    def __post_init__(self):
        if len(set(self.entities)) != len(self.entities):
            raise SchemaInvariantError("entity sequence contains duplicates")

    def key(self) -> tuple:
        return (self.db_name, tuple(str(e) for e in self.entities))


@dataclass(frozen=True)
class AnnotatedPair:
    """A (question, SQL, domain) training example."""

    question: str
    sql: str
    db_id: str

    def __post_init__(self):
        if not self.question or not self.sql or not self.db_id:
            raise SchemaInvariantError("question, sql and db_id must all be non-empty")


def _read_json_array(path: str | Path) -> list:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataParseError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, list):
        raise DataParseError(f"{path}: expected a JSON array of records")
    return data


def load_schemas(path: str | Path) -> list[SchemaGraph]:
    """Load a Spider-style tables file into SchemaGraphs.

    Each record carries db_id, table names, column records with table index /
    name / type, primary-key indices and foreign-key pairs. The ``*`` pseudo
    column (table index -1) is dropped and key indices are remapped
    accordingly. Unknown column types map to "others" with a warning.
    """
    schemas: list[SchemaGraph] = []
    for entry_idx, rec in enumerate(_read_json_array(path)):
        try:
            db_id = rec["db_id"]
            tables = rec.get("table_names_original") or rec["table_names"]
            raw_cols = rec.get("column_names_original") or rec["column_names"]
            types = rec.get("column_types", [])
        except (KeyError, TypeError) as exc:
            raise DataParseError(
                f"schema entry {entry_idx}: missing field {exc}", entry_index=entry_idx
            ) from exc
        index_map: dict[int, int] = {}
        columns: list[tuple[int, str, str]] = []
        for old_idx, col in enumerate(raw_cols):
            try:
                t_idx, name = col
            except (TypeError, ValueError) as exc:
                raise DataParseError(
                    f"schema entry {entry_idx}: malformed column record {col!r}",
                    entry_index=entry_idx,
                ) from exc
            if name == "*" or t_idx < 0:
                continue
            ctype = types[old_idx] if old_idx < len(types) else "others"
            if ctype not in COLUMN_TYPES:
                warnings.warn(
                    f"{db_id}: column {name!r} has unknown type {ctype!r}; using 'others'"
                )
                ctype = "others"
            index_map[old_idx] = len(columns)
            columns.append((t_idx, name, ctype))
        pks = frozenset(index_map[i] for i in rec.get("primary_keys", []) if i in index_map)
        fks = set()
        for pair in rec.get("foreign_keys", []):
            a, b = pair
            if a not in index_map or b not in index_map:
                raise SchemaInvariantError(
                    f"{db_id}: foreign key {pair} references a missing column"
                )
            fks.add((index_map[a], index_map[b]))
        schemas.append(
            SchemaGraph(
                db_id=db_id,
                tables=tuple(tables),
                columns=tuple(columns),
                primary_keys=pks,
                foreign_keys=frozenset(fks),
            )
        )
    return schemas


def load_examples(path: str | Path, schemas: list[SchemaGraph]) -> list[AnnotatedPair]:
    """Load a Spider-style examples file (question / query / db_id records)."""
    by_id = {s.db_id for s in schemas}
    pairs: list[AnnotatedPair] = []
    for entry_idx, rec in enumerate(_read_json_array(path)):
        try:
            question = rec["question"]
            sql = rec.get("query") or rec["sql"]
            db_id = rec["db_id"]
        except (KeyError, TypeError) as exc:
            raise DataParseError(
                f"example entry {entry_idx}: missing field {exc}", entry_index=entry_idx
            ) from exc
        if db_id not in by_id:
            raise UnknownDbError(f"example entry {entry_idx}: unknown db_id {db_id!r}")
        pairs.append(AnnotatedPair(question=question, sql=sql, db_id=db_id))
    return pairs


def save_examples(pairs: list[AnnotatedPair], path: str | Path) -> None:
    """Write examples in the same record format load_examples reads."""
    records = [{"question": p.question, "query": p.sql, "db_id": p.db_id} for p in pairs]
    Path(path).write_text(
        json.dumps(records, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def extract_entity_sequence(sql: str, schema: SchemaGraph) -> EntitySequence:
    """Entities of a query in first-appearance order, duplicates removed.

    Table aliases are resolved first; unqualified columns resolve against
    the FROM-clause tables and must be unambiguous. The ``*`` column is
    excluded.
    """
    tokens = sqltext.tokenize_sql(sql)
    table_names = set(schema.tables)
    aliases = sqltext.table_aliases(tokens, table_names)
    scope = sqltext.from_scope_tables(tokens, table_names)
    columns_by_table = schema.columns_by_table()
    seen: set[Entity] = set()
    ordered: list[Entity] = []
    skip_next = False
    for i, tok in enumerate(tokens):
        if skip_next:
            skip_next = False
            continue
        if tok.lower() == "as":
            skip_next = True  # alias definition, not a column reference
            continue
        if not sqltext.is_identifier(tok):
            continue
        if i + 1 < len(tokens) and tokens[i + 1] == "(" and "." not in tok:
            continue  # function call
        resolved = sqltext.resolve_column_token(tok, aliases, scope, columns_by_table)
        if resolved is None:
            continue
        entity = Entity(*resolved)
        if entity not in seen:
            seen.add(entity)
            ordered.append(entity)
    return EntitySequence(db_name=schema.db_id, entities=tuple(ordered), terminated=True)


def humanize(name: str) -> str:
    """Underscores become single spaces; runs collapse."""
    return " ".join(part for part in name.split("_") if part)


def format_generator_input(seq: EntitySequence, schema: SchemaGraph) -> str:
    """Render an entity sequence as the question generator's input string.

    ``<db name> : <table> <column> <type> | ...`` with underscores in db,
    table, and column names replaced by spaces.
    """
    if not seq.entities:
        raise SchemaInvariantError("generator input requires at least one entity")
    segments = []
    for entity in seq.entities:
        ctype = schema.column_type(entity)
        segments.append(f"{humanize(entity.table)} {humanize(entity.column)} {ctype}")
    return f"{humanize(seq.db_name)} : " + " | ".join(segments)
