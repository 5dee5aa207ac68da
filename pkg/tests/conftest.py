import json

import pytest

from sqlsynth.schema import SchemaGraph


@pytest.fixture
def concert_schema() -> SchemaGraph:
    return SchemaGraph(
        db_id="concert_singer",
        tables=("singer", "concert"),
        columns=(
            (0, "singer_id", "number"),
            (0, "name", "text"),
            (0, "age", "number"),
            (1, "concert_id", "number"),
            (1, "year", "time"),
        ),
        primary_keys=frozenset({0, 3}),
        foreign_keys=frozenset(),
    )


@pytest.fixture
def captain_schema() -> SchemaGraph:
    return SchemaGraph(
        db_id="ship_captains",
        tables=("captain",),
        columns=(
            (0, "name", "text"),
            (0, "age", "number"),
            (0, "rank", "text"),
        ),
    )


@pytest.fixture
def head_schema() -> SchemaGraph:
    return SchemaGraph(
        db_id="department_management",
        tables=("head",),
        columns=(
            (0, "name", "text"),
            (0, "age", "number"),
            (0, "born_state", "text"),
        ),
    )


@pytest.fixture
def spider_style_tables(tmp_path):
    """A minimal Spider-format tables file with the * column and key indices."""
    record = {
        "db_id": "concert_singer",
        "table_names_original": ["singer", "concert"],
        "table_names": ["singer", "concert"],
        "column_names_original": [
            [-1, "*"],
            [0, "singer_id"],
            [0, "name"],
            [0, "age"],
            [1, "concert_id"],
            [1, "year"],
        ],
        "column_names": [
            [-1, "*"],
            [0, "singer id"],
            [0, "name"],
            [0, "age"],
            [1, "concert id"],
            [1, "year"],
        ],
        "column_types": ["text", "number", "text", "number", "number", "time"],
        "primary_keys": [1, 4],
        "foreign_keys": [],
    }
    path = tmp_path / "tables.json"
    path.write_text(json.dumps([record]))
    return path
