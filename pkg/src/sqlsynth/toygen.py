"""Synthetic multi-domain corpus for desk-scale experiments.

Eight single-table domains with typed columns and template-generated
question/SQL pairs. Column usage is deliberately concentrated (a Zipf-like
draw), mirroring the skew of real datasets, so augmentation has diversity
headroom to add. Domain vocabulary overlaps across domains, which is what
gives the zero-shot domain a fighting chance.
"""

from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .parser import schema_ddl
from .schema import AnnotatedPair, SchemaGraph, humanize

# (db_id, table, columns, category values for equality filters)
_CATALOG = [
    ("campus_staff", "teacher",
     [("name", "text"), ("age", "number"), ("salary", "number"), ("subject", "text")],
     {"subject": ["math", "art", "music"]}),
    ("city_parks", "park",
     [("name", "text"), ("area", "number"), ("rating", "number"), ("city", "text")],
     {"city": ["york", "dover"]}),
    ("book_shop", "book",
     [("title", "text"), ("price", "number"), ("year", "time"), ("genre", "text")],
     {"genre": ["crime", "poetry"]}),
    ("harbor_fleet", "ship",
     [("name", "text"), ("weight", "number"), ("built_year", "time"), ("port", "text")],
     {"port": ["dover", "malta"]}),
    ("cinema_hall", "movie",
     [("title", "text"), ("year", "time"), ("rating", "number"), ("director", "text")],
     {"director": ["lee", "kane"]}),
    ("pet_clinic", "pet",
     [("name", "text"), ("age", "number"), ("weight", "number"), ("species", "text")],
     {"species": ["cat", "dog"]}),
    ("music_label", "album",
     [("title", "text"), ("year", "time"), ("price", "number"), ("artist", "text")],
     {"artist": ["nova", "echo"]}),
    ("grand_hotel", "room",
     [("label", "text"), ("price", "number"), ("capacity", "number"), ("view", "text")],
     {"view": ["sea", "garden"]}),
]

_COLUMN_WEIGHTS = np.array([12.0, 4.0, 2.0, 1.0])
_AGG_WORDS = {"AVG": "average", "MAX": "maximum", "MIN": "minimum", "SUM": "total"}


@dataclass
class ToyCorpus:
    schemas: list[SchemaGraph]
    train_pairs: list[AnnotatedPair]
    eval_pairs: list[AnnotatedPair]
    zero_shot_db: str
    zero_shot_pairs: list[AnnotatedPair] = field(default_factory=list)

    @property
    def train_schemas(self) -> list[SchemaGraph]:
        return [s for s in self.schemas if s.db_id != self.zero_shot_db]

    @property
    def zero_shot_schema(self) -> SchemaGraph:
        return next(s for s in self.schemas if s.db_id == self.zero_shot_db)


def _blueprint_schema(db_id, table, columns) -> SchemaGraph:
    return SchemaGraph(
        db_id=db_id,
        tables=(table,),
        columns=tuple((0, name, ctype) for name, ctype in columns),
        primary_keys=frozenset(),
        foreign_keys=frozenset(),
    )


def _threshold_pool(col: str, ctype: str) -> list[int]:
    if ctype == "time" or "year" in col:
        return [1990, 2000, 2010]
    if col == "salary":
        return [1000, 2000]
    return [5, 10, 20, 50]


def _pick_column(columns, rng, numeric_only=False):
    idxs = [
        i
        for i, (_, ctype) in enumerate(columns)
        if not numeric_only or ctype in ("number", "time")
    ]
    w = _COLUMN_WEIGHTS[idxs]
    return int(rng.choice(idxs, p=w / w.sum()))


def _domain_pair(table, columns, categories, rng) -> tuple[str, str]:
    """One template draw: a (question, SQL) pair for this domain."""
    ph = lambda c: humanize(c)
    col = lambda i: f"{table}.{columns[i][0]}"
    kind = rng.choice(
        ["list", "pair", "distinct", "count", "agg", "filter_gt", "filter_eq",
         "order", "top1", "group", "count_filter"],
        p=[0.22, 0.07, 0.08, 0.10, 0.10, 0.12, 0.08, 0.08, 0.07, 0.04, 0.04],
    )
    c = _pick_column(columns, rng)
    if kind == "list":
        return (f"List the {ph(columns[c][0])} of every {table}.",
                f"SELECT {col(c)} FROM {table}")
    if kind == "pair":
        d = _pick_column(columns, rng)
        while d == c:
            d = _pick_column(columns, rng)
        return (f"Show the {ph(columns[c][0])} and {ph(columns[d][0])} of each {table}.",
                f"SELECT {col(c)}, {col(d)} FROM {table}")
    if kind == "distinct":
        return (f"What are the different {ph(columns[c][0])}s of the {table}s?",
                f"SELECT DISTINCT {col(c)} FROM {table}")
    if kind == "count":
        return (f"How many {table}s are there?", f"SELECT COUNT(*) FROM {table}")
    if kind == "agg":
        n = _pick_column(columns, rng, numeric_only=True)
        op = str(rng.choice(["AVG", "MAX", "MIN", "SUM"]))
        return (f"What is the {_AGG_WORDS[op]} {ph(columns[n][0])} of all {table}s?",
                f"SELECT {op}({col(n)}) FROM {table}")
    if kind == "filter_gt":
        n = _pick_column(columns, rng, numeric_only=True)
        v = int(rng.choice(_threshold_pool(*columns[n])))
        return (
            f"List the {ph(columns[c][0])} of {table}s with {ph(columns[n][0])} above {v}.",
            f"SELECT {col(c)} FROM {table} WHERE {col(n)} > {v}",
        )
    if kind == "filter_eq":
        cat = next(i for i, (name, _) in enumerate(columns) if name in categories)
        v = str(rng.choice(categories[columns[cat][0]]))
        return (
            f"What is the {ph(columns[c][0])} of the {table} whose {ph(columns[cat][0])} is {v}?",
            f"SELECT {col(c)} FROM {table} WHERE {col(cat)} = '{v}'",
        )
    if kind == "order":
        k = _pick_column(columns, rng, numeric_only=True)
        if bool(rng.integers(0, 2)):
            return (
                f"Show the {ph(columns[c][0])} of {table}s sorted by {ph(columns[k][0])}.",
                f"SELECT {col(c)} FROM {table} ORDER BY {col(k)}",
            )
        return (
            f"Show the {ph(columns[c][0])} of {table}s in descending order of {ph(columns[k][0])}.",
            f"SELECT {col(c)} FROM {table} ORDER BY {col(k)} DESC",
        )
    if kind == "top1":
        n = _pick_column(columns, rng, numeric_only=True)
        return (
            f"What is the {ph(columns[c][0])} of the {table} with the highest {ph(columns[n][0])}?",
            f"SELECT {col(c)} FROM {table} ORDER BY {col(n)} DESC LIMIT 1",
        )
    if kind == "group":
        cat = next(i for i, (name, _) in enumerate(columns) if name in categories)
        return (
            f"How many {table}s are there for each {ph(columns[cat][0])}?",
            f"SELECT {col(cat)}, COUNT(*) FROM {table} GROUP BY {col(cat)}",
        )
    # count_filter
    n = _pick_column(columns, rng, numeric_only=True)
    v = int(rng.choice(_threshold_pool(*columns[n])))
    return (
        f"How many {table}s have {ph(columns[n][0])} above {v}?",
        f"SELECT COUNT(*) FROM {table} WHERE {col(n)} > {v}",
    )


def build_toy_corpus(
    n_domains: int = 7,
    pairs_per_domain: int = 100,
    eval_fraction: float = 0.15,
    seed: int = 0,
) -> ToyCorpus:
    """Grammar-generated corpus: the last domain is held out entirely
    (zero-shot: schema only at synthesis time; its pairs are kept for
    reporting)."""
    if not 2 <= n_domains <= len(_CATALOG):
        raise ValueError(f"n_domains must be in [2, {len(_CATALOG)}]")
    rng = np.random.default_rng(seed)
    picked = _CATALOG[:n_domains]
    schemas = [_blueprint_schema(db, table, cols) for db, table, cols, _ in picked]
    zero_shot_db = picked[-1][0]
    train_pairs: list[AnnotatedPair] = []
    eval_pairs: list[AnnotatedPair] = []
    zero_shot_pairs: list[AnnotatedPair] = []
    for db_id, table, cols, cats in picked:
        pairs = [
            AnnotatedPair(*_domain_pair(table, cols, cats, rng), db_id=db_id)
            for _ in range(pairs_per_domain)
        ]
        if db_id == zero_shot_db:
            zero_shot_pairs.extend(pairs)
            continue
        n_eval = max(1, int(round(eval_fraction * len(pairs))))
        order = rng.permutation(len(pairs))
        eval_idx = set(order[:n_eval].tolist())
        for i, p in enumerate(pairs):
            (eval_pairs if i in eval_idx else train_pairs).append(p)
    return ToyCorpus(
        schemas=schemas,
        train_pairs=train_pairs,
        eval_pairs=eval_pairs,
        zero_shot_db=zero_shot_db,
        zero_shot_pairs=zero_shot_pairs,
    )


def materialize_databases(
    schemas: list[SchemaGraph], out_dir: str | Path, rows: int = 30, seed: int = 0
) -> None:
    """Write one seeded sqlite file per schema, with plausible content."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    categories = {db: cats for db, _, _, cats in _CATALOG}
    for schema in schemas:
        rng = np.random.default_rng(seed + len(schema.db_id))
        path = out_dir / f"{schema.db_id}.sqlite"
        if path.exists():
            path.unlink()
        conn = sqlite3.connect(path)
        conn.executescript(schema_ddl(schema))
        cats = categories.get(schema.db_id, {})
        for t_idx, table in enumerate(schema.tables):
            cols = [(name, ctype) for ct, name, ctype in schema.columns if ct == t_idx]
            for r in range(rows):
                row = []
                for name, ctype in cols:
                    if name in cats:
                        row.append(str(rng.choice(cats[name])))
                    elif ctype == "time" or "year" in name:
                        row.append(int(rng.integers(1985, 2016)))
                    elif name == "salary":
                        row.append(int(rng.integers(500, 2600)))
                    elif ctype in ("number", "boolean"):
                        row.append(int(rng.integers(0, 61)))
                    else:
                        row.append(f"{name}_{r}")
                holes = ", ".join("?" for _ in row)
                conn.execute(f'INSERT INTO "{table}" VALUES ({holes})', row)
        conn.commit()
        conn.close()


def write_corpus_files(corpus: ToyCorpus, out_dir: str | Path) -> dict[str, Path]:
    """Spider-style tables/examples files for the CLI and demos."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for schema in corpus.schemas:
        records.append(
            {
                "db_id": schema.db_id,
                "table_names_original": list(schema.tables),
                "table_names": [humanize(t) for t in schema.tables],
                "column_names_original": [[-1, "*"]]
                + [[t, name] for t, name, _ in schema.columns],
                "column_names": [[-1, "*"]]
                + [[t, humanize(name)] for t, name, _ in schema.columns],
                "column_types": ["text"] + [ctype for _, _, ctype in schema.columns],
                "primary_keys": [],
                "foreign_keys": [],
            }
        )
    paths = {"tables": out_dir / "tables.json"}
    paths["tables"].write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
    for name, pairs in [
        ("train", corpus.train_pairs),
        ("eval", corpus.eval_pairs),
        ("zero_shot", corpus.zero_shot_pairs),
    ]:
        recs = [{"question": p.question, "query": p.sql, "db_id": p.db_id} for p in pairs]
        paths[name] = out_dir / f"{name}.json"
        paths[name].write_text(json.dumps(recs, indent=2) + "\n", encoding="utf-8")
    return paths
