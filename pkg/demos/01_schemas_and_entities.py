"""Schemas, entity sequences, and generator inputs.

Every synthesized example starts from a schema: the tables, typed columns,
and key links of one database. A query's "entity sequence" is the ordered,
deduplicated list of table.column pairs it mentions, and the formatted
generator input is the human-friendly rendering the question generator
consumes.
"""

from sqlsynth.schema import SchemaGraph, extract_entity_sequence, format_generator_input
from sqlsynth.toygen import build_toy_corpus

corpus = build_toy_corpus(n_domains=7, pairs_per_domain=20, seed=0)
print(f"{len(corpus.schemas)} toy domains; zero-shot hold-out: {corpus.zero_shot_db}\n")

schema = corpus.schemas[0]
print(f"schema {schema.db_id!r}: tables {schema.tables}")
for t_idx, name, ctype in schema.columns:
    print(f"  {schema.tables[t_idx]}.{name:<10} {ctype}")

print("\nentity extraction from gold SQL (first-appearance order, dedup):")
for pair in corpus.train_pairs[:5]:
    if pair.db_id != schema.db_id:
        continue
    seq = extract_entity_sequence(pair.sql, schema)
    print(f"  {pair.sql}")
    print(f"    -> {[str(e) for e in seq.entities]}")

print("\nformatted generator inputs (underscores become spaces):")
seen = set()
for pair in corpus.train_pairs:
    if pair.db_id != schema.db_id:
        continue
    seq = extract_entity_sequence(pair.sql, schema)
    if not seq.entities or seq.key() in seen:
        continue
    seen.add(seq.key())
    print(f"  {format_generator_input(seq, schema)}")
    if len(seen) == 4:
        break

# a schema with underscored names, to show the normalization
management = SchemaGraph(
    db_id="department_management",
    tables=("head",),
    columns=((0, "name", "text"), (0, "age", "number"), (0, "born_state", "text")),
)
seq = extract_entity_sequence(
    "SELECT head.name, head.age, head.born_state FROM head", management
)
print("\nwith underscored identifiers:")
print(f"  {format_generator_input(seq, management)}")
