import pytest

from sqlsynth.grammar import SqlGrammar
from sqlsynth.parser import ExecEnvironment, check_executable, collect_literals
from sqlsynth.schema import extract_entity_sequence, load_examples, load_schemas
from sqlsynth.toygen import build_toy_corpus, materialize_databases, write_corpus_files


@pytest.fixture(scope="module")
def corpus():
    return build_toy_corpus(n_domains=7, pairs_per_domain=40, seed=1)


class TestBuildToyCorpus:
    def test_shape(self, corpus):
        assert len(corpus.schemas) == 7
        train_dbs = {p.db_id for p in corpus.train_pairs}
        assert corpus.zero_shot_db not in train_dbs
        assert len(train_dbs) == 6
        assert len(corpus.train_pairs) + len(corpus.eval_pairs) == 6 * 40

    def test_pairs_fit_parser_grammar(self, corpus):
        values = collect_literals(
            corpus.train_pairs + corpus.eval_pairs + corpus.zero_shot_pairs
        )
        by_id = {s.db_id: s for s in corpus.schemas}
        for pair in corpus.train_pairs + corpus.eval_pairs + corpus.zero_shot_pairs:
            grammar = SqlGrammar(by_id[pair.db_id])
            grammar.encode(pair.sql, values)  # raises if outside the subset

    def test_pairs_resolve_entities(self, corpus):
        by_id = {s.db_id: s for s in corpus.schemas}
        for pair in corpus.train_pairs[:50]:
            extract_entity_sequence(pair.sql, by_id[pair.db_id])

    def test_determinism(self):
        a = build_toy_corpus(n_domains=4, pairs_per_domain=10, seed=3)
        b = build_toy_corpus(n_domains=4, pairs_per_domain=10, seed=3)
        assert a.train_pairs == b.train_pairs
        assert a.eval_pairs == b.eval_pairs

    def test_column_usage_is_concentrated(self, corpus):
        # the corpus is built skewed so augmentation has diversity headroom
        from collections import Counter

        by_id = {s.db_id: s for s in corpus.schemas}
        db = corpus.train_pairs[0].db_id
        counts = Counter()
        for p in corpus.train_pairs:
            if p.db_id != db:
                continue
            seq = extract_entity_sequence(p.sql, by_id[db])
            for e in seq.entities:
                counts[str(e)] += 1
        top = counts.most_common()
        assert top[0][1] >= 3 * top[-1][1]


class TestMaterializeDatabases:
    def test_queries_execute_on_content(self, tmp_path, corpus):
        materialize_databases(corpus.schemas, tmp_path, rows=12, seed=0)
        env = ExecEnvironment(corpus.schemas, db_dir=tmp_path, timeout_s=2.0)
        for schema in corpus.schemas:
            assert env.has_database(schema.db_id)
        for pair in corpus.train_pairs[:40]:
            assert check_executable(pair.sql, env, pair.db_id)

    def test_rows_present(self, tmp_path, corpus):
        import sqlite3

        materialize_databases(corpus.schemas[:1], tmp_path, rows=9, seed=0)
        schema = corpus.schemas[0]
        conn = sqlite3.connect(tmp_path / f"{schema.db_id}.sqlite")
        (n,) = conn.execute(f'SELECT COUNT(*) FROM "{schema.tables[0]}"').fetchone()
        assert n == 9


class TestWriteCorpusFiles:
    def test_files_load_back(self, tmp_path, corpus):
        paths = write_corpus_files(corpus, tmp_path)
        schemas = load_schemas(paths["tables"])
        assert [s.db_id for s in schemas] == [s.db_id for s in corpus.schemas]
        train = load_examples(paths["train"], schemas)
        assert train == corpus.train_pairs
        evals = load_examples(paths["eval"], schemas)
        assert evals == corpus.eval_pairs
