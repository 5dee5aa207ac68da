"""Text-to-SQL parser interface, reference implementation, and execution.

The parser maps (question, schema) to scored SQL candidates. It serves two
roles: the teacher that self-labels generated questions (with executability
filtering), and the student retrained on augmented data. The reference
implementation is a desk-scale schema-conditioned seq2seq whose decoding is
constrained by the grammar in :mod:`sqlsynth.grammar`, so emitted SQL is
well-formed over the given schema by construction. Any object with the same
``beam_candidates`` surface can be plugged in instead.
"""

from __future__ import annotations

import sqlite3
import threading
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import UnknownDbError, UntrainedModelError
from .grammar import END, KEYWORDS, SqlGrammar
from .nets import (
    HashedWordEmbedding,
    SchemaEncoder,
    TextEncoder,
    bucket_ids,
    epoch_batches,
    load_state_from_numpy,
    name_words,
    pad_id_batch,
    state_to_numpy,
    tokenize_text,
)
from .schema import AnnotatedPair, SchemaGraph
from . import sqltext
from .sqltext import canonical_sql


@dataclass
class ParserTrainConfig:
    learning_rate: float = 1.5e-3
    epochs: int = 30
    batch_size: int = 16
    grad_clip: float = 1.0
    seed: int = 0
    beam_size: int = 8  # prediction beam used for self-labeling
    max_len: int = 40

    def __post_init__(self):
        if min(self.learning_rate, self.epochs, self.batch_size, self.grad_clip) <= 0:
            raise ValueError("training hyperparameters must be positive")


@dataclass
class ParserNetConfig:
    emb_dim: int = 64
    enc_hidden: int = 64
    dec_hidden: int = 128


_KIND_INDEX = {"kw": 0, "end": 1, "val": 2, "tab": 3, "col": 3}


class ParserNet(nn.Module):
    """Question encoder + grammar-token decoder with schema pointers."""

    def __init__(self, values: list[str], cfg: ParserNetConfig):
        super().__init__()
        self.cfg = cfg
        self.values = list(values)
        e, h = cfg.emb_dim, cfg.dec_hidden
        src = 2 * cfg.enc_hidden
        d = e  # schema item space
        self.encoder = TextEncoder(e, cfg.enc_hidden)
        self.schema_enc = SchemaEncoder(d)
        self.presence = nn.Embedding(2, d)
        self.kw_in = nn.Embedding(len(KEYWORDS), e)
        self.val_in = HashedWordEmbedding(e)
        self.item_in = nn.Linear(d, e)
        self.kind_in = nn.Embedding(4, e)
        self.cell = nn.GRUCell(e + src, h)
        self.init_h = nn.Linear(src, h)
        self.att = nn.Linear(h, src, bias=False)
        self.out = nn.Linear(h + src, h)
        self.kw_out = nn.Linear(h, len(KEYWORDS))
        self.end_out = nn.Linear(h, 1)
        self.val_emb = nn.Embedding(len(self.values), h)
        self.ptr = nn.Linear(h, d)

    # -- per-(question, schema) context -------------------------------------
    def encode_question(self, questions: list[list[str]]):
        ids = [bucket_ids(q) for q in questions]
        padded, mask = pad_id_batch(ids)
        states, summary = self.encoder(padded, mask)
        return states, mask, torch.tanh(self.init_h(summary))

    def schema_items(self, schema: SchemaGraph, question_tokens: list[str]) -> torch.Tensor:
        """Table and column vectors with a question-overlap flag mixed in."""
        tabs, cols = self.schema_enc.encode(schema)
        q_buckets = set(bucket_ids(question_tokens).tolist()) if question_tokens else set()

        def flag(words: list[str]) -> int:
            return int(bool(set(bucket_ids(words).tolist()) & q_buckets)) if words else 0

        tab_flags = [flag(name_words(t)) for t in schema.tables]
        col_flags = [flag(name_words(name)) for _, name, _ in schema.columns]
        flags = torch.tensor(tab_flags + col_flags, dtype=torch.long)
        items = torch.cat([tabs, cols], dim=0)
        return items + self.presence(flags)

    def input_embedding(self, spec, items: torch.Tensor, n_tables: int) -> torch.Tensor:
        kind = spec[0]
        if kind == "kw":
            base = self.kw_in.weight[KEYWORDS.index(spec[1])]
        elif kind == "val":
            base = self.val_in.embed_words([spec[1]])
        elif kind == "tab":
            base = self.item_in(items[spec[1]])
        elif kind == "col":
            base = self.item_in(items[n_tables + spec[1]])
        else:
            base = self.kw_in.weight.new_zeros(self.cfg.emb_dim)
        return base + self.kind_in.weight[_KIND_INDEX[kind]]


def _spec_index(spec, n_values: int, n_tables: int, values_index: dict) -> int:
    kind = spec[0]
    if kind == "kw":
        return KEYWORDS.index(spec[1])
    if kind == "end":
        return len(KEYWORDS)
    if kind == "val":
        return len(KEYWORDS) + 1 + values_index[spec[1]]
    if kind == "tab":
        return len(KEYWORDS) + 1 + n_values + spec[1]
    return len(KEYWORDS) + 1 + n_values + n_tables + spec[1]


@dataclass
class ParserModel:
    net: ParserNet
    net_config: ParserNetConfig
    train_config: ParserTrainConfig
    trained: bool = False
    train_log: list = field(default_factory=list)
    n_skipped: int = 0  # training examples outside the grammar subset

    @property
    def values(self) -> list[str]:
        return self.net.values

    def to_checkpoint(self) -> dict:
        return {
            "kind": "parser",
            "values": list(self.net.values),
            "net_config": vars(self.net_config),
            "train_config": vars(self.train_config),
            "trained": self.trained,
            "train_log": list(self.train_log),
            "n_skipped": self.n_skipped,
            "state": state_to_numpy(self.net),
        }

    @classmethod
    def from_checkpoint(cls, payload: dict) -> "ParserModel":
        net_config = ParserNetConfig(**payload["net_config"])
        net = ParserNet(payload["values"], net_config)
        load_state_from_numpy(net, payload["state"])
        return cls(
            net=net,
            net_config=net_config,
            train_config=ParserTrainConfig(**payload["train_config"]),
            trained=payload["trained"],
            train_log=list(payload["train_log"]),
            n_skipped=payload.get("n_skipped", 0),
        )

    def beam_candidates(self, question: str, schema: SchemaGraph, k: int):
        """The pluggable-parser surface: scored SQL candidates, best first."""
        if not self.trained:
            raise UntrainedModelError("parser has not been trained")
        with torch.no_grad():
            return _beam_decode(self, question, schema, k)


def collect_literals(examples: list[AnnotatedPair]) -> list[str]:
    """Literal vocabulary from training SQL, plus a guaranteed "1"."""
    seen = {"1"}
    for ex in examples:
        try:
            for tok in sqltext.tokenize_sql(ex.sql):
                if sqltext.is_number_literal(tok) or sqltext.is_string_literal(tok):
                    seen.add(tok)
        except Exception:
            continue
    return sorted(seen)


def _encode_examples(
    examples: list[AnnotatedPair],
    weights: list[float],
    schemas_by_id: dict[str, SchemaGraph],
    grammars: dict[str, SqlGrammar],
    values: list[str],
):
    encoded = []
    n_skipped = 0
    for ex, w in zip(examples, weights):
        grammar = grammars[ex.db_id]
        try:
            specs = grammar.encode(ex.sql, values)
        except Exception:
            n_skipped += 1
            continue
        encoded.append((ex.db_id, tokenize_text(ex.question), specs, w))
    return encoded, n_skipped


def _batch_nll(
    net: ParserNet,
    grammar: SqlGrammar,
    schema: SchemaGraph,
    batch: list[tuple[list[str], list]],
) -> torch.Tensor:
    """Per-example sequence NLLs [B] for one schema's batch (teacher forcing)."""
    questions = [q for q, _ in batch]
    states, mask, h = net.encode_question(questions)
    item_rows = torch.stack([net.schema_items(schema, q) for q in questions])
    n_tables = len(schema.tables)
    values_index = {v: i for i, v in enumerate(net.values)}
    n_out = len(KEYWORDS) + 1 + len(net.values) + n_tables + len(schema.columns)
    batch_size = len(batch)
    ctx = torch.zeros(batch_size, states.shape[-1])
    inp = torch.stack(
        [net.kind_in.weight[_KIND_INDEX["end"]] for _ in range(batch_size)]
    )  # neutral start symbol
    spec_seqs = [specs for _, specs in batch]
    t_max = max(len(s) for s in spec_seqs)
    nll = torch.zeros(batch_size)
    gram_states = [grammar.initial_state() for _ in range(batch_size)]
    for t in range(t_max):
        step_items = item_rows  # [B, N, d]
        h, ctx, logits = _step_all(net, h, ctx, inp, states, mask, step_items)
        legal_mask = torch.zeros(batch_size, n_out, dtype=torch.bool)
        targets = torch.zeros(batch_size, dtype=torch.long)
        active = torch.zeros(batch_size, dtype=torch.bool)
        for b, specs in enumerate(spec_seqs):
            if t >= len(specs):
                legal_mask[b, 0] = True  # keep the padded row's softmax finite
                continue
            active[b] = True
            for legal_spec in grammar.legal(gram_states[b], net.values):
                legal_mask[b, _spec_index(legal_spec, len(net.values), n_tables, values_index)] = True
            targets[b] = _spec_index(specs[t], len(net.values), n_tables, values_index)
        masked = logits.masked_fill(~legal_mask, float("-inf"))
        logp = torch.log_softmax(masked, dim=-1)
        next_inp = []
        for b, specs in enumerate(spec_seqs):
            if t < len(specs):
                nll[b] = nll[b] - logp[b, targets[b]]
                spec = specs[t]
                if spec != END:
                    gram_states[b] = grammar.advance(gram_states[b], spec)
                next_inp.append(net.input_embedding(spec, item_rows[b], n_tables))
            else:
                next_inp.append(inp[b])
        inp = torch.stack(next_inp)
    return nll


def _step_all(net, h, ctx, inp, states, mask, items):
    h = net.cell(torch.cat([inp, ctx], dim=-1), h)
    scores = torch.bmm(states, net.att(h).unsqueeze(-1)).squeeze(-1)
    scores = scores.masked_fill(mask == 0, float("-inf"))
    attn = torch.softmax(scores, dim=-1)
    ctx = torch.bmm(attn.unsqueeze(1), states).squeeze(1)
    out = torch.tanh(net.out(torch.cat([h, ctx], dim=-1)))
    logits = torch.cat(
        [
            net.kw_out(out),
            net.end_out(out),
            out @ net.val_emb.weight.t(),
            torch.bmm(items, net.ptr(out).unsqueeze(-1)).squeeze(-1),
        ],
        dim=-1,
    )
    return h, ctx, logits


def train_parser(
    examples: list[AnnotatedPair],
    schemas: list[SchemaGraph],
    config: ParserTrainConfig | None = None,
    net_config: ParserNetConfig | None = None,
    weights: list[float] | None = None,
    init_model: ParserModel | None = None,
    vocab_examples: list[AnnotatedPair] | None = None,
) -> ParserModel:
    """Train the reference parser; deterministic given the seed.

    ``weights`` scale each example's loss (the student's weighted mixture
    path); omitted weights mean plain maximum likelihood. Batch loss is the
    weighted mean sum(w_i * nll_i) / sum(w_i). Examples outside the grammar
    subset are skipped and counted on the returned model. ``init_model``
    continues training from an existing model instead of a fresh
    initialization; ``vocab_examples`` widens the literal vocabulary beyond
    the given examples (for staged training).
    """
    if not examples:
        raise ValueError("empty parser training corpus")
    config = config or ParserTrainConfig()
    net_config = net_config or ParserNetConfig()
    weights = list(weights) if weights is not None else [1.0] * len(examples)
    if len(weights) != len(examples):
        raise ValueError("weights must align one-to-one with examples")
    schemas_by_id = {s.db_id: s for s in schemas}
    for ex in examples:
        if ex.db_id not in schemas_by_id:
            raise UnknownDbError(f"no schema for db {ex.db_id!r}")
    if init_model is not None:
        values = list(init_model.values)
    else:
        values = collect_literals(vocab_examples if vocab_examples is not None else examples)
    grammars = {db: SqlGrammar(s) for db, s in schemas_by_id.items()}
    encoded, n_skipped = _encode_examples(examples, weights, schemas_by_id, grammars, values)
    if not encoded:
        raise ValueError("no training example fits the parser's SQL subset")
    if n_skipped:
        warnings.warn(f"parser training skipped {n_skipped} examples outside the SQL subset")

    torch.manual_seed(config.seed)
    net = init_model.net if init_model is not None else ParserNet(values, net_config)
    model = ParserModel(net=net, net_config=net_config, train_config=config, n_skipped=n_skipped)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        epoch_loss, n_seen = 0.0, 0
        for batch_idx in epoch_batches(len(encoded), config.batch_size, rng):
            by_db: dict[str, list[int]] = {}
            for i in batch_idx:
                by_db.setdefault(encoded[i][0], []).append(i)
            num = torch.zeros(())
            den = 0.0
            for db, idxs in by_db.items():
                batch = [(encoded[i][1], encoded[i][2]) for i in idxs]
                nlls = _batch_nll(net, grammars[db], schemas_by_id[db], batch)
                w = torch.tensor([encoded[i][3] for i in idxs])
                num = num + (w * nlls).sum()
                den += float(w.sum())
            if den == 0.0:
                continue
            loss = num / den
            epoch_loss += float(num.detach())
            n_seen += len(batch_idx)
            loss.backward()
            nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
            opt.step()
            opt.zero_grad()
        model.train_log.append(epoch_loss / max(1, n_seen))
    model.trained = True
    return model


def batch_weighted_loss(nlls: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """The documented batch reduction: sum(w_i * nll_i) / sum(w_i)."""
    return (weights * nlls).sum() / weights.sum()


def example_nlls(model: ParserModel, examples: list[AnnotatedPair], schemas: list[SchemaGraph]) -> list[float]:
    """Per-example sequence NLLs under the model (teacher-forced)."""
    schemas_by_id = {s.db_id: s for s in schemas}
    out = []
    with torch.no_grad():
        for ex in examples:
            schema = schemas_by_id[ex.db_id]
            grammar = SqlGrammar(schema)
            specs = grammar.encode(ex.sql, model.values)
            nll = _batch_nll(model.net, grammar, schema, [(tokenize_text(ex.question), specs)])
            out.append(float(nll[0]))
    return out


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def parse_beam(
    model, question: str, schema: SchemaGraph, beam: int | None = None
) -> list[tuple[str, float]]:
    """Scored SQL candidates for one question, best first, at most ``beam``.

    ``model`` is anything exposing ``beam_candidates(question, schema, k)``;
    ordering and the size bound are enforced here regardless of backend.
    """
    if beam is not None:
        k = beam
    elif hasattr(model, "train_config"):
        k = model.train_config.beam_size
    else:
        k = 8
    if k < 1:
        raise ValueError("beam must be >= 1")
    cands = model.beam_candidates(question, schema, k)
    cands = sorted(cands, key=lambda c: (-c[1], c[0]))
    return cands[:k]


def _beam_decode(model: ParserModel, question: str, schema: SchemaGraph, k: int):
    net = model.net
    grammar = SqlGrammar(schema)
    q_tokens = tokenize_text(question)
    states1, mask1, h1 = net.encode_question([q_tokens])
    items = net.schema_items(schema, q_tokens)
    n_tables = len(schema.tables)
    n_values = len(net.values)
    values_index = {v: i for i, v in enumerate(net.values)}
    n_out = len(KEYWORDS) + 1 + n_values + n_tables + len(schema.columns)
    end_index = len(KEYWORDS)
    specs_by_index: list = (
        [("kw", w) for w in KEYWORDS]
        + [END]
        + [("val", v) for v in net.values]
        + [("tab", t) for t in range(n_tables)]
        + [("col", c) for c in range(len(schema.columns))]
    )

    live = [
        {
            "state": grammar.initial_state(),
            "specs": [],
            "score": 0.0,
        }
    ]
    h = h1
    ctx = torch.zeros(1, states1.shape[-1])
    inp = net.kind_in.weight[_KIND_INDEX["end"]].unsqueeze(0)
    finished: list[tuple[list, float]] = []
    max_len = model.train_config.max_len
    for t in range(max_len):
        n_live = len(live)
        states = states1.expand(n_live, -1, -1)
        mask = mask1.expand(n_live, -1)
        item_rows = items.unsqueeze(0).expand(n_live, -1, -1)
        h, ctx, logits = _step_all(net, h, ctx, inp, states, mask, item_rows)
        legal_mask = torch.zeros(n_live, n_out, dtype=torch.bool)
        for b, hyp in enumerate(live):
            for spec in grammar.legal(hyp["state"], net.values):
                legal_mask[b, _spec_index(spec, n_values, n_tables, values_index)] = True
        logp = torch.log_softmax(logits.masked_fill(~legal_mask, float("-inf")), dim=-1)
        total = torch.tensor([hyp["score"] for hyp in live]).unsqueeze(1) + logp
        flat = total.view(-1)
        n_cand = min((2 * k if k > 1 else 1), int((flat > float("-inf")).sum()))
        if n_cand == 0:
            break
        top = torch.topk(flat, n_cand)
        new_live = []
        keep_rows = []
        for val, idx in zip(top.values.tolist(), top.indices.tolist()):
            row, out_idx = divmod(idx, n_out)
            spec = specs_by_index[out_idx]
            if out_idx == end_index:
                length = max(1, len(live[row]["specs"]))
                finished.append((list(live[row]["specs"]), val / length))
                continue
            if len(new_live) < k:
                new_live.append(
                    {
                        "state": grammar.advance(live[row]["state"], spec),
                        "specs": live[row]["specs"] + [spec],
                        "score": val,
                    }
                )
                keep_rows.append((row, spec))
        if k == 1 and finished:
            break  # greedy: the argmax chose END
        if not new_live:
            break
        rows = torch.tensor([r for r, _ in keep_rows], dtype=torch.long)
        h, ctx = h[rows], ctx[rows]
        inp = torch.stack(
            [net.input_embedding(spec, items, n_tables) for _, spec in keep_rows]
        )
        live = new_live
        if len(finished) >= 4 * k:
            break
    if not finished:
        finished = [(hyp["specs"], hyp["score"] / max(1, len(hyp["specs"]))) for hyp in live]
    best: dict[str, float] = {}
    for specs, score in finished:
        sql = grammar.render(specs)
        if sql and (sql not in best or score > best[sql]):
            best[sql] = score
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def pred(
    model: ParserModel,
    questions: list[str],
    schema: SchemaGraph,
    env: "ExecEnvironment",
    beam: int | None = None,
) -> list[tuple[str, str, float]]:
    """Self-labeling filter: per question, the best executable candidate.

    Returns (question, sql, parser score) triples; questions with no
    executable candidate are dropped.
    """
    out = []
    for question in questions:
        for sql, score in parse_beam(model, question, schema, beam):
            if check_executable(sql, env, schema.db_id):
                out.append((question, sql, score))
                break
    return out


def exact_match(predicted: str, gold: str) -> bool:
    """Equality after canonicalization (keywords, spacing, conjunct order,
    values stripped). Approximate logical-form match, never raises."""
    return canonical_sql(predicted) == canonical_sql(gold)


def evaluate_em(
    model: ParserModel,
    pairs: list[AnnotatedPair],
    schemas: list[SchemaGraph],
    beam: int = 1,
) -> float:
    """Exact-match rate of top-1 predictions over a dataset."""
    if not pairs:
        return 0.0
    by_id = {s.db_id: s for s in schemas}
    hits = 0
    for ex in pairs:
        cands = parse_beam(model, ex.question, by_id[ex.db_id], beam)
        if cands and exact_match(cands[0][0], ex.sql):
            hits += 1
    return hits / len(pairs)


# ---------------------------------------------------------------------------
# execution environment
# ---------------------------------------------------------------------------

_SQLITE_TYPES = {
    "number": "NUMERIC",
    "text": "TEXT",
    "time": "TEXT",
    "boolean": "INTEGER",
    "others": "TEXT",
}


class ExecEnvironment:
    """Executable databases (when present) plus schema-only fallbacks.

    When a db file exists under ``db_dir`` the query runs against real
    content; otherwise it runs against an empty in-memory materialization
    of the schema, which validates identifiers and syntax. A statement
    timeout is enforced through sqlite's progress handler; access to each
    database is serialized with a per-db lock.
    """

    def __init__(
        self,
        schemas: list[SchemaGraph],
        db_dir: str | Path | None = None,
        timeout_s: float = 5.0,
    ):
        self.schemas = {s.db_id: s for s in schemas}
        self.db_dir = Path(db_dir) if db_dir is not None else None
        self.timeout_s = timeout_s
        self._locks: dict[str, threading.Lock] = {}
        self._conns: dict[str, sqlite3.Connection] = {}
        self._guard = threading.Lock()

    def has_database(self, db_id: str) -> bool:
        return self.db_dir is not None and (self.db_dir / f"{db_id}.sqlite").exists()

    def _lock_for(self, db_id: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(db_id, threading.Lock())

    def _connection(self, db_id: str) -> sqlite3.Connection:
        conn = self._conns.get(db_id)
        if conn is not None:
            return conn
        if self.has_database(db_id):
            conn = sqlite3.connect(self.db_dir / f"{db_id}.sqlite", check_same_thread=False)
        else:
            schema = self.schemas.get(db_id)
            if schema is None:
                raise UnknownDbError(f"no schema or database for {db_id!r}")
            conn = sqlite3.connect(":memory:", check_same_thread=False)
            conn.executescript(schema_ddl(schema))
        self._conns[db_id] = conn
        return conn

    def execute(self, db_id: str, sql: str) -> tuple[bool, str]:
        """(ok, detail). ok is True iff execution completed in time."""
        lock = self._lock_for(db_id)
        with lock:
            try:
                conn = self._connection(db_id)
            except UnknownDbError as exc:
                return False, str(exc)
            deadline = time.monotonic() + self.timeout_s
            conn.set_progress_handler(lambda: 1 if time.monotonic() > deadline else 0, 2000)
            try:
                cur = conn.execute(sql)
                cur.fetchmany(20)
                return True, "ok"
            except sqlite3.Error as exc:
                return False, f"{type(exc).__name__}: {exc}"
            finally:
                conn.set_progress_handler(None, 0)

    def close(self) -> None:
        for conn in self._conns.values():
            conn.close()
        self._conns.clear()


def schema_ddl(schema: SchemaGraph) -> str:
    """CREATE TABLE script materializing a schema with no content."""
    stmts = []
    for t_idx, table in enumerate(schema.tables):
        cols = [
            f'"{name}" {_SQLITE_TYPES[ctype]}'
            for col_t, name, ctype in schema.columns
            if col_t == t_idx
        ]
        if not cols:
            cols = ['"__placeholder" TEXT']
        stmts.append(f'CREATE TABLE IF NOT EXISTS "{table}" ({", ".join(cols)});')
    return "\n".join(stmts)


def check_executable(sql: str, env: ExecEnvironment, db_id: str) -> bool:
    """True iff the query executes without error within the timeout.

    Falls back to the schema-only materialization when no database file is
    present; empty result sets count as success. Never raises.
    """
    try:
        ok, _ = env.execute(db_id, sql)
    except Exception:
        return False
    return ok
