"""Token-level grammar for the reference parser's SQL subset.

The decoder emits one token per step; the automaton says which tokens are
legal next, so every decoded query is well-formed and references only the
given schema. Covered subset: single SELECT with optional DISTINCT,
aggregates, one optional JOIN ... ON, WHERE with up to three AND/OR
conditions, GROUP BY, ORDER BY with direction, and LIMIT.

Token specs are tuples: ("kw", word), ("tab", table_index),
("col", column_index), ("val", literal_text), and ("end",).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import UnsupportedConstructError
from .schema import Entity, SchemaGraph
from . import sqltext

KEYWORDS = [
    "SELECT", "DISTINCT", "COUNT", "MAX", "MIN", "AVG", "SUM", "(", ")", "*",
    ",", "FROM", "JOIN", "ON", "WHERE", "AND", "OR", "=", ">", "<", ">=",
    "<=", "!=", "GROUP", "BY", "ORDER", "ASC", "DESC", "LIMIT",
]
AGG_KWS = ("COUNT", "MAX", "MIN", "AVG", "SUM")
CMP_KWS = ("=", ">", "<", ">=", "<=", "!=")
END = ("end",)

MAX_SELECT_ITEMS = 4
MAX_CONDITIONS = 3


@dataclass(frozen=True)
class GrammarState:
    phase: str = "select"
    agg: str | None = None
    agg_ctx: str | None = None  # "sel" or "order"
    n_sel: int = 0
    distinct: bool = False
    cols_used: frozenset = frozenset()
    from_tab: int | None = None
    join_tab: int | None = None
    n_conds: int = 0


class SqlGrammar:
    """Legal-move oracle over one schema."""

    def __init__(self, schema: SchemaGraph):
        self.schema = schema
        self.col_table = [t_idx for t_idx, _, _ in schema.columns]
        self.cols_of_table: dict[int, list[int]] = {i: [] for i in range(len(schema.tables))}
        for c, t_idx in enumerate(self.col_table):
            self.cols_of_table[t_idx].append(c)
        self.n_tables = len(schema.tables)
        self.n_cols = len(schema.columns)

    def initial_state(self) -> GrammarState:
        return GrammarState()

    # -- helpers -----------------------------------------------------------
    def _used_tables(self, state: GrammarState) -> frozenset:
        return frozenset(self.col_table[c] for c in state.cols_used)

    def _scope_tables(self, state: GrammarState) -> frozenset:
        scope = set()
        if state.from_tab is not None:
            scope.add(state.from_tab)
        if state.join_tab is not None:
            scope.add(state.join_tab)
        return frozenset(scope)

    def _pre_from_cols(self, state: GrammarState) -> list:
        """Columns pickable before FROM: never exceed a two-table footprint."""
        used = self._used_tables(state)
        out = []
        for c in range(self.n_cols):
            if len(used | {self.col_table[c]}) <= 2:
                out.append(("col", c))
        return out

    def _scope_cols(self, state: GrammarState) -> list:
        scope = self._scope_tables(state)
        return [("col", c) for c in range(self.n_cols) if self.col_table[c] in scope]

    def _missing_tables(self, state: GrammarState) -> frozenset:
        return self._used_tables(state) - self._scope_tables(state)

    # -- the automaton -----------------------------------------------------
    def legal(self, state: GrammarState, values: list[str]) -> list:
        """Legal next token specs; `values` is the parser's literal vocab."""
        p = state.phase
        if p == "select":
            return [("kw", "SELECT")]
        if p == "sel_item":
            out: list = []
            if state.n_sel == 0 and not state.distinct:
                out.append(("kw", "DISTINCT"))
            out.extend(("kw", a) for a in AGG_KWS)
            out.extend(self._pre_from_cols(state))
            return out
        if p == "agg_open":
            return [("kw", "(")]
        if p == "agg_arg":
            out = []
            if state.agg == "COUNT":
                out.append(("kw", "*"))
            if state.agg_ctx == "sel":
                out.extend(self._pre_from_cols(state))
            else:
                out.extend(self._scope_cols(state))
            return out
        if p == "agg_close":
            return [("kw", ")")]
        if p == "sel_after":
            out = [("kw", "FROM")]
            if state.n_sel < MAX_SELECT_ITEMS:
                out.append(("kw", ","))
            return out
        if p == "from":
            used = self._used_tables(state)
            if len(used) >= 2:
                return [("tab", t) for t in sorted(used)]
            return [("tab", t) for t in range(self.n_tables)]
        if p == "after_from":
            missing = self._missing_tables(state)
            if missing:
                return [("kw", "JOIN")]
            out = [("kw", "WHERE"), ("kw", "GROUP"), ("kw", "ORDER"), ("kw", "LIMIT"), END]
            if state.join_tab is None and self.n_tables > 1:
                out.insert(0, ("kw", "JOIN"))
            return out
        if p == "join":
            missing = self._missing_tables(state)
            if missing:
                return [("tab", t) for t in sorted(missing)]
            return [("tab", t) for t in range(self.n_tables) if t != state.from_tab]
        if p == "on_kw":
            return [("kw", "ON")]
        if p == "on_left":
            return [("col", c) for c in self.cols_of_table[state.from_tab]]
        if p == "on_eq":
            return [("kw", "=")]
        if p == "on_right":
            return [("col", c) for c in self.cols_of_table[state.join_tab]]
        if p == "where_col":
            return self._scope_cols(state)
        if p == "where_cmp":
            return [("kw", c) for c in CMP_KWS]
        if p == "where_rhs":
            return [("val", v) for v in values] + self._scope_cols(state)
        if p == "where_after":
            out = [("kw", "GROUP"), ("kw", "ORDER"), ("kw", "LIMIT"), END]
            if state.n_conds < MAX_CONDITIONS:
                out = [("kw", "AND"), ("kw", "OR")] + out
            return out
        if p == "group_by":
            return [("kw", "BY")]
        if p == "group_col":
            return self._scope_cols(state)
        if p == "after_group":
            return [("kw", "ORDER"), ("kw", "LIMIT"), END]
        if p == "order_by":
            return [("kw", "BY")]
        if p == "order_item":
            return [("kw", a) for a in AGG_KWS] + self._scope_cols(state)
        if p == "after_order":
            return [("kw", "ASC"), ("kw", "DESC"), ("kw", "LIMIT"), END]
        if p == "after_dir":
            return [("kw", "LIMIT"), END]
        if p == "limit_val":
            return [("val", v) for v in values if v.isdigit()]
        if p == "done":
            return [END]
        raise AssertionError(f"unknown grammar phase {p!r}")

    def advance(self, state: GrammarState, spec) -> GrammarState:
        """Apply one (assumed legal) token; returns the successor state."""
        p = state.phase
        kind = spec[0]
        if p == "select":
            return replace(state, phase="sel_item")
        if p == "sel_item":
            if kind == "kw" and spec[1] == "DISTINCT":
                return replace(state, distinct=True)
            if kind == "kw":  # aggregate
                return replace(state, phase="agg_open", agg=spec[1], agg_ctx="sel")
            return replace(
                state,
                phase="sel_after",
                n_sel=state.n_sel + 1,
                cols_used=state.cols_used | {spec[1]},
            )
        if p == "agg_open":
            return replace(state, phase="agg_arg")
        if p == "agg_arg":
            new = state
            if kind == "col":
                if state.agg_ctx == "sel":
                    new = replace(state, cols_used=state.cols_used | {spec[1]})
                else:
                    new = state
            return replace(new, phase="agg_close")
        if p == "agg_close":
            if state.agg_ctx == "sel":
                return replace(state, phase="sel_after", n_sel=state.n_sel + 1, agg=None, agg_ctx=None)
            return replace(state, phase="after_order", agg=None, agg_ctx=None)
        if p == "sel_after":
            if spec == ("kw", ","):
                return replace(state, phase="sel_item")
            return replace(state, phase="from")
        if p == "from":
            return replace(state, phase="after_from", from_tab=spec[1])
        if p == "after_from":
            if spec == ("kw", "JOIN"):
                return replace(state, phase="join")
            return self._tail(state, spec)
        if p == "join":
            return replace(state, phase="on_kw", join_tab=spec[1])
        if p == "on_kw":
            return replace(state, phase="on_left")
        if p == "on_left":
            return replace(state, phase="on_eq")
        if p == "on_eq":
            return replace(state, phase="on_right")
        if p == "on_right":
            return replace(state, phase="after_from")
        if p == "where_col":
            return replace(state, phase="where_cmp")
        if p == "where_cmp":
            return replace(state, phase="where_rhs")
        if p == "where_rhs":
            return replace(state, phase="where_after", n_conds=state.n_conds + 1)
        if p == "where_after":
            if spec in (("kw", "AND"), ("kw", "OR")):
                return replace(state, phase="where_col")
            return self._tail(state, spec)
        if p == "group_by":
            return replace(state, phase="group_col")
        if p == "group_col":
            return replace(state, phase="after_group")
        if p == "after_group":
            return self._tail(state, spec)
        if p == "order_by":
            return replace(state, phase="order_item")
        if p == "order_item":
            if kind == "kw":
                return replace(state, phase="agg_open", agg=spec[1], agg_ctx="order")
            return replace(state, phase="after_order")
        if p == "after_order":
            if spec in (("kw", "ASC"), ("kw", "DESC")):
                return replace(state, phase="after_dir")
            return self._tail(state, spec)
        if p == "after_dir":
            return self._tail(state, spec)
        if p == "limit_val":
            return replace(state, phase="done")
        raise AssertionError(f"cannot advance from phase {p!r} with {spec!r}")

    def _tail(self, state: GrammarState, spec) -> GrammarState:
        if spec == ("kw", "WHERE"):
            return replace(state, phase="where_col")
        if spec == ("kw", "GROUP"):
            return replace(state, phase="group_by")
        if spec == ("kw", "ORDER"):
            return replace(state, phase="order_by")
        if spec == ("kw", "LIMIT"):
            return replace(state, phase="limit_val")
        if spec == END:
            return replace(state, phase="done")
        raise AssertionError(f"unexpected tail token {spec!r}")

    # -- text <-> specs ----------------------------------------------------
    def render(self, specs: list) -> str:
        """Token specs back to SQL text."""
        tokens = []
        for spec in specs:
            kind = spec[0]
            if kind == "kw":
                tokens.append(spec[1])
            elif kind == "tab":
                tokens.append(self.schema.tables[spec[1]])
            elif kind == "col":
                t_idx, name, _ = self.schema.columns[spec[1]]
                tokens.append(f"{self.schema.tables[t_idx]}.{name}")
            elif kind == "val":
                tokens.append(spec[1])
            elif kind == "end":
                continue
        return sqltext.render_tokens(tokens)

    def encode(self, sql: str, values: list[str]) -> list:
        """Gold SQL to token specs, validated against the automaton.

        Raises UnsupportedConstructError when the query falls outside the
        subset or a literal is missing from the value vocabulary.
        """
        raw = sqltext.tokenize_sql(sql)
        while raw and raw[-1] == ";":
            raw = raw[:-1]
        aliases = sqltext.table_aliases(raw, set(self.schema.tables))
        scope = sqltext.from_scope_tables(raw, set(self.schema.tables))
        columns_by_table = self.schema.columns_by_table()
        kw_by_lower = {k.lower(): k for k in KEYWORDS}
        table_by_lower = {t.lower(): i for i, t in enumerate(self.schema.tables)}
        value_set = set(values)
        specs: list = []
        skip_next = False
        for i, tok in enumerate(raw):
            if skip_next:
                skip_next = False
                continue
            low = tok.lower()
            if low == "as":
                skip_next = True
                continue
            if low == "<>":
                specs.append(("kw", "!="))
            elif low in kw_by_lower:
                specs.append(("kw", kw_by_lower[low]))
            elif sqltext.is_string_literal(tok) or sqltext.is_number_literal(tok):
                if tok not in value_set:
                    raise UnsupportedConstructError(f"literal {tok!r} outside the value vocabulary")
                specs.append(("val", tok))
            elif sqltext.is_identifier(tok):
                if "." not in tok and (low in table_by_lower or low in aliases):
                    name = aliases.get(low, self.schema.tables[table_by_lower[low]] if low in table_by_lower else None)
                    specs.append(("tab", table_by_lower[name.lower()]))
                else:
                    resolved = sqltext.resolve_column_token(tok, aliases, scope, columns_by_table)
                    if resolved is None:
                        raise UnsupportedConstructError(f"identifier {tok!r}")
                    specs.append(("col", self.schema.column_index(Entity(*resolved))))
            else:
                raise UnsupportedConstructError(f"token {tok!r}")
        specs.append(END)
        state = self.initial_state()
        for spec in specs:
            if spec not in self.legal(state, values):
                raise UnsupportedConstructError(
                    f"{self.render([spec]) or spec!r} at phase {state.phase!r}"
                )
            if spec != END:
                state = self.advance(state, spec)
        return specs
