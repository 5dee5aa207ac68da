"""SQL tokenization, identifier resolution, and canonicalization.

Shared machinery behind entity extraction, exact-match comparison, and
sketching. The tokenizer is deliberately small: it understands identifiers
(including dotted ``table.column`` references), numeric and quoted-string
literals, and the operator/punctuation set that appears in Spider-style
queries. It does not build a full AST.
"""

from __future__ import annotations

import re

from .errors import SqlResolutionError, SqlTokenError

KEYWORDS = {
    "select", "distinct", "from", "join", "left", "right", "inner", "outer",
    "full", "cross", "on", "as", "where", "and", "or", "not", "in", "between",
    "like", "is", "null", "group", "by", "having", "order", "asc", "desc",
    "limit", "offset", "union", "intersect", "except", "all", "exists",
    "case", "when", "then", "else", "end", "cast", "with",
}

AGGREGATES = {"count", "max", "min", "avg", "sum"}

_TOKEN_RE = re.compile(
    r"""
    \s+
  | '([^']|'')*'            # single-quoted string
  | "([^"]|"")*"            # double-quoted string
  | \d+\.\d+ | \.\d+ | \d+  # numbers
  | [A-Za-z_][A-Za-z0-9_]*(\.(\*|[A-Za-z_][A-Za-z0-9_]*))?   # ident / ident.ident / ident.*
  | <> | != | >= | <= | \|\| | [(),;=<>*+\-/%.]
    """,
    re.VERBOSE,
)


def tokenize_sql(sql: str) -> list[str]:
    """Split SQL text into tokens; whitespace dropped, everything else kept."""
    tokens: list[str] = []
    pos = 0
    while pos < len(sql):
        m = _TOKEN_RE.match(sql, pos)
        if m is None:
            raise SqlTokenError(f"cannot tokenize SQL at offset {pos}: {sql[pos:pos + 20]!r}")
        text = m.group(0)
        if not text.strip():
            pos = m.end()
            continue
        tokens.append(text)
        pos = m.end()
    return tokens


def is_string_literal(tok: str) -> bool:
    return len(tok) >= 2 and tok[0] in "'\"" and tok[-1] == tok[0]


def is_number_literal(tok: str) -> bool:
    return bool(re.fullmatch(r"\d+\.\d+|\.\d+|\d+", tok))


def is_identifier(tok: str) -> bool:
    if tok.lower() in KEYWORDS or tok.lower() in AGGREGATES:
        return False
    return bool(re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*(\.(\*|[A-Za-z_][A-Za-z0-9_]*))?", tok))


def render_tokens(tokens: list[str]) -> str:
    """Join tokens back into SQL text.

    Spacing rules: no space after ``(``, none before ``)``, ``,`` or ``;``,
    and aggregate calls stay tight (``count(*)``, ``max(_COL_)``).
    """
    out: list[str] = []
    prev: str | None = None
    for tok in tokens:
        if prev is None:
            out.append(tok)
        elif tok in {")", ",", ";"} or prev == "(":
            out.append(tok)
        elif tok == "(" and prev.lower() in AGGREGATES:
            out.append(tok)
        else:
            out.append(" " + tok)
        prev = tok
    return "".join(out)


def table_aliases(tokens: list[str], table_names: set[str]) -> dict[str, str]:
    """Collect alias -> table mappings from FROM/JOIN clauses.

    Handles ``FROM t AS a``, ``FROM t a``, comma-separated table lists and
    JOINs. Aliases from every (sub)query are merged into one flat map; good
    enough for Spider-style queries where alias names do not collide.
    """
    lowered = {t.lower(): t for t in table_names}
    aliases: dict[str, str] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i].lower()
        if tok in {"from", "join"}:
            i += 1
            while i < len(tokens):
                if i < len(tokens) and tokens[i] == "(":
                    break  # derived table; inner FROM handled when reached
                if i >= len(tokens) or not is_identifier(tokens[i]):
                    break
                table_tok = tokens[i]
                table = lowered.get(table_tok.lower())
                i += 1
                alias = None
                if i < len(tokens) and tokens[i].lower() == "as":
                    i += 1
                    if i < len(tokens) and is_identifier(tokens[i]):
                        alias = tokens[i]
                        i += 1
                elif (
                    i < len(tokens)
                    and is_identifier(tokens[i])
                    and "." not in tokens[i]
                    and tokens[i].lower() not in lowered
                ):
                    alias = tokens[i]
                    i += 1
                if table is not None and alias is not None:
                    aliases[alias.lower()] = table
                if i < len(tokens) and tokens[i] == ",":
                    i += 1
                    continue
                break
        else:
            i += 1
    return aliases


def from_scope_tables(tokens: list[str], table_names: set[str]) -> list[str]:
    """Tables referenced in any FROM/JOIN clause, in order of appearance."""
    lowered = {t.lower(): t for t in table_names}
    scope: list[str] = []
    i = 0
    while i < len(tokens):
        if tokens[i].lower() in {"from", "join"}:
            j = i + 1
            while j < len(tokens) and is_identifier(tokens[j]):
                name = lowered.get(tokens[j].lower())
                if name is not None and name not in scope:
                    scope.append(name)
                j += 1
                if j < len(tokens) and tokens[j].lower() == "as":
                    j += 2
                if j < len(tokens) and tokens[j] == ",":
                    j += 1
                else:
                    break
            i = j
        else:
            i += 1
    return scope


def _split_top_level(tokens: list[str], separators: set[str]) -> list[list[str]]:
    """Split a token list at depth-0 occurrences of the given keywords."""
    parts: list[list[str]] = []
    depth = 0
    cur: list[str] = []
    for tok in tokens:
        if tok == "(":
            depth += 1
        elif tok == ")":
            depth -= 1
        if depth == 0 and tok.lower() in separators:
            parts.append(cur)
            cur = []
        else:
            cur.append(tok)
    parts.append(cur)
    return parts


def canonical_sql(sql: str, strip_values: bool = True) -> str:
    """Canonical form used by exact-match comparison.

    Fixed rule list: tokenize; uppercase keywords and aggregates, lowercase
    identifiers; map ``<>`` to ``!=``; drop trailing ``;``; replace literals
    with ``_VAL_`` (when ``strip_values``); sort the AND-conjuncts of each
    pure-AND WHERE clause; re-render with normalized spacing. This is an
    approximation of logical-form equality, not a full SQL equivalence
    check.
    """
    try:
        tokens = tokenize_sql(sql)
    except SqlTokenError:
        # exact_match must not raise; degrade to whitespace-normalized text
        return " ".join(sql.lower().split())
    norm: list[str] = []
    for tok in tokens:
        low = tok.lower()
        if low == "<>":
            norm.append("!=")
        elif low in KEYWORDS or low in AGGREGATES:
            norm.append(low.upper())
        elif is_string_literal(tok) or is_number_literal(tok):
            norm.append("_VAL_" if strip_values else tok)
        elif is_identifier(tok):
            norm.append(low)
        else:
            norm.append(tok)
    while norm and norm[-1] == ";":
        norm.pop()
    norm = _sort_where_conjuncts(norm)
    return render_tokens(norm)


_WHERE_END = {"GROUP", "ORDER", "LIMIT", "UNION", "INTERSECT", "EXCEPT", "HAVING"}


def _sort_where_conjuncts(tokens: list[str]) -> list[str]:
    """Sort depth-0 AND conjuncts inside each WHERE clause.

    Clauses containing a depth-0 OR are left untouched (AND/OR mixtures are
    not commutative as a whole).
    """
    out: list[str] = []
    i = 0
    while i < len(tokens):
        if tokens[i] != "WHERE":
            out.append(tokens[i])
            i += 1
            continue
        out.append(tokens[i])
        i += 1
        depth = 0
        clause: list[str] = []
        while i < len(tokens):
            tok = tokens[i]
            if tok == "(":
                depth += 1
            elif tok == ")":
                if depth == 0:
                    break
                depth -= 1
            if depth == 0 and tok in _WHERE_END:
                break
            clause.append(tok)
            i += 1
        has_or = any(
            t == "OR" and d == 0
            for t, d in zip(clause, _depths(clause))
        )
        if has_or:
            out.extend(clause)
        else:
            conjuncts = _split_top_level(clause, {"and"})
            conjuncts = sorted(conjuncts, key=lambda c: " ".join(c))
            for k, conj in enumerate(conjuncts):
                if k:
                    out.append("AND")
                out.extend(conj)
    return out


def _depths(tokens: list[str]) -> list[int]:
    depths = []
    d = 0
    for tok in tokens:
        if tok == "(":
            depths.append(d)
            d += 1
        elif tok == ")":
            d -= 1
            depths.append(d)
        else:
            depths.append(d)
    return depths


def resolve_column_token(
    tok: str,
    aliases: dict[str, str],
    scope: list[str],
    columns_by_table: dict[str, dict[str, str]],
) -> tuple[str, str] | None:
    """Resolve one identifier token to (table, column), or None if not a column.

    ``columns_by_table`` maps canonical table name -> {lower column -> canonical
    column}. Dotted tokens resolve their qualifier through aliases first.
    Bare identifiers resolve against the FROM-clause scope and must be
    unambiguous. The ``*`` column is never an entity.
    """
    table_by_lower = {t.lower(): t for t in columns_by_table}
    if "." in tok:
        qual, col = tok.split(".", 1)
        if col == "*":
            return None
        table = aliases.get(qual.lower()) or table_by_lower.get(qual.lower())
        if table is None:
            raise SqlResolutionError(f"unknown table or alias {qual!r} in {tok!r}")
        canonical = columns_by_table[table].get(col.lower())
        if canonical is None:
            raise SqlResolutionError(f"table {table!r} has no column {col!r}")
        return table, canonical
    if tok == "*":
        return None
    low = tok.lower()
    if low in table_by_lower or low in aliases:
        return None  # bare table reference
    candidates = [t for t in (scope or columns_by_table) if low in columns_by_table[t]]
    if len(candidates) == 1:
        return candidates[0], columns_by_table[candidates[0]][low]
    if len(candidates) > 1:
        raise SqlResolutionError(
            f"column {tok!r} is ambiguous across tables {sorted(candidates)}"
        )
    raise SqlResolutionError(f"cannot resolve identifier {tok!r}")
