"""Filter predicates over store rows.

A predicate is an and/or tree of atoms ``field OP literal``. The JSON form
travels over the wire; the textual form is what the CLI, HTTP API, and
console accept:

    status = READY
    a < 0.6 AND b >= 10
    activity_id in [a1, a2] OR status != FINISHED

Bare words are string literals; numbers parse as numbers. ``AND`` binds
tighter than ``OR``; parentheses group.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import SchalaError

OPS = ("=", "!=", "<", "<=", ">", ">=", "in")


class PredicateError(SchalaError):
    pass


@dataclass(frozen=True)
class Atom:
    field: str
    op: str
    literal: object

    def to_json(self) -> dict:
        lit = list(self.literal) if isinstance(self.literal, tuple) else self.literal
        return {"atom": [self.field, self.op, lit]}


@dataclass(frozen=True)
class And:
    parts: tuple

    def to_json(self) -> dict:
        return {"and": [p.to_json() for p in self.parts]}


@dataclass(frozen=True)
class Or:
    parts: tuple

    def to_json(self) -> dict:
        return {"or": [p.to_json() for p in self.parts]}


TRUE = And(parts=())  # matches everything


def from_json(obj: dict | None):
    if obj is None:
        return TRUE
    if "atom" in obj:
        f, op, lit = obj["atom"]
        if op not in OPS:
            raise PredicateError(f"unknown operator: {op}")
        if isinstance(lit, list):
            lit = tuple(lit)
        return Atom(f, op, lit)
    if "and" in obj:
        return And(tuple(from_json(p) for p in obj["and"]))
    if "or" in obj:
        return Or(tuple(from_json(p) for p in obj["or"]))
    raise PredicateError(f"bad predicate object: {obj!r}")


def matches(pred, row: dict) -> bool:
    if isinstance(pred, And):
        return all(matches(p, row) for p in pred.parts)
    if isinstance(pred, Or):
        return any(matches(p, row) for p in pred.parts) if pred.parts else False
    return _atom_matches(pred, row)


def _atom_matches(atom: Atom, row: dict) -> bool:
    if atom.field not in row:
        # Row-level fields may be nested under "fields" (domain tuples).
        inner = row.get("fields")
        if isinstance(inner, dict) and atom.field in inner:
            return _compare(inner[atom.field], atom.op, atom.literal)
        return False
    return _compare(row[atom.field], atom.op, atom.literal)


def _compare(value, op: str, literal) -> bool:
    if literal is None:
        if op == "=":
            return value is None
        if op == "!=":
            return value is not None
        return False
    if value is None:
        return False
    if op == "in":
        seq = literal if isinstance(literal, (list, tuple)) else (literal,)
        return any(_compare(value, "=", x) for x in seq)
    # Numbers compare numerically, everything else as strings.
    if isinstance(value, (int, float)) and isinstance(literal, (int, float)) \
            and not isinstance(value, bool) and not isinstance(literal, bool):
        a, b = value, literal
    else:
        a, b = str(value), str(literal)
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise PredicateError(f"unknown operator: {op}")


# --- textual surface syntax -------------------------------------------------

_TOKEN_SPLIT = ("(", ")", "[", "]", ",")


def _tokenize(text: str) -> list[str]:
    out: list[str] = []
    buf = ""
    i = 0
    while i < len(text):
        ch = text[i]
        if ch in "'\"":
            j = text.find(ch, i + 1)
            if j < 0:
                raise PredicateError("unterminated string literal")
            out.append(ch + text[i + 1:j] + ch)
            i = j + 1
            continue
        if ch.isspace() or ch in _TOKEN_SPLIT:
            if buf:
                out.append(buf)
                buf = ""
            if ch in _TOKEN_SPLIT:
                out.append(ch)
            i += 1
            continue
        if ch in "=<>!":
            if buf:
                out.append(buf)
                buf = ""
            if i + 1 < len(text) and text[i + 1] == "=":
                out.append(text[i:i + 2])
                i += 2
            else:
                out.append(ch)
                i += 1
            continue
        buf += ch
        i += 1
    if buf:
        out.append(buf)
    return out


def _literal(tok: str):
    if tok and tok[0] in "'\"":
        return tok[1:-1]
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    return tok


class _Parser:
    def __init__(self, tokens: list[str]):
        self.toks = tokens
        self.pos = 0

    def peek(self) -> str | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise PredicateError("unexpected end of predicate")
        self.pos += 1
        return tok

    def parse_or(self):
        parts = [self.parse_and()]
        while self.peek() and self.peek().upper() == "OR":
            self.take()
            parts.append(self.parse_and())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def parse_and(self):
        parts = [self.parse_unit()]
        while self.peek() and self.peek().upper() == "AND":
            self.take()
            parts.append(self.parse_unit())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def parse_unit(self):
        if self.peek() == "(":
            self.take()
            inner = self.parse_or()
            if self.take() != ")":
                raise PredicateError("expected )")
            return inner
        field = self.take()
        op = self.take()
        if op.upper() == "IN":
            op = "in"
        if op not in OPS:
            raise PredicateError(f"unknown operator: {op}")
        if op == "in":
            opener = self.take()
            if opener not in ("[", "("):
                raise PredicateError("in expects a [..] or (..) list")
            closer = "]" if opener == "[" else ")"
            items = []
            while True:
                tok = self.take()
                if tok == closer:
                    break
                if tok == ",":
                    continue
                items.append(self._as_literal(tok))
            return Atom(field, "in", tuple(items))
        return Atom(field, op, self._as_literal(self.take()))

    def _as_literal(self, tok: str):
        if tok in OPS or tok in _TOKEN_SPLIT or tok in ("<", ">", "!", "=") or tok.upper() in ("AND", "OR"):
            raise PredicateError(f"expected a literal, got {tok!r}")
        return _literal(tok)


def parse(text: str):
    """Parses the textual predicate syntax into a tree."""
    tokens = _tokenize(text)
    if not tokens:
        return TRUE
    p = _Parser(tokens)
    tree = p.parse_or()
    if p.peek() is not None:
        raise PredicateError(f"trailing tokens at: {p.peek()!r}")
    return tree


def render(pred) -> str:
    if isinstance(pred, And):
        if not pred.parts:
            return ""
        return " AND ".join(_render_part(p) for p in pred.parts)
    if isinstance(pred, Or):
        return " OR ".join(_render_part(p) for p in pred.parts)
    return _render_atom(pred)


def _render_part(p) -> str:
    text = render(p)
    if isinstance(p, (And, Or)) and len(p.parts) > 1:
        return f"({text})"
    return text


def _render_atom(a: Atom) -> str:
    if a.op == "in":
        items = ", ".join(_render_lit(x) for x in a.literal)
        return f"{a.field} in [{items}]"
    return f"{a.field} {a.op} {_render_lit(a.literal)}"


def _render_lit(lit) -> str:
    if isinstance(lit, str):
        if lit and all(c.isalnum() or c in "._-/" for c in lit):
            return lit
        return "'" + lit + "'"
    if isinstance(lit, float):
        return format(lit, "g")
    return str(lit)
