"""Lexer, recursive-descent parser and canonical formatter for ``.chor`` and ``.rules`` files."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable

from .model import (
    BinOp, Call, EnvRef, Expr, If, Include, Interaction, Lit, Not, Par, Program,
    PropRef, RuleDef, Scope, Seq, Skip, Span, Stmt, Var, While, Assign,
)


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str
    line: int = 1
    column: int = 1
    length: int = 1

    def format(self, filename: str = "<input>") -> str:
        return f"{filename}:{self.line}:{self.column}: {self.severity}: {self.message}"


class ParseError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        super().__init__("; ".join(d.format() for d in diagnostics))
        self.diagnostics = diagnostics


KEYWORDS = {
    "include", "from", "with", "preamble", "aioc", "if", "else", "while", "scope",
    "prop", "roles", "skip", "rule", "on", "do", "and", "or", "not", "true", "false",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<int>[0-9]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|==|!=|<=|>=|[{}()\[\];|,:@=<>+\-*/.])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # ident | string | int | op | eof
    text: str
    line: int
    column: int

    @property
    def span(self) -> Span:
        return Span(self.line, self.column, max(1, len(self.text)))


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, col = 0, 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError([Diagnostic("error", f"unexpected character {text[pos]!r}", line, col)])
        kind = m.lastgroup
        chunk = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, chunk, line, col))
        nl = chunk.count("\n")
        if nl:
            line += nl
            col = len(chunk) - chunk.rfind("\n")
        else:
            col += len(chunk)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    # -- token plumbing

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        t = tok or self.tok
        return ParseError([Diagnostic("error", message, t.line, t.column, max(1, len(t.text)))])

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("op", "ident") and t.text == text

    def accept(self, text: str) -> Token | None:
        if self.at(text):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, text: str) -> Token:
        t = self.accept(text)
        if t is None:
            found = self.tok.text or "end of input"
            raise self.error(f"expected '{text}', found '{found}'")
        return t

    def ident(self, what: str = "identifier") -> Token:
        t = self.tok
        if t.kind != "ident" or t.text in KEYWORDS:
            found = t.text or "end of input"
            raise self.error(f"expected {what}, found '{found}'")
        self.i += 1
        return t

    def string(self) -> str:
        t = self.tok
        if t.kind != "string":
            raise self.error(f"expected string literal, found '{t.text or 'end of input'}'")
        self.i += 1
        try:
            return json.loads(t.text)
        except ValueError:
            raise self.error("invalid string literal", t) from None

    # -- top level

    def program(self) -> Program:
        includes = []
        while self.at("include"):
            includes.append(self.include())
        starter = None
        extras = []
        if self.accept("preamble"):
            self.expect("{")
            while not self.at("}"):
                key = self.ident("preamble key")
                self.expect(":")
                val = self.ident("preamble value")
                if key.text == "starter":
                    if starter is not None:
                        raise self.error("duplicate starter declaration", key)
                    starter = val.text
                else:
                    extras.append((key.text, val.text))
            self.expect("}")
        aioc = self.tok
        self.expect("aioc")
        if starter is None:
            raise self.error("missing 'starter' in preamble", aioc)
        body = self.block()
        if self.at("include"):
            raise self.error("include after aioc block")
        if self.tok.kind != "eof":
            raise self.error(f"unexpected '{self.tok.text}' after aioc block")
        return Program(tuple(includes), starter, body, tuple(extras))

    def include(self) -> Include:
        start = self.expect("include")
        names = [self.ident("function name").text]
        while self.accept(","):
            names.append(self.ident("function name").text)
        self.expect("from")
        loc = self.string()
        self.expect("with")
        proto = self.string()
        return Include(tuple(names), loc, proto, start.span)

    def rules(self) -> list[RuleDef]:
        out = []
        while self.tok.kind != "eof":
            out.append(self.rule(len(out)))
        return out

    def rule(self, order: int) -> RuleDef:
        start = self.expect("rule")
        self.expect("{")
        includes = []
        while self.at("include"):
            includes.append(self.include())
        new_roles: list[str] = []
        if self.tok.kind == "ident" and self.tok.text == "newRoles":
            self.i += 1
            self.expect(":")
            new_roles.append(self.ident("role").text)
            while self.accept(","):
                new_roles.append(self.ident("role").text)
        if not self.at("on"):
            raise self.error("rule is missing its 'on' condition")
        self.i += 1
        self.expect("{")
        cond = self.expr()
        self.expect("}")
        if not self.at("do"):
            raise self.error("rule is missing its 'do' block")
        self.i += 1
        body = self.block()
        self.expect("}")
        return RuleDef(tuple(includes), tuple(new_roles), cond, body, order, start.span)

    # -- choreographies

    def block(self) -> Stmt:
        self.expect("{")
        body = self.chor()
        self.expect("}")
        return body

    def chor(self) -> Stmt:
        start = self.tok
        items = [self.parunit()]
        while self.accept(";"):
            if self.at("}"):
                break
            items.append(self.parunit())
        return items[0] if len(items) == 1 else Seq(tuple(items), start.span)

    def parunit(self) -> Stmt:
        start = self.tok
        items = [self.unit()]
        while self.accept("|"):
            items.append(self.unit())
        return items[0] if len(items) == 1 else Par(tuple(items), start.span)

    def unit(self) -> Stmt:
        if self.at("{"):
            return self.block()
        return self.stmt()

    def stmt(self) -> Stmt:
        t = self.tok
        if self.accept("skip"):
            return Skip(t.span)
        if self.at("if") or self.at("while"):
            self.i += 1
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            self.expect("@")
            role = self.ident("controller role").text
            body = self.block()
            if t.text == "while":
                return While(cond, role, body, t.span)
            els = self.block() if self.accept("else") else None
            return If(cond, role, body, els, t.span)
        if self.accept("scope"):
            self.expect("@")
            role = self.ident("coordinator role").text
            body = self.block()
            props = []
            if self.accept("prop"):
                self.expect("{")
                props.append(self.propassign())
                while self.accept(","):
                    props.append(self.propassign())
                self.expect("}")
            roles = []
            if self.accept("roles"):
                self.expect("{")
                roles.append(self.ident("role").text)
                while self.accept(","):
                    roles.append(self.ident("role").text)
                self.expect("}")
            return Scope(role, body, tuple(props), tuple(roles), t.span)
        name = self.ident("statement")
        if self.accept(":"):
            sender = self.ident("sender role").text
            self.expect("(")
            expr = None if self.at(")") else self.expr()
            self.expect(")")
            self.expect("->")
            receiver = self.ident("receiver role").text
            self.expect("(")
            var = None if self.at(")") else self.ident("variable").text
            self.expect(")")
            return Interaction(name.text, sender, expr, receiver, var, name.span)
        if self.accept("@"):
            role = self.ident("role").text
            self.expect("=")
            return Assign(name.text, role, self.expr(), name.span)
        raise self.error(f"expected ':' or '@' after '{name.text}'")

    def propassign(self) -> tuple[str, Lit]:
        n = self.tok
        if not (n.kind == "ident" and n.text == "N"):
            raise self.error("scope properties must be written N.<name>")
        self.i += 1
        self.expect(".")
        name = self.ident("property name").text
        self.expect("=")
        lit = self.primary()
        if not isinstance(lit, Lit):
            raise self.error("scope property values must be literals", n)
        return name, lit

    # -- expressions

    def expr(self) -> Expr:
        left = self.and_expr()
        while self.accept("or"):
            left = BinOp("or", left, self.and_expr())
        return left

    def and_expr(self) -> Expr:
        left = self.not_expr()
        while self.accept("and"):
            left = BinOp("and", left, self.not_expr())
        return left

    def not_expr(self) -> Expr:
        if self.accept("not"):
            return Not(self.not_expr())
        return self.cmp_expr()

    def cmp_expr(self) -> Expr:
        left = self.add_expr()
        while self.tok.kind == "op" and self.tok.text in ("==", "!=", "<", "<=", ">", ">="):
            op = self.tok.text
            self.i += 1
            left = BinOp(op, left, self.add_expr())
        return left

    def add_expr(self) -> Expr:
        left = self.mul_expr()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            op = self.tok.text
            self.i += 1
            left = BinOp(op, left, self.mul_expr())
        return left

    def mul_expr(self) -> Expr:
        left = self.primary()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.tok.text
            self.i += 1
            left = BinOp(op, left, self.primary())
        return left

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "int":
            self.i += 1
            return Lit(int(t.text))
        if t.kind == "op" and t.text == "-" and self.peek().kind == "int":
            self.i += 2
            return Lit(-int(self.toks[self.i - 1].text))
        if t.kind == "string":
            return Lit(self.string())
        if self.accept("true"):
            return Lit(True)
        if self.accept("false"):
            return Lit(False)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        name = self.ident("expression")
        if name.text in ("N", "E") and self.at("."):
            self.i += 1
            key = self.ident("property name").text
            return PropRef(key) if name.text == "N" else EnvRef(key)
        if self.accept("("):
            args = []
            if not self.at(")"):
                args.append(self.expr())
                while self.accept(","):
                    args.append(self.expr())
            self.expect(")")
            return Call(name.text, tuple(args))
        return Var(name.text)


def _run(text: str, fn):
    try:
        return fn(_Parser(text))
    except RecursionError:
        raise ParseError([Diagnostic("error", "input nested too deeply")]) from None


def parse_program(text: str) -> Program:
    """Parse a ``.chor`` file; raises :class:`ParseError` carrying diagnostics."""
    return _run(text, lambda p: p.program())


def parse_rules(text: str) -> list[RuleDef]:
    """Parse a ``.rules`` file.  ``source_order`` is the 0-based position in the file."""
    return _run(text, lambda p: p.rules())


def parse_expr(text: str) -> Expr:
    def go(p: _Parser) -> Expr:
        e = p.expr()
        if p.tok.kind != "eof":
            raise p.error(f"unexpected '{p.tok.text}'")
        return e
    return _run(text, go)


# -- formatting --------------------------------------------------------------

_PREC = {"or": 1, "and": 2, "==": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
         "+": 5, "-": 5, "*": 6, "/": 6}
_NOT_PREC = 3
_ATOM = 7
IND = "  "


def format_literal(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    raise ValueError(f"value {v!r} has no literal syntax")


def _fmt_expr(e: Expr) -> tuple[str, int]:
    if isinstance(e, Lit):
        return format_literal(e.value), _ATOM
    if isinstance(e, Var):
        return e.name, _ATOM
    if isinstance(e, EnvRef):
        return f"E.{e.name}", _ATOM
    if isinstance(e, PropRef):
        return f"N.{e.name}", _ATOM
    if isinstance(e, Call):
        return f"{e.fn}( {', '.join(format_expr(a) for a in e.args)} )" if e.args else f"{e.fn}()", _ATOM
    if isinstance(e, Not):
        text, p = _fmt_expr(e.operand)
        return "not " + (text if p >= _NOT_PREC else f"( {text} )"), _NOT_PREC
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        lt, lp = _fmt_expr(e.left)
        rt, rp = _fmt_expr(e.right)
        if lp < p:
            lt = f"( {lt} )"
        if rp <= p:
            rt = f"( {rt} )"
        return f"{lt} {e.op} {rt}", p
    raise TypeError(f"not an expression: {e!r}")


def format_expr(e: Expr) -> str:
    return _fmt_expr(e)[0]


def _block(s: Stmt, ind: str) -> str:
    inner = ind + IND
    return "{\n" + inner + _chor(s, inner) + "\n" + ind + "}"


def _chor(s: Stmt, ind: str) -> str:
    if isinstance(s, Seq):
        return (";\n" + ind).join(
            _block(c, ind) if isinstance(c, Seq) else _chor(c, ind) for c in s.items)
    if isinstance(s, Par):
        return ("\n" + ind + "|\n" + ind).join(
            _block(c, ind) if isinstance(c, (Seq, Par)) else _stmt(c, ind) for c in s.items)
    return _stmt(s, ind)


def _stmt(s: Stmt, ind: str) -> str:
    if isinstance(s, Skip):
        return "skip"
    if isinstance(s, Interaction):
        e = f"( {format_expr(s.expr)} )" if s.expr is not None else "()"
        v = f"( {s.var} )" if s.var is not None else "()"
        return f"{s.label}: {s.sender}{e} -> {s.receiver}{v}"
    if isinstance(s, Assign):
        return f"{s.var}@{s.role} = {format_expr(s.expr)}"
    if isinstance(s, If):
        out = f"if ( {format_expr(s.cond)} )@{s.role} {_block(s.then, ind)}"
        if s.else_ is not None:
            out += f" else {_block(s.else_, ind)}"
        return out
    if isinstance(s, While):
        return f"while ( {format_expr(s.cond)} )@{s.role} {_block(s.body, ind)}"
    if isinstance(s, Scope):
        out = f"scope @{s.role} {_block(s.body, ind)}"
        if s.props:
            out += " prop { " + ", ".join(
                f"N.{k} = {format_literal(v.value)}" for k, v in s.props) + " }"
        if s.roles:
            out += " roles { " + ", ".join(s.roles) + " }"
        return out
    return "{\n" + ind + IND + _chor(s, ind + IND) + "\n" + ind + "}"


def format_stmt(s: Stmt, indent: str = "") -> str:
    return _chor(s, indent)


def _format_include(inc: Include) -> str:
    return (f"include {', '.join(inc.functions)} from {json.dumps(inc.location)} "
            f"with {json.dumps(inc.protocol)}")


def format_program(p: Program) -> str:
    parts = []
    if p.includes:
        parts.append("\n".join(_format_include(i) for i in p.includes))
    pairs = [f"starter: {p.starter}"] + [f"{k}: {v}" for k, v in p.preamble]
    parts.append("preamble { " + " ".join(pairs) + " }")
    parts.append("aioc " + _block(p.body, ""))
    return "\n\n".join(parts) + "\n"


def format_rule(r: RuleDef) -> str:
    lines = ["rule {"]
    for inc in r.includes:
        lines.append(IND + _format_include(inc))
    if r.new_roles:
        lines.append(IND + "newRoles: " + ", ".join(r.new_roles))
    lines.append(IND + "on { " + format_expr(r.condition) + " }")
    lines.append(IND + "do " + _block(r.body, IND))
    lines.append("}")
    return "\n".join(lines) + "\n"


def format_rules(rules: Iterable[RuleDef]) -> str:
    return "\n".join(format_rule(r) for r in rules)
