"""Well-formedness checks that make projection sound.

The central condition is sequence connectedness: for ``S1 ; S2`` every last
action of ``S1`` must share a role with every first action of ``S2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .model import (
    INPUT_BUILTIN, Assign, EnvRef, If, Include, Interaction, Par, Program, PropRef,
    RuleDef, Scope, Seq, Skip, Span, Stmt, While, expr_calls, expr_vars, iter_expr,
    iter_nodes, roles_of, stmt_exprs,
)
from .parser import Diagnostic

RoleSet = frozenset


@dataclass(frozen=True)
class BoundaryActions:
    first: frozenset  # set of role-sets
    last: frozenset


_EMPTY = BoundaryActions(frozenset(), frozenset())


def boundary_actions(s: Stmt) -> BoundaryActions:
    """First/last global actions of ``s``, each given by its set of involved roles."""
    if isinstance(s, Skip):
        return _EMPTY
    if isinstance(s, Interaction):
        one = frozenset({RoleSet({s.sender, s.receiver})})
        return BoundaryActions(one, one)
    if isinstance(s, Assign):
        one = frozenset({RoleSet({s.role})})
        return BoundaryActions(one, one)
    if isinstance(s, Seq):
        bs = [boundary_actions(c) for c in s.items]
        first = next((b.first for b in bs if b.first), frozenset())
        last = next((b.last for b in reversed(bs) if b.last), frozenset())
        return BoundaryActions(first, last)
    if isinstance(s, Par):
        bs = [boundary_actions(c) for c in s.items]
        return BoundaryActions(frozenset().union(*(b.first for b in bs)),
                               frozenset().union(*(b.last for b in bs)))
    if isinstance(s, (If, While, Scope)):
        # the controller's decision (or adaptation query) is broadcast to every
        # role of the construct, so it acts as one action over all of them
        one = frozenset({RoleSet(roles_of(s))})
        return BoundaryActions(one, one)
    raise TypeError(f"not a statement: {s!r}")


def _span_of(s) -> tuple[int, int, int]:
    sp: Span | None = getattr(s, "span", None)
    return (sp.line, sp.column, sp.length) if sp else (1, 1, 1)


def _diag(severity: str, message: str, node) -> Diagnostic:
    line, col, length = _span_of(node)
    return Diagnostic(severity, message, line, col, length)


def _fmt_roles(rs: Iterable[str]) -> str:
    return "{" + ",".join(sorted(rs)) + "}"


def _connectedness(body: Stmt) -> list[Diagnostic]:
    out = []
    for _, node in iter_nodes(body):
        if not isinstance(node, Seq):
            continue
        prev = None
        for item in node.items:
            b = boundary_actions(item)
            if not b.first:
                continue
            if prev is not None:
                for left in prev.last:
                    for right in b.first:
                        if not left & right:
                            out.append(_diag(
                                "error",
                                f"sequence not connected: {_fmt_roles(left)} and "
                                f"{_fmt_roles(right)} share no participant", item))
            prev = b
    return out


def _defined_before_checks(body: Stmt, assume_context: bool) -> list[Diagnostic]:
    """Condition variables must be owned by the controller earlier in program order.

    In rule bodies (``assume_context``) a controller variable that the body
    never writes is taken to come from the coordinator's context.
    """
    out: list[Diagnostic] = []
    written_anywhere = _writes(body)

    def walk(s: Stmt, defined: frozenset) -> frozenset:
        if isinstance(s, Interaction):
            return defined | {(s.receiver, s.var)} if s.var else defined
        if isinstance(s, Assign):
            return defined | {(s.role, s.var)}
        if isinstance(s, Seq):
            for c in s.items:
                defined = walk(c, defined)
            return defined
        if isinstance(s, Par):
            acc = defined
            for c in s.items:
                acc |= walk(c, defined)
            return acc
        if isinstance(s, (If, While)):
            for v in sorted(expr_vars(s.cond)):
                if (s.role, v) in defined:
                    continue
                if assume_context and (s.role, v) not in written_anywhere:
                    continue
                out.append(_diag("error", f"condition variable {v} is not known to be "
                                          f"owned by controller {s.role}", s))
            if isinstance(s, If):
                d = walk(s.then, defined)
                if s.else_ is not None:
                    d |= walk(s.else_, defined)
                return d
            return walk(s.body, defined)
        if isinstance(s, Scope):
            return walk(s.body, defined)
        return defined

    walk(body, frozenset())
    return out


def _writes(s: Stmt) -> set[tuple[str, str]]:
    out = set()
    for _, n in iter_nodes(s):
        if isinstance(n, Interaction) and n.var:
            out.add((n.receiver, n.var))
        elif isinstance(n, Assign):
            out.add((n.role, n.var))
    return out


def _messages(s: Stmt) -> set[tuple[str, str, str]]:
    return {(n.sender, n.receiver, n.label) for _, n in iter_nodes(s) if isinstance(n, Interaction)}


def _local_checks(body: Stmt, includes: Iterable[Include]) -> list[Diagnostic]:
    declared = {f for inc in includes for f in inc.functions}
    out = []
    for _, n in iter_nodes(body):
        if isinstance(n, Interaction) and n.sender == n.receiver:
            out.append(_diag("error", f"interaction {n.label} has the same sender "
                                      f"and receiver {n.sender}", n))
        if isinstance(n, Par):
            seen: dict[tuple[str, str], int] = {}
            for i, c in enumerate(n.items):
                for w in _writes(c):
                    if w in seen and seen[w] != i:
                        out.append(_diag("warning", f"parallel branches both write "
                                                    f"{w[1]}@{w[0]}", n))
                    seen.setdefault(w, i)
            owner: dict[tuple[str, str, str], int] = {}
            for i, c in enumerate(n.items):
                for m in sorted(_messages(c)):
                    if m in owner and owner[m] != i:
                        out.append(_diag("warning", f"parallel branches both send {m[2]} on "
                                                    f"{m[0]}->{m[1]}; a receiver may take the "
                                                    f"other branch's message", n))
                    owner.setdefault(m, i)
    for e in stmt_exprs(body):
        for fn in sorted(expr_calls(e)):
            if fn != INPUT_BUILTIN and fn not in declared:
                out.append(Diagnostic("error", f"call to undeclared function {fn}"))
        for x in iter_expr(e):
            if isinstance(x, (EnvRef, PropRef)):
                prefix = "E" if isinstance(x, EnvRef) else "N"
                out.append(Diagnostic("error", f"{prefix}.{x.name} may only appear in "
                                               f"rule conditions"))
    return out


def _include_checks(includes: Iterable[Include]) -> list[Diagnostic]:
    out = []
    where: dict[str, str] = {}
    for inc in includes:
        for f in inc.functions:
            if f in where and where[f] != inc.location:
                out.append(_diag("error", f"function {f} declared at two locations", inc))
            where.setdefault(f, inc.location)
    return out


def check_program(p: Program) -> list[Diagnostic]:
    """Return diagnostics for ``p``; no error diagnostics means well-formed."""
    out = _include_checks(p.includes)
    out += _connectedness(p.body)
    out += _defined_before_checks(p.body, assume_context=False)
    out += _local_checks(p.body, p.includes)
    if p.starter not in roles_of(p.body):
        out.append(Diagnostic("error", f"starter {p.starter} is not a participant"))
    return out


@dataclass(frozen=True)
class ScopeSignature:
    controller: str
    involved: frozenset
    prop_names: frozenset


def check_rule(rule: RuleDef, signature: ScopeSignature | None = None) -> list[Diagnostic]:
    out = _include_checks(rule.includes)
    out += _connectedness(rule.body)
    out += _defined_before_checks(rule.body, assume_context=True)
    out += _local_checks(rule.body, rule.includes)
    if signature is not None:
        extra = roles_of(rule.body) - set(signature.involved) - set(rule.new_roles)
        if extra:
            out.append(_diag("error", f"rule uses roles {_fmt_roles(extra)} outside the "
                                      f"scope's roles and newRoles", rule))
        for x in iter_expr(rule.condition):
            if isinstance(x, PropRef) and x.name not in signature.prop_names:
                out.append(_diag("warning", f"condition reads N.{x.name}, which the "
                                            f"scope does not declare", rule))
    return out


def errors(diags: Iterable[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diags if d.severity == "error"]
