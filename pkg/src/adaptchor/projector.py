"""Endpoint projection: one local program per role from a global choreography."""

from __future__ import annotations

from dataclasses import dataclass, field

from .checker import check_program, check_rule, errors
from .model import (
    NOOP, Action, Assign, BranchRecv, If, IfLocal, Interaction, LocalAssign, LocalPar,
    LocalSeq, LoopRecv, Noop, Par, Program, Recv, RuleDef, Scope, ScopeCoord, ScopeWait,
    Send, Seq, Skip, Stmt, While, WhileLocal, roles_of,
)


class ProjectionError(Exception):
    pass


@dataclass(frozen=True)
class ScopeInfo:
    controller: str
    involved: tuple
    props: dict


@dataclass
class RoleCodeMap:
    programs: dict[str, Action]
    scopes: dict[str, ScopeInfo] = field(default_factory=dict)

    @property
    def roles(self) -> list[str]:
        return sorted(self.programs)


def path_text(path: tuple) -> str:
    return ".".join(str(p) for p in path)


def aux_label(kind: str, path: tuple) -> str:
    """Label of an auxiliary coordination message; user labels never contain ``#``."""
    return f"#{kind}@{path_text(path)}"


def scope_label(scope_id: str) -> str:
    return f"#scope@{scope_id}"


def _seq(items: list[Action]) -> Action:
    items = [a for a in items if not isinstance(a, Noop)]
    if not items:
        return NOOP
    return items[0] if len(items) == 1 else LocalSeq(tuple(items))


def _par(items: list[Action]) -> Action:
    items = [a for a in items if not isinstance(a, Noop)]
    if not items:
        return NOOP
    return items[0] if len(items) == 1 else LocalPar(tuple(items))


def project_stmt(s: Stmt, role: str, path: tuple = ()) -> Action:
    if isinstance(s, Skip):
        return NOOP
    if isinstance(s, Interaction):
        if s.sender == s.receiver:
            raise ProjectionError(f"interaction {s.label}: sender equals receiver")
        if role == s.sender:
            return Send(s.label, s.receiver, s.expr)
        if role == s.receiver:
            return Recv(s.label, s.sender, s.var)
        return NOOP
    if isinstance(s, Assign):
        return LocalAssign(s.var, s.expr) if role == s.role else NOOP
    if isinstance(s, Seq):
        return _seq([project_stmt(c, role, path + (i,)) for i, c in enumerate(s.items)])
    if isinstance(s, Par):
        return _par([project_stmt(c, role, path + (i,)) for i, c in enumerate(s.items)])
    if isinstance(s, If):
        branch_roles = roles_of(s.then) | (roles_of(s.else_) if s.else_ is not None else set())
        notify = tuple(sorted(branch_roles - {s.role}))
        if role != s.role and role not in notify:
            return NOOP
        then = project_stmt(s.then, role, path + (0,))
        els = project_stmt(s.else_, role, path + (1,)) if s.else_ is not None else NOOP
        label = aux_label("if", path)
        if role == s.role:
            return IfLocal(s.cond, label, notify, then, els)
        return BranchRecv(label, s.role, then, els)
    if isinstance(s, While):
        notify = tuple(sorted(roles_of(s.body) - {s.role}))
        if role != s.role and role not in notify:
            return NOOP
        body = project_stmt(s.body, role, path + (0,))
        label = aux_label("while", path)
        if role == s.role:
            return WhileLocal(s.cond, label, notify, body)
        return LoopRecv(label, s.role, body)
    if isinstance(s, Scope):
        involved = roles_of(s)
        if role not in involved:
            return NOOP
        original = project_stmt(s.body, role, path + (0,))
        scope_id = path_text(path)
        if role == s.role:
            return ScopeCoord(scope_id, tuple(sorted(s.props)), tuple(sorted(involved)), original)
        return ScopeWait(scope_id, s.role, original)
    raise ProjectionError(f"cannot project {s!r}")


def _scope_index(body: Stmt, prefix: tuple) -> dict[str, ScopeInfo]:
    out = {}

    def walk(s: Stmt, path: tuple) -> None:
        if isinstance(s, Scope):
            out[path_text(path)] = ScopeInfo(s.role, tuple(sorted(roles_of(s))), s.prop_map())
        kids = s.items if isinstance(s, (Seq, Par)) else ()
        if isinstance(s, If):
            kids = (s.then,) if s.else_ is None else (s.then, s.else_)
        elif isinstance(s, (While, Scope)):
            kids = (s.body,)
        for i, c in enumerate(kids):
            walk(c, path + (i,))

    walk(body, prefix)
    return out


def project_body(body: Stmt, roles, prefix: tuple = ()) -> RoleCodeMap:
    programs = {r: project_stmt(body, r, prefix) for r in sorted(roles)}
    return RoleCodeMap(programs, _scope_index(body, prefix))


def project_program(p: Program, *, check: bool = True) -> RoleCodeMap:
    if check:
        errs = errors(check_program(p))
        if errs:
            raise ProjectionError("; ".join(d.format() for d in errs))
    return project_body(p.body, roles_of(p.body))


def project_rule(rule: RuleDef, rule_id: str = "rule", *, check: bool = True) -> RoleCodeMap:
    """Project a rule's ``do`` body; labels and nested scope ids are prefixed by ``rule_id``."""
    if check:
        errs = errors(check_rule(rule))
        if errs:
            raise ProjectionError("; ".join(d.format() for d in errs))
    roles = roles_of(rule.body) | set(rule.new_roles)
    return project_body(rule.body, roles, (rule_id,))
