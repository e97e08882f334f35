"""Rule repositories and first-match rule selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

from .checker import check_rule, errors
from .model import EvalError, Expr, Include, RuleDef, ServiceFailure, Value, eval_expr, roles_of
from .parser import Diagnostic, ParseError, parse_rules
from .projector import ProjectionError, RoleCodeMap, project_rule


class RepositoryError(Exception):
    def __init__(self, message: str, diagnostics: list[Diagnostic] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass(frozen=True)
class CompiledRule:
    rule: RuleDef
    rule_id: str
    code: RoleCodeMap = field(compare=False)

    @property
    def body_roles(self) -> frozenset:
        return frozenset(roles_of(self.rule.body))

    @property
    def includes(self) -> dict[str, str]:
        return {f: inc.location for inc in self.rule.includes for f in inc.functions}


@dataclass(frozen=True)
class Repository:
    id: str
    rules: tuple
    connected_at: int


@dataclass(frozen=True)
class MatchResult:
    rule_id: str
    repository_id: str
    index: int
    code: RoleCodeMap
    new_roles: tuple
    includes: dict
    rule: RuleDef | None = field(default=None, compare=False)


def rule_id(repository_id: str, index: int) -> str:
    return f"{repository_id}:{index}"


def compile_repository(text: str, repository_id: str) -> tuple[CompiledRule, ...]:
    """Parse, check and project every rule of a ``.rules`` text (all or nothing)."""
    try:
        rules = parse_rules(text)
    except ParseError as exc:
        raise RepositoryError(f"repository {repository_id}: syntax error", exc.diagnostics) from None
    if not rules:
        raise RepositoryError("repository contains no rules")
    compiled = []
    for r in rules:
        rid = rule_id(repository_id, r.source_order)
        diags = errors(check_rule(r))
        if diags:
            raise RepositoryError(f"rule {rid} is ill-formed", diags)
        try:
            code = project_rule(r, rid, check=False)
        except ProjectionError as exc:
            raise RepositoryError(f"rule {rid}: {exc}") from None
        compiled.append(CompiledRule(r, rid, code))
    return tuple(compiled)


@dataclass(frozen=True)
class RuleRegistry:
    """Connected repositories in connection order.  Immutable: updates return a new registry."""

    repositories: tuple = ()
    next_seq: int = 0

    def connect(self, text: str, repository_id: str) -> "RuleRegistry":
        if any(r.id == repository_id for r in self.repositories):
            raise RepositoryError(f"repository {repository_id} is already connected")
        rules = compile_repository(text, repository_id)
        repo = Repository(repository_id, rules, self.next_seq)
        return RuleRegistry(self.repositories + (repo,), self.next_seq + 1)

    def disconnect(self, repository_id: str) -> "RuleRegistry":
        kept = tuple(r for r in self.repositories if r.id != repository_id)
        if len(kept) == len(self.repositories):
            return self
        return RuleRegistry(kept, self.next_seq)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.repositories]

    def version(self) -> tuple:
        return tuple((r.id, r.connected_at) for r in self.repositories)


def connect_repository(registry: RuleRegistry, text: str, repository_id: str) -> RuleRegistry:
    return registry.connect(text, repository_id)


def disconnect_repository(registry: RuleRegistry, repository_id: str) -> RuleRegistry:
    return registry.disconnect(repository_id)


def eval_condition(cond: Expr, props: Mapping[str, Value], env: Mapping[str, Value],
                   locals_: Mapping[str, Value]) -> bool:
    """Undefined references, type errors and non-boolean results all count as false."""
    try:
        v = eval_expr(locals_, cond, None, None, env=env, props=props)
    except (EvalError, ServiceFailure):
        return False
    return v is True


def match_rule(
    registry: RuleRegistry,
    props: Mapping[str, Value],
    locals_: Mapping[str, Value],
    env: Mapping[str, Value],
    *,
    involved=None,
    before_check: Callable[[int], Mapping[str, Value] | None] | None = None,
) -> MatchResult | None:
    """First rule (connection order, then file order) whose condition holds.

    ``involved`` is the scope's role set: a rule whose body needs roles outside
    ``involved`` and its own newRoles is not applicable to that scope.
    ``before_check(k)`` runs before the k-th condition check (1-based); when it
    returns a mapping, later checks read that environment instead.
    """
    k = 0
    for repo in registry.repositories:
        for cr in repo.rules:
            if involved is not None and not cr.body_roles <= set(involved) | set(cr.rule.new_roles):
                continue
            k += 1
            if before_check is not None:
                fresh = before_check(k)
                if fresh is not None:
                    env = fresh
            if eval_condition(cr.rule.condition, props, env, locals_):
                return MatchResult(cr.rule_id, repo.id, cr.rule.source_order, cr.code,
                                   tuple(cr.rule.new_roles), cr.includes, cr.rule)
    return None


def includes_map(includes) -> dict[str, str]:
    return {f: inc.location for inc in includes for f in inc.functions if isinstance(inc, Include)}
