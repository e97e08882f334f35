"""Shared data types: values, expressions, the global AST, rules and endpoint actions.

Values are plain JSON-shaped Python objects (``str``, ``int``, ``bool``, ``list``,
``dict``).  They are treated as immutable once built.  ``bool`` and ``int`` are
kept distinct, so equality goes through :func:`values_equal` rather than ``==``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Iterator, Mapping, Protocol, Union

Value = Union[str, int, bool, list, dict]


class EvalError(Exception):
    """Raised when an expression cannot be evaluated."""


class UndefinedVariable(EvalError):
    def __init__(self, name: str):
        super().__init__(f"undefined variable {name}")
        self.name = name


class TypeMismatch(EvalError):
    pass


class InputUnderrun(EvalError):
    def __init__(self) -> None:
        super().__init__("input underrun")


class ServiceFailure(Exception):
    """An external service failed or is not reachable; aborts the enactment."""

    def __init__(self, service: str, message: str, role: str | None = None):
        where = f" at {role}" if role else ""
        super().__init__(f"service {service} failed{where}: {message}")
        self.service = service
        self.message = message
        self.role = role


class DecodeError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


# -- values ------------------------------------------------------------------


def is_value(v: Any) -> bool:
    if isinstance(v, (bool, str)):
        return True
    if isinstance(v, int):
        return True
    if isinstance(v, list):
        return all(is_value(x) for x in v)
    if isinstance(v, dict):
        return all(isinstance(k, str) and is_value(x) for k, x in v.items())
    return False


def values_equal(a: Value, b: Value) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, list):
        return len(a) == len(b) and all(values_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(values_equal(a[k], b[k]) for k in a)
    return a == b


def encode_value(v: Value) -> str:
    if not is_value(v):
        raise TypeError(f"not a value: {v!r}")
    return json.dumps(v, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _reject_float(text: str) -> Any:
    raise ValueError(f"floating-point values are not supported: {text}")


def decode_value(text: str) -> Value:
    try:
        v = json.loads(text, parse_float=_reject_float, parse_constant=_reject_float)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise DecodeError(exc.msg, offset) from None
    except ValueError as exc:
        raise DecodeError(str(exc), 0) from None
    if not is_value(v):
        raise DecodeError("null is not a value", 0)
    return v


def type_name(v: Value) -> str:
    return {bool: "bool", int: "int", str: "string", list: "list", dict: "record"}[type(v)]


# -- expressions -------------------------------------------------------------

BINARY_OPS = ("==", "!=", "<", "<=", ">", ">=", "+", "-", "*", "/", "and", "or")


@dataclass(frozen=True, eq=False)
class Lit:
    value: Value

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Lit) and values_equal(self.value, other.value)

    def __hash__(self) -> int:
        return hash(encode_value(self.value))


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class EnvRef:
    name: str


@dataclass(frozen=True)
class PropRef:
    name: str


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple = ()


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Lit, Var, EnvRef, PropRef, Call, Not, BinOp]

INPUT_BUILTIN = "getInput"


def iter_expr(e: Expr) -> Iterator[Expr]:
    yield e
    if isinstance(e, Call):
        for a in e.args:
            yield from iter_expr(a)
    elif isinstance(e, Not):
        yield from iter_expr(e.operand)
    elif isinstance(e, BinOp):
        yield from iter_expr(e.left)
        yield from iter_expr(e.right)


def expr_vars(e: Expr) -> set[str]:
    return {x.name for x in iter_expr(e) if isinstance(x, Var)}


def expr_calls(e: Expr) -> set[str]:
    return {x.fn for x in iter_expr(e) if isinstance(x, Call)}


class ServiceInvoker(Protocol):
    def invoke(self, name: str, args: list) -> Value: ...


class InputSource(Protocol):
    def read(self, prompt: Value) -> Value: ...


def eval_expr(
    store: Mapping[str, Value],
    expr: Expr,
    services: ServiceInvoker | None = None,
    inputs: InputSource | None = None,
    *,
    env: Mapping[str, Value] | None = None,
    props: Mapping[str, Value] | None = None,
) -> Value:
    """Evaluate ``expr`` against a role's store.

    ``env`` and ``props`` are only supplied when evaluating rule conditions;
    everywhere else an ``E.x``/``N.x`` reference is an evaluation error.
    """

    def ev(e: Expr) -> Value:
        if isinstance(e, Lit):
            return e.value
        if isinstance(e, Var):
            if e.name not in store:
                raise UndefinedVariable(e.name)
            return store[e.name]
        if isinstance(e, EnvRef):
            if env is None:
                raise EvalError(f"environment reference E.{e.name} outside a rule condition")
            if e.name not in env:
                raise UndefinedVariable(f"E.{e.name}")
            return env[e.name]
        if isinstance(e, PropRef):
            if props is None:
                raise EvalError(f"scope property reference N.{e.name} outside a rule condition")
            if e.name not in props:
                raise UndefinedVariable(f"N.{e.name}")
            return props[e.name]
        if isinstance(e, Not):
            v = ev(e.operand)
            if not isinstance(v, bool):
                raise TypeMismatch(f"not expects bool, got {type_name(v)}")
            return not v
        if isinstance(e, BinOp):
            return _binop(e.op, e.left, e.right, ev)
        if isinstance(e, Call):
            args = [ev(a) for a in e.args]
            if e.fn == INPUT_BUILTIN:
                if inputs is None:
                    raise InputUnderrun()
                return inputs.read(args[0] if args else "")
            if services is None:
                raise ServiceFailure(e.fn, "no service registry")
            return services.invoke(e.fn, args)
        raise TypeError(f"not an expression: {e!r}")

    return ev(expr)


def _binop(op: str, left: Expr, right: Expr, ev: Callable[[Expr], Value]) -> Value:
    if op in ("and", "or"):
        a = ev(left)
        if not isinstance(a, bool):
            raise TypeMismatch(f"{op} expects bool, got {type_name(a)}")
        if (op == "and" and not a) or (op == "or" and a):
            return a
        b = ev(right)
        if not isinstance(b, bool):
            raise TypeMismatch(f"{op} expects bool, got {type_name(b)}")
        return b
    a, b = ev(left), ev(right)
    if op == "==":
        return values_equal(a, b)
    if op == "!=":
        return not values_equal(a, b)
    if op == "+":
        if type(a) is type(b) and isinstance(a, (str, list)):
            return a + b
        if type(a) is int and type(b) is int:
            return a + b
        raise TypeMismatch(f"cannot add {type_name(a)} and {type_name(b)}")
    if op in ("<", "<=", ">", ">="):
        if not (type(a) is type(b) and type(a) in (int, str)):
            raise TypeMismatch(f"cannot compare {type_name(a)} and {type_name(b)}")
        return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]
    if type(a) is not int or type(b) is not int:
        raise TypeMismatch(f"{op} expects ints, got {type_name(a)} and {type_name(b)}")
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0:
            raise EvalError("division by zero")
        return a // b
    raise EvalError(f"unknown operator {op}")


def expr_to_json(e: Expr) -> dict:
    if isinstance(e, Lit):
        return {"lit": e.value}
    if isinstance(e, Var):
        return {"var": e.name}
    if isinstance(e, EnvRef):
        return {"env": e.name}
    if isinstance(e, PropRef):
        return {"prop": e.name}
    if isinstance(e, Call):
        return {"call": e.fn, "args": [expr_to_json(a) for a in e.args]}
    if isinstance(e, Not):
        return {"not": expr_to_json(e.operand)}
    if isinstance(e, BinOp):
        return {"op": e.op, "left": expr_to_json(e.left), "right": expr_to_json(e.right)}
    raise TypeError(f"not an expression: {e!r}")


def expr_from_json(d: Mapping) -> Expr:
    if "lit" in d:
        return Lit(d["lit"])
    if "var" in d:
        return Var(d["var"])
    if "env" in d:
        return EnvRef(d["env"])
    if "prop" in d:
        return PropRef(d["prop"])
    if "call" in d:
        return Call(d["call"], tuple(expr_from_json(a) for a in d["args"]))
    if "not" in d:
        return Not(expr_from_json(d["not"]))
    if "op" in d and d["op"] in BINARY_OPS:
        return BinOp(d["op"], expr_from_json(d["left"]), expr_from_json(d["right"]))
    raise ValueError(f"malformed expression: {d!r}")


# -- global AST --------------------------------------------------------------


@dataclass(frozen=True)
class Span:
    line: int
    column: int
    length: int = 1


def _span() -> Any:
    return field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Interaction:
    label: str
    sender: str
    expr: Expr | None
    receiver: str
    var: str | None
    span: Span | None = _span()


@dataclass(frozen=True)
class Assign:
    var: str
    role: str
    expr: Expr
    span: Span | None = _span()


@dataclass(frozen=True)
class Seq:
    items: tuple
    span: Span | None = _span()


@dataclass(frozen=True)
class Par:
    items: tuple
    span: Span | None = _span()


@dataclass(frozen=True)
class If:
    cond: Expr
    role: str
    then: "Stmt"
    else_: "Stmt | None" = None
    span: Span | None = _span()


@dataclass(frozen=True)
class While:
    cond: Expr
    role: str
    body: "Stmt"
    span: Span | None = _span()


@dataclass(frozen=True)
class Scope:
    role: str
    body: "Stmt"
    props: tuple = ()  # ((name, Lit), ...)
    roles: tuple = ()
    span: Span | None = _span()

    def prop_map(self) -> dict[str, Value]:
        return {k: v.value for k, v in self.props}


@dataclass(frozen=True)
class Skip:
    span: Span | None = _span()


Stmt = Union[Interaction, Assign, Seq, Par, If, While, Scope, Skip]


@dataclass(frozen=True)
class Include:
    functions: tuple
    location: str
    protocol: str
    span: Span | None = _span()


@dataclass(frozen=True)
class Program:
    includes: tuple
    starter: str
    body: Stmt
    preamble: tuple = ()  # extra (key, value) pairs besides the starter


@dataclass(frozen=True)
class RuleDef:
    includes: tuple
    new_roles: tuple
    condition: Expr
    body: Stmt
    source_order: int = 0
    span: Span | None = _span()


def children(s: Stmt) -> tuple:
    if isinstance(s, (Seq, Par)):
        return s.items
    if isinstance(s, If):
        return (s.then,) if s.else_ is None else (s.then, s.else_)
    if isinstance(s, (While, Scope)):
        return (s.body,)
    return ()


def iter_nodes(s: Stmt, path: tuple = ()) -> Iterator[tuple[tuple, Stmt]]:
    """Yield ``(path, node)`` pairs; a path is the child-index sequence from the root."""
    yield path, s
    for i, c in enumerate(children(s)):
        yield from iter_nodes(c, path + (i,))


def roles_of(s: Stmt) -> set[str]:
    if isinstance(s, Interaction):
        return {s.sender, s.receiver}
    if isinstance(s, Assign):
        return {s.role}
    if isinstance(s, (Seq, Par)):
        out: set[str] = set()
        for c in s.items:
            out |= roles_of(c)
        return out
    if isinstance(s, If):
        out = {s.role} | roles_of(s.then)
        if s.else_ is not None:
            out |= roles_of(s.else_)
        return out
    if isinstance(s, While):
        return {s.role} | roles_of(s.body)
    if isinstance(s, Scope):
        return {s.role} | set(s.roles) | roles_of(s.body)
    return set()


def stmt_exprs(s: Stmt) -> Iterator[Expr]:
    """Expressions directly held by nodes of ``s`` (recursively)."""
    for _, n in iter_nodes(s):
        if isinstance(n, Interaction) and n.expr is not None:
            yield n.expr
        elif isinstance(n, Assign):
            yield n.expr
        elif isinstance(n, (If, While)):
            yield n.cond


def rename_stmt(s: Stmt, mapping: Mapping[str, str]) -> Stmt:
    r = lambda x: mapping.get(x, x)  # noqa: E731
    if isinstance(s, Interaction):
        return Interaction(s.label, r(s.sender), s.expr, r(s.receiver), s.var, s.span)
    if isinstance(s, Assign):
        return Assign(s.var, r(s.role), s.expr, s.span)
    if isinstance(s, Seq):
        return Seq(tuple(rename_stmt(c, mapping) for c in s.items), s.span)
    if isinstance(s, Par):
        return Par(tuple(rename_stmt(c, mapping) for c in s.items), s.span)
    if isinstance(s, If):
        els = None if s.else_ is None else rename_stmt(s.else_, mapping)
        return If(s.cond, r(s.role), rename_stmt(s.then, mapping), els, s.span)
    if isinstance(s, While):
        return While(s.cond, r(s.role), rename_stmt(s.body, mapping), s.span)
    if isinstance(s, Scope):
        return Scope(r(s.role), rename_stmt(s.body, mapping), s.props,
                     tuple(r(x) for x in s.roles), s.span)
    return s


# -- endpoint actions --------------------------------------------------------


class _Action:
    """Mixin caching the canonical JSON text of an (immutable) action tree."""

    def canonical(self) -> str:
        c = self.__dict__.get("_canon")
        if c is None:
            c = json.dumps(action_to_json(self), sort_keys=True, separators=(",", ":"),
                           ensure_ascii=False)
            object.__setattr__(self, "_canon", c)
        return c

    def digest(self) -> str:
        """Structural hash built from the children's cached digests."""
        d = self.__dict__.get("_digest")
        if d is None:
            parts = [type(self).__name__]
            for f in fields(self):
                v = getattr(self, f.name)
                if isinstance(v, _Action):
                    parts.append(v.digest())
                elif isinstance(v, tuple) and v and isinstance(v[0], _Action):
                    parts.append(tuple(x.digest() for x in v))
                else:
                    parts.append(repr(v))
            d = hashlib.blake2b(repr(parts).encode(), digest_size=12).hexdigest()
            object.__setattr__(self, "_digest", d)
        return d


@dataclass(frozen=True)
class Send(_Action):
    label: str
    to: str
    expr: Expr | None


@dataclass(frozen=True)
class Recv(_Action):
    label: str
    from_: str
    var: str | None


@dataclass(frozen=True)
class LocalAssign(_Action):
    var: str
    expr: Expr


@dataclass(frozen=True)
class IfLocal(_Action):
    cond: Expr
    aux: str
    notify: tuple
    then: "Action"
    else_: "Action"


@dataclass(frozen=True)
class BranchRecv(_Action):
    aux: str
    from_: str
    then: "Action"
    else_: "Action"


@dataclass(frozen=True)
class WhileLocal(_Action):
    cond: Expr
    aux: str
    notify: tuple
    body: "Action"


@dataclass(frozen=True)
class LoopRecv(_Action):
    aux: str
    from_: str
    body: "Action"


@dataclass(frozen=True)
class ScopeCoord(_Action):
    scope_id: str
    props: tuple  # ((name, Lit), ...)
    involved: tuple
    original: "Action"

    def prop_map(self) -> dict[str, Value]:
        return {k: v.value for k, v in self.props}


@dataclass(frozen=True)
class ScopeWait(_Action):
    scope_id: str
    coordinator: str
    original: "Action"


@dataclass(frozen=True)
class LocalSeq(_Action):
    items: tuple


@dataclass(frozen=True)
class LocalPar(_Action):
    items: tuple


@dataclass(frozen=True)
class Noop(_Action):
    pass


Action = Union[Send, Recv, LocalAssign, IfLocal, BranchRecv, WhileLocal, LoopRecv,
               ScopeCoord, ScopeWait, LocalSeq, LocalPar, Noop]

NOOP = Noop()


def _opt_expr(e: Expr | None) -> dict | None:
    return None if e is None else expr_to_json(e)


def action_to_json(a: Action) -> dict:
    if isinstance(a, Send):
        return {"kind": "send", "label": a.label, "to": a.to, "expr": _opt_expr(a.expr)}
    if isinstance(a, Recv):
        return {"kind": "recv", "label": a.label, "from": a.from_, "var": a.var}
    if isinstance(a, LocalAssign):
        return {"kind": "localAssign", "var": a.var, "expr": expr_to_json(a.expr)}
    if isinstance(a, IfLocal):
        return {"kind": "ifLocal", "cond": expr_to_json(a.cond), "aux": a.aux,
                "notify": list(a.notify), "then": action_to_json(a.then),
                "else": action_to_json(a.else_)}
    if isinstance(a, BranchRecv):
        return {"kind": "branchRecv", "aux": a.aux, "from": a.from_,
                "branches": {"then": action_to_json(a.then), "else": action_to_json(a.else_)}}
    if isinstance(a, WhileLocal):
        return {"kind": "whileLocal", "cond": expr_to_json(a.cond), "aux": a.aux,
                "notify": list(a.notify), "branches": {"continue": action_to_json(a.body)}}
    if isinstance(a, LoopRecv):
        return {"kind": "loopRecv", "aux": a.aux, "from": a.from_,
                "branches": {"continue": action_to_json(a.body)}}
    if isinstance(a, ScopeCoord):
        return {"kind": "scopeCoord", "scopeId": a.scope_id, "props": a.prop_map(),
                "involved": list(a.involved), "original": action_to_json(a.original)}
    if isinstance(a, ScopeWait):
        return {"kind": "scopeWait", "scopeId": a.scope_id, "coordinator": a.coordinator,
                "original": action_to_json(a.original)}
    if isinstance(a, LocalSeq):
        return {"kind": "localSeq", "items": [action_to_json(x) for x in a.items]}
    if isinstance(a, LocalPar):
        return {"kind": "localPar", "items": [action_to_json(x) for x in a.items]}
    if isinstance(a, Noop):
        return {"kind": "noop"}
    raise TypeError(f"not an endpoint action: {a!r}")


def action_from_json(d: Mapping) -> Action:
    kind = d.get("kind")
    opt = lambda e: None if e is None else expr_from_json(e)  # noqa: E731
    if kind == "send":
        return Send(d["label"], d["to"], opt(d.get("expr")))
    if kind == "recv":
        return Recv(d["label"], d["from"], d.get("var"))
    if kind == "localAssign":
        return LocalAssign(d["var"], expr_from_json(d["expr"]))
    if kind == "ifLocal":
        return IfLocal(expr_from_json(d["cond"]), d["aux"], tuple(d["notify"]),
                       action_from_json(d["then"]), action_from_json(d["else"]))
    if kind == "branchRecv":
        b = d["branches"]
        return BranchRecv(d["aux"], d["from"], action_from_json(b["then"]),
                          action_from_json(b["else"]))
    if kind == "whileLocal":
        return WhileLocal(expr_from_json(d["cond"]), d["aux"], tuple(d["notify"]),
                          action_from_json(d["branches"]["continue"]))
    if kind == "loopRecv":
        return LoopRecv(d["aux"], d["from"], action_from_json(d["branches"]["continue"]))
    if kind == "scopeCoord":
        props = tuple(sorted((k, Lit(v)) for k, v in d["props"].items()))
        return ScopeCoord(d["scopeId"], props, tuple(d["involved"]),
                          action_from_json(d["original"]))
    if kind == "scopeWait":
        return ScopeWait(d["scopeId"], d["coordinator"], action_from_json(d["original"]))
    if kind == "localSeq":
        return LocalSeq(tuple(action_from_json(x) for x in d["items"]))
    if kind == "localPar":
        return LocalPar(tuple(action_from_json(x) for x in d["items"]))
    if kind == "noop":
        return NOOP
    raise ValueError(f"unknown endpoint action kind: {kind!r}")


def encode_action(a: Action) -> str:
    return a.canonical()


def decode_action(text: str) -> Action:
    return action_from_json(json.loads(text))


def rename_action(a: Action, mapping: Mapping[str, str]) -> Action:
    """Substitute role names in every peer reference of an endpoint program."""
    if not mapping:
        return a
    r = lambda x: mapping.get(x, x)  # noqa: E731
    ra = lambda x: rename_action(x, mapping)  # noqa: E731
    if isinstance(a, Send):
        return Send(a.label, r(a.to), a.expr)
    if isinstance(a, Recv):
        return Recv(a.label, r(a.from_), a.var)
    if isinstance(a, IfLocal):
        return IfLocal(a.cond, a.aux, tuple(r(x) for x in a.notify), ra(a.then), ra(a.else_))
    if isinstance(a, BranchRecv):
        return BranchRecv(a.aux, r(a.from_), ra(a.then), ra(a.else_))
    if isinstance(a, WhileLocal):
        return WhileLocal(a.cond, a.aux, tuple(r(x) for x in a.notify), ra(a.body))
    if isinstance(a, LoopRecv):
        return LoopRecv(a.aux, r(a.from_), ra(a.body))
    if isinstance(a, ScopeCoord):
        return ScopeCoord(a.scope_id, a.props, tuple(r(x) for x in a.involved), ra(a.original))
    if isinstance(a, ScopeWait):
        return ScopeWait(a.scope_id, r(a.coordinator), ra(a.original))
    if isinstance(a, LocalSeq):
        return LocalSeq(tuple(ra(x) for x in a.items))
    if isinstance(a, LocalPar):
        return LocalPar(tuple(ra(x) for x in a.items))
    return a


def qualify_label(label: str, instance: str) -> str:
    if label.startswith("#"):
        kind, _, where = label.partition("@")
        return f"{kind}@{instance}/{where}"
    return f"{label}@{instance}"


def qualify_action(a: Action, instance: str) -> Action:
    """Tie every label and nested scope id of installed code to one scope instance.

    Code installed by two parallel scope instances may use the same labels on
    the same channel; qualifying both sides alike keeps their messages apart.
    """
    q = lambda x: qualify_action(x, instance)  # noqa: E731
    lab = lambda x: qualify_label(x, instance)  # noqa: E731
    if isinstance(a, Send):
        return Send(lab(a.label), a.to, a.expr)
    if isinstance(a, Recv):
        return Recv(lab(a.label), a.from_, a.var)
    if isinstance(a, IfLocal):
        return IfLocal(a.cond, lab(a.aux), a.notify, q(a.then), q(a.else_))
    if isinstance(a, BranchRecv):
        return BranchRecv(lab(a.aux), a.from_, q(a.then), q(a.else_))
    if isinstance(a, WhileLocal):
        return WhileLocal(a.cond, lab(a.aux), a.notify, q(a.body))
    if isinstance(a, LoopRecv):
        return LoopRecv(lab(a.aux), a.from_, q(a.body))
    if isinstance(a, ScopeCoord):
        return ScopeCoord(f"{instance}/{a.scope_id}", a.props, a.involved, q(a.original))
    if isinstance(a, ScopeWait):
        return ScopeWait(f"{instance}/{a.scope_id}", a.coordinator, q(a.original))
    if isinstance(a, LocalSeq):
        return LocalSeq(tuple(q(x) for x in a.items))
    if isinstance(a, LocalPar):
        return LocalPar(tuple(q(x) for x in a.items))
    return a


def iter_actions(a: Action) -> Iterator[Action]:
    yield a
    if isinstance(a, (IfLocal, BranchRecv)):
        yield from iter_actions(a.then)
        yield from iter_actions(a.else_)
    elif isinstance(a, (WhileLocal, LoopRecv)):
        yield from iter_actions(a.body)
    elif isinstance(a, (ScopeCoord, ScopeWait)):
        yield from iter_actions(a.original)
    elif isinstance(a, (LocalSeq, LocalPar)):
        for x in a.items:
            yield from iter_actions(x)
