"""Simulated execution of projected choreographies.

Each role is a small-step executor over its endpoint program.  A run loop
(or the explorer) picks which enabled action fires next; all cross-role
effects (inboxes, environment, registry, trace) live in :class:`System`.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol

from .adaptation import MatchResult, RuleRegistry, match_rule
from .model import (
    NOOP, Action, BranchRecv, EvalError, IfLocal, LocalAssign, LocalPar, LocalSeq,
    LoopRecv, Noop, Recv, ScopeCoord, ScopeWait, Send, ServiceFailure, Value,
    WhileLocal, action_from_json, action_to_json, eval_expr, is_value, qualify_action, rename_action,
)
from .projector import RoleCodeMap, scope_label

HELLO = "#hello"
START = "#start"
UNIT: dict = {}


class RunAborted(Exception):
    def __init__(self, message: str, **detail: Any):
        super().__init__(message)
        self.detail = {"message": message, **detail}


class ProtocolError(RunAborted):
    pass


# -- services and inputs -------------------------------------------------------


class ServiceRegistry:
    """Named handlers for the external functions a choreography includes."""

    def __init__(self, handlers: Mapping[str, Callable[..., Value]] | None = None):
        self.handlers: dict[str, Callable[..., Value]] = dict(handlers or {})

    def register(self, name: str, handler: Callable[..., Value]) -> None:
        self.handlers[name] = handler

    def invoke(self, name: str, args: list) -> Value:
        handler = self.handlers.get(name)
        if handler is None:
            raise ServiceFailure(name, "no such service")
        try:
            result = handler(*args)
        except ServiceFailure:
            raise
        except Exception as exc:  # any handler error is a service failure
            raise ServiceFailure(name, str(exc) or type(exc).__name__) from exc
        if not is_value(result):
            raise ServiceFailure(name, f"returned {type(result).__name__}, which is not a value")
        return result


def register_service(registry: ServiceRegistry, name: str, handler: Callable[..., Value]) -> None:
    registry.register(name, handler)


def invoke_service(registry: ServiceRegistry, name: str, args: list) -> Value:
    return registry.invoke(name, args)


class ConsoleInput:
    def read(self, prompt: Value) -> Value:
        return input(f"{prompt}: ")


# -- timelines ---------------------------------------------------------------

TRIGGER_KINDS = ("beforeAdaptQuery", "atTraceStep", "beforeRuleCheck")
ACTION_KINDS = ("env/set", "env/unset", "rules/connect", "rules/disconnect", "input/push")


@dataclass(frozen=True)
class TimelineEntry:
    trigger: str
    n: int
    action: str
    args: dict = field(default_factory=dict, hash=False)

    def to_json(self) -> dict:
        return {"trigger": {"kind": self.trigger, "n": self.n},
                "action": {"kind": self.action, "args": self.args}}


def load_timeline(data: list | str | Path, base_dir: str | Path | None = None) -> list[TimelineEntry]:
    """Build a timeline from its JSON form (a list, JSON text, or a file path).

    ``rules/connect`` actions may name a ``path`` instead of inline ``text``;
    the path is read relative to ``base_dir`` (or the timeline file's folder).
    """
    if isinstance(data, Path) or (isinstance(data, str) and not data.lstrip().startswith("[")):
        path = Path(data)
        base_dir = base_dir or path.parent
        data = json.loads(path.read_text())
    elif isinstance(data, str):
        data = json.loads(data)
    out = []
    for item in data:
        trig, act = item["trigger"], item["action"]
        if trig["kind"] not in TRIGGER_KINDS:
            raise ValueError(f"unknown trigger kind {trig['kind']!r}")
        if act["kind"] not in ACTION_KINDS:
            raise ValueError(f"unknown timeline action {act['kind']!r}")
        args = dict(act.get("args", {}))
        if act["kind"] == "rules/connect" and "text" not in args:
            args["text"] = (Path(base_dir or ".") / args.pop("path")).read_text()
        out.append(TimelineEntry(trig["kind"], int(trig["n"]), act["kind"], args))
    return out


# -- schedulers ----------------------------------------------------------------


class Scheduler(Protocol):
    def choose(self, choices: list[tuple]) -> tuple: ...


class SeededScheduler:
    """Uniform over runnable roles, then over that role's enabled actions."""

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)

    def choose(self, choices: list[tuple]) -> tuple:
        roles = sorted({c[0] for c in choices})
        role = self.rng.choice(roles)
        return self.rng.choice([c for c in choices if c[0] == role])


class FixedScheduler:
    def choose(self, choices: list[tuple]) -> tuple:
        return choices[0]


class ScriptedScheduler:
    """Replays a recorded schedule, e.g. one attached to a deadlock report."""

    def __init__(self, schedule: Iterable):
        self.schedule = [(c[0], tuple(c[1])) for c in schedule]
        self.pos = 0

    def choose(self, choices: list[tuple]) -> tuple:
        if self.pos >= len(self.schedule):
            raise RunAborted("scripted schedule exhausted")
        c = self.schedule[self.pos]
        self.pos += 1
        if c not in choices:
            raise RunAborted(f"scripted choice {c} is not enabled")
        return c


# -- trace and outcome ---------------------------------------------------------


@dataclass(frozen=True)
class Envelope:
    from_: str
    to: str
    label: str
    payload: Any
    seq: int


@dataclass(frozen=True)
class Event:
    step: int
    kind: str
    role: str
    label: str | None = None
    rule_id: str | None = None
    detail: Any = None

    def to_json(self) -> dict:
        d: dict[str, Any] = {"step": self.step, "kind": self.kind, "role": self.role}
        if self.label is not None:
            d["label"] = self.label
        if self.rule_id is not None:
            d["ruleId"] = self.rule_id
        if self.detail is not None:
            d["detail"] = self.detail
        return d


def trace_to_jsonl(trace: Iterable[Event]) -> str:
    return "".join(json.dumps(e.to_json(), sort_keys=True, separators=(",", ":")) + "\n"
                   for e in trace)


@dataclass
class Outcome:
    status: str  # completed | deadlock | aborted
    final_stores: dict
    trace: list = field(default_factory=list)
    error: dict | None = None
    call_counts: dict = field(default_factory=dict)
    spawned_stores: dict = field(default_factory=dict)

    def events(self, kind: str) -> list[Event]:
        return [e for e in self.trace if e.kind == kind]

    def fingerprint(self) -> str:
        return outcome_fingerprint(self.status, self.final_stores, self.call_counts, self.error)


def outcome_fingerprint(status: str, stores: Mapping, calls: Mapping, error: Mapping | None) -> str:
    err = None if error is None else error.get("message")
    if status == "aborted":
        # roles still draining in-flight messages make partial stores schedule noise
        stores, calls = {}, {}
    return json.dumps({"status": status, "stores": stores, "calls": calls, "error": err},
                      sort_keys=True, separators=(",", ":"))


# -- term manipulation ---------------------------------------------------------


def mk_seq(items: Iterable[Action]) -> Action:
    flat: list[Action] = []
    for a in items:
        if isinstance(a, Noop):
            continue
        if isinstance(a, LocalSeq):
            flat.extend(a.items)
        else:
            flat.append(a)
    if not flat:
        return NOOP
    return flat[0] if len(flat) == 1 else LocalSeq(tuple(flat))


def mk_par(items: Iterable[Action]) -> Action:
    kept = [a for a in items if not isinstance(a, Noop)]
    if not kept:
        return NOOP
    return kept[0] if len(kept) == 1 else LocalPar(tuple(kept))


def replace_at(term: Action, path: tuple, new: Action) -> Action:
    if not path:
        return new
    i, rest = path[0], path[1:]
    if isinstance(term, LocalSeq):
        return mk_seq((replace_at(term.items[0], rest, new),) + term.items[1:])
    if isinstance(term, LocalPar):
        items = list(term.items)
        items[i] = replace_at(items[i], rest, new)
        return mk_par(items)
    raise ValueError(f"bad path {path} into {type(term).__name__}")


def leaf_at(term: Action, path: tuple) -> Action:
    for i in path:
        term = term.items[i]
    return term


def waits_on(leaf: Action) -> tuple[str, str] | None:
    """(sender, label) a blocking leaf needs at the head of its inbox."""
    if isinstance(leaf, Recv):
        return leaf.from_, leaf.label
    if isinstance(leaf, (BranchRecv, LoopRecv)):
        return leaf.from_, leaf.aux
    if isinstance(leaf, ScopeWait):
        return leaf.coordinator, scope_label(leaf.scope_id)
    return None


def leaves(term: Action, path: tuple = ()) -> Iterable[tuple[tuple, Action]]:
    if isinstance(term, LocalSeq):
        yield from leaves(term.items[0], path + (0,))
    elif isinstance(term, LocalPar):
        for i, t in enumerate(term.items):
            yield from leaves(t, path + (i,))
    elif not isinstance(term, Noop):
        yield path, term


class RoleContext(Protocol):
    role: str
    store: dict

    def pop(self, from_: str) -> Envelope: ...
    def send(self, to: str, label: str, payload: Any) -> None: ...
    def evaluate(self, expr) -> Value: ...
    def coordinate(self, action: ScopeCoord) -> Action: ...
    def record(self, kind: str, label: str | None = None, detail: Any = None,
               rule_id: str | None = None) -> None: ...


def _bool(v: Value, what: str) -> bool:
    if not isinstance(v, bool):
        raise EvalError(f"{what} condition is not a boolean")
    return v


def execute_leaf(leaf: Action, ctx: RoleContext) -> Action:
    """Fire one enabled endpoint action; returns what remains of it."""
    if isinstance(leaf, Send):
        v = UNIT if leaf.expr is None else ctx.evaluate(leaf.expr)
        ctx.send(leaf.to, leaf.label, v)
        return NOOP
    if isinstance(leaf, Recv):
        env = ctx.pop(leaf.from_)
        if leaf.var is not None:
            ctx.store[leaf.var] = env.payload
        ctx.record("recv", leaf.label, {"from": leaf.from_, "var": leaf.var})
        return NOOP
    if isinstance(leaf, LocalAssign):
        v = ctx.evaluate(leaf.expr)
        ctx.store[leaf.var] = v
        ctx.record("assign", None, {"var": leaf.var, "value": v})
        return NOOP
    if isinstance(leaf, IfLocal):
        taken = _bool(ctx.evaluate(leaf.cond), "if")
        tag = "then" if taken else "else"
        for r in leaf.notify:
            ctx.send(r, leaf.aux, tag)
        return leaf.then if taken else leaf.else_
    if isinstance(leaf, BranchRecv):
        env = ctx.pop(leaf.from_)
        ctx.record("recv", leaf.aux, {"from": leaf.from_, "branch": env.payload})
        if env.payload not in ("then", "else"):
            raise ProtocolError(f"bad branch tag {env.payload!r}", role=ctx.role)
        return leaf.then if env.payload == "then" else leaf.else_
    if isinstance(leaf, WhileLocal):
        go = _bool(ctx.evaluate(leaf.cond), "while")
        for r in leaf.notify:
            ctx.send(r, leaf.aux, "continue" if go else "exit")
        return mk_seq((leaf.body, leaf)) if go else NOOP
    if isinstance(leaf, LoopRecv):
        env = ctx.pop(leaf.from_)
        ctx.record("recv", leaf.aux, {"from": leaf.from_, "branch": env.payload})
        if env.payload == "continue":
            return mk_seq((leaf.body, leaf))
        if env.payload == "exit":
            return NOOP
        raise ProtocolError(f"bad loop tag {env.payload!r}", role=ctx.role)
    if isinstance(leaf, ScopeCoord):
        return ctx.coordinate(leaf)
    if isinstance(leaf, ScopeWait):
        env = ctx.pop(leaf.coordinator)
        directive = env.payload if isinstance(env.payload, dict) else {}
        ctx.record("recv", scope_label(leaf.scope_id),
                   {"from": leaf.coordinator, "directive": directive.get("directive")},
                   rule_id=directive.get("ruleId"))
        if directive.get("directive") == "apply":
            return action_from_json(directive["code"])
        if directive.get("directive") == "original":
            return leaf.original
        raise ProtocolError(f"malformed scope directive {env.payload!r}", role=ctx.role)
    raise ProtocolError(f"cannot execute {type(leaf).__name__}", role=ctx.role)


def with_rendezvous(programs: Mapping[str, Action], starter: str) -> dict[str, Action]:
    """Prefix each program with the hello/start handshake around the starter."""
    roles = sorted(programs)
    others = [r for r in roles if r != starter]
    if not others:
        return dict(programs)
    out = {}
    for r in roles:
        if r == starter:
            out[r] = mk_seq([mk_par([Recv(HELLO, o, None) for o in others]),
                             mk_seq([Send(START, o, None) for o in others]), programs[r]])
        else:
            out[r] = mk_seq([Send(HELLO, starter, None), Recv(START, starter, None), programs[r]])
    return out


def instance_names(new_roles: Iterable[str], reusable: Callable[[str], bool],
                   taken: Callable[[str], bool]) -> dict[str, str]:
    """Pick a live-unique instance name for every role a rule introduces."""
    names: dict[str, str] = {}
    chosen: set[str] = set()
    for nr in sorted(new_roles):
        cand, k = nr, 0
        while cand in chosen or (taken(cand) and not reusable(cand)):
            k += 1
            cand = f"{nr}'{k}"
        names[nr] = cand
        chosen.add(cand)
    return names


def installed_code(match: MatchResult, names: Mapping[str, str], scope_id: str) -> dict[str, Action]:
    """Per-role code of a matched rule, with instance names and scope-qualified labels."""
    return {names.get(r, r): qualify_action(rename_action(p, names), scope_id)
            for r, p in match.code.programs.items()}


def directive_payload(match: MatchResult | None, program: Action | None) -> dict:
    if match is None:
        return {"directive": "original"}
    return {"directive": "apply", "ruleId": match.rule_id, "code": action_to_json(program)}


# -- the simulated system ----------------------------------------------------------


class EnvStore:
    """Runtime-global environment; every write bumps the version."""

    def __init__(self, values: Mapping[str, Value] | None = None, version: int = 0):
        self.values: dict[str, Value] = dict(values or {})
        self.version = version

    def get(self, name: str, default: Any = None) -> Any:
        return self.values.get(name, default)

    def set(self, name: str, value: Value) -> None:
        self.values[name] = value
        self.version += 1

    def unset(self, name: str) -> None:
        self.values.pop(name, None)
        self.version += 1

    def snapshot(self) -> dict[str, Value]:
        return dict(self.values)

    def copy(self) -> "EnvStore":
        return EnvStore(self.values, self.version)


def env_get(env: EnvStore, name: str) -> Any:
    return env.get(name)


def env_set(env: EnvStore, name: str, value: Value) -> None:
    env.set(name, value)


@dataclass
class RunConfig:
    services: ServiceRegistry = field(default_factory=ServiceRegistry)
    inputs: list = field(default_factory=list)
    env: dict = field(default_factory=dict)
    registry: RuleRegistry = field(default_factory=RuleRegistry)
    timeline: list = field(default_factory=list)
    scheduler: Any = None
    starter: str | None = None
    live_env_checks: bool = False
    console_input: bool = False
    max_steps: int = 1_000_000
    record_trace: bool = True


class Executor:
    __slots__ = ("term", "store", "spawned")

    def __init__(self, term: Action, store: dict | None = None, spawned: bool = False):
        self.term = term
        self.store = store if store is not None else {}
        self.spawned = spawned

    @property
    def finished(self) -> bool:
        return isinstance(self.term, Noop)


class _Ctx:
    """RoleContext over the simulated system for one role."""

    def __init__(self, system: "System", role: str):
        self.system = system
        self.role = role
        self.store = system.executors[role].store

    def pop(self, from_: str) -> Envelope:
        return self.system._pop(from_, self.role)

    def send(self, to: str, label: str, payload: Any) -> None:
        self.system._send(self.role, to, label, payload)

    def evaluate(self, expr) -> Value:
        return self.system._evaluate(self.role, expr)

    def coordinate(self, action: ScopeCoord) -> Action:
        return self.system._coordinate(self.role, action)

    def record(self, kind, label=None, detail=None, rule_id=None) -> None:
        self.system._record(kind, self.role, label, detail, rule_id)


class System:
    """Global state of a simulated run: executors, FIFO channels, env, registry."""

    def __init__(self, programs: Mapping[str, Action], config: RunConfig,
                 participants: Iterable[str] | None = None):
        self.config = config
        self.participants = tuple(sorted(participants if participants is not None else programs))
        self.executors = {r: Executor(p) for r, p in sorted(programs.items())}
        self.inboxes: dict[tuple[str, str], tuple] = {}
        self.seqs: dict[tuple[str, str], int] = {}
        self.env = EnvStore(config.env)
        self.registry = config.registry
        self.timeline = tuple(config.timeline)
        self.timeline_pos = 0
        self.inputs = tuple(config.inputs)
        self.input_pos = 0
        self.steps = 0
        self.query_count = 0
        self.check_count = 0
        self.call_counts: dict[str, int] = {}
        self.spawned_stores: dict[str, dict] = {}
        self.trace: list[Event] | None = [] if config.record_trace else None
        self.status = "running"
        self.error: dict | None = None
        self._key: bytes | None = None

    @classmethod
    def from_projection(cls, code: RoleCodeMap, config: RunConfig) -> "System":
        starter = config.starter or (code.roles[0] if code.roles else "")
        return cls(with_rendezvous(code.programs, starter), config, code.programs)

    def clone(self) -> "System":
        c = object.__new__(System)
        c.__dict__.update(self.__dict__)
        c.executors = {r: Executor(e.term, dict(e.store), e.spawned)
                       for r, e in self.executors.items()}
        c.inboxes = dict(self.inboxes)
        c.seqs = dict(self.seqs)
        c.env = self.env.copy()
        c.call_counts = dict(self.call_counts)
        c.spawned_stores = dict(self.spawned_stores)
        c.trace = None if self.trace is None else list(self.trace)
        return c

    # -- scheduling surface

    def enabled(self) -> list[tuple[str, tuple]]:
        if self.status != "running":
            return []
        out = []
        for role, ex in self.executors.items():
            for path, leaf in leaves(ex.term):
                need = waits_on(leaf)
                if need is None:
                    out.append((role, path))
                    continue
                q = self.inboxes.get((need[0], role))
                if q and q[0].label == need[1]:
                    out.append((role, path))
        return out

    def apply(self, choice: tuple[str, tuple]) -> None:
        self._key = None
        role, path = choice
        ex = self.executors[role]
        leaf = leaf_at(ex.term, path)
        try:
            rest = execute_leaf(leaf, _Ctx(self, role))
            # the executor may have been replaced if this step spawned a same-named role
            ex = self.executors[role]
            ex.term = replace_at(ex.term, path, rest)
        except RunAborted as exc:
            self._abort(exc.detail, role)
        except ServiceFailure as exc:
            self._abort({"message": str(exc), "service": exc.service}, role)
        except EvalError as exc:
            self._abort({"message": str(exc)}, role)
        self.steps += 1

    def step_executor(self, role: str) -> str:
        """Fire the first enabled action of ``role``: stepped | blocked | finished."""
        ex = self.executors[role]
        if ex.finished:
            return "finished"
        for c in self.enabled():
            if c[0] == role:
                self.apply(c)
                return "stepped"
        return "blocked"

    def before_step(self) -> None:
        self._fire_due()

    def settle(self) -> None:
        """Decide the final status once nothing can step."""
        self._key = None
        if self.status != "running":
            return
        pending = {k: q for k, q in self.inboxes.items() if q}
        if all(e.finished for e in self.executors.values()):
            if pending:
                self._abort({"message": "messages left undelivered",
                             "channels": sorted(f"{a}->{b}" for a, b in pending)}, None)
            else:
                self.status = "completed"
            return
        for role, ex in self.executors.items():
            for _, leaf in leaves(ex.term):
                need = waits_on(leaf)
                q = self.inboxes.get((need[0], role)) if need else None
                if q and q[0].label != need[1]:
                    self._abort({"message": f"{role} expects {need[1]} from {need[0]} "
                                            f"but the channel holds {q[0].label}"}, role)
                    return
        self.status = "deadlock"

    def outcome(self) -> Outcome:
        stores = {r: dict(self.executors[r].store) for r in self.participants}
        spawned = dict(self.spawned_stores)
        for r, e in self.executors.items():
            if e.spawned:
                spawned[r] = dict(e.store)
        return Outcome(self.status, stores, list(self.trace or []), self.error,
                       dict(self.call_counts), spawned)

    def key(self) -> bytes:
        """Canonical digest of everything that can influence the rest of the run."""
        cached = self.__dict__.get("_key")
        if cached is not None:
            return cached
        parts = [
            [(r, e.term.digest(), e.store) for r, e in self.executors.items()],
            sorted((f"{a}>{b}", [(m.label, m.payload) for m in q])
                   for (a, b), q in self.inboxes.items() if q),
            self.env.values, self.registry.version(), self.timeline_pos, self.input_pos,
            sorted(self.call_counts.items()), self.status, self.error,
        ]
        if self.timeline_pos < len(self.timeline):
            parts.append((self.steps, self.query_count, self.check_count))
        text = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
        self._key = hashlib.blake2b(text.encode(), digest_size=16).digest()
        return self._key

    # -- effects used by execute_leaf

    def _record(self, kind: str, role: str, label=None, detail=None, rule_id=None) -> None:
        if self.trace is not None:
            self.trace.append(Event(self.steps, kind, role, label, rule_id, detail))

    def _abort(self, detail: dict, role: str | None) -> None:
        self.status = "aborted"
        self.error = {**detail, "role": detail.get("role", role)}
        self._record("abort", role or "", None, self.error)

    def _send(self, src: str, dst: str, label: str, payload: Any) -> None:
        target = self.executors.get(dst)
        if target is None:
            raise ProtocolError(f"{src} sends {label} to unknown role {dst}", role=src)
        if target.finished and label.startswith("#scope@"):
            raise ProtocolError(f"directive {label} sent to terminated role {dst}", role=src)
        k = (src, dst)
        seq = self.seqs.get(k, 0)
        self.seqs[k] = seq + 1
        self.inboxes[k] = self.inboxes.get(k, ()) + (Envelope(src, dst, label, payload, seq),)
        self._record("send", src, label, {"to": dst, "payload": payload})

    def _pop(self, src: str, dst: str) -> Envelope:
        q = self.inboxes.get((src, dst))
        if not q:
            raise ProtocolError(f"{dst} receives from {src} on an empty channel", role=dst)
        self.inboxes[(src, dst)] = q[1:]
        return q[0]

    def _evaluate(self, role: str, expr) -> Value:
        system = self

        class _Services:
            def invoke(self, name: str, args: list) -> Value:
                system.call_counts[name] = system.call_counts.get(name, 0) + 1
                system._record("serviceCall", role, name, {"args": args})
                try:
                    return system.config.services.invoke(name, args)
                except ServiceFailure as exc:
                    raise RunAborted(str(ServiceFailure(name, exc.message, role)),
                                     service=name, role=role) from None

        class _Inputs:
            def read(self, prompt: Value) -> Value:
                if system.input_pos < len(system.inputs):
                    v = system.inputs[system.input_pos]
                    system.input_pos += 1
                elif system.config.console_input:
                    v = ConsoleInput().read(prompt)
                else:
                    raise RunAborted("input underrun", role=role)
                system._record("input", role, None, {"prompt": prompt, "value": v})
                return v

        return eval_expr(self.executors[role].store, expr, _Services(), _Inputs())

    def _coordinate(self, role: str, action: ScopeCoord) -> Action:
        self.query_count += 1
        self._fire_due()
        props = action.prop_map()
        locals_ = dict(self.executors[role].store)
        env = self.env.snapshot()
        self._record("adaptQuery", role, scope_label(action.scope_id),
                     {"scopeId": action.scope_id, "props": props})

        def before_check(k: int):
            self.check_count += 1
            fired = self._fire_due()
            if fired and self.config.live_env_checks:
                return self.env.snapshot()
            return None

        match = match_rule(self.registry, props, locals_, env, involved=action.involved,
                           before_check=before_check)
        label = scope_label(action.scope_id)
        others = [r for r in action.involved if r != role]
        if match is None:
            for r in others:
                self._send(role, r, label, directive_payload(None, None))
            self._record("noRule", role, label, {"scopeId": action.scope_id})
            return action.original
        names = instance_names(match.new_roles, self._reusable, lambda n: n in self.executors)
        code = installed_code(match, names, action.scope_id)
        for r in others:
            self._send(role, r, label, directive_payload(match, code.get(r, NOOP)))
        for nr in sorted(match.new_roles):
            self._spawn(names[nr], code.get(names[nr], NOOP))
        self._record("ruleApplied", role, label, {"scopeId": action.scope_id,
                                                   "spawned": sorted(names.values())},
                     match.rule_id)
        return code.get(role, NOOP)

    def _reusable(self, name: str) -> bool:
        ex = self.executors.get(name)
        if ex is None:
            return True
        if not ex.spawned or not ex.finished:
            return False
        return not any(q for (a, b), q in self.inboxes.items() if name in (a, b))

    def spawn_role(self, role: str, code: Action) -> None:
        self._key = None
        ex = self.executors.get(role)
        if ex is not None and not self._reusable(role):
            raise RunAborted(f"cannot spawn {role}: a live role has that name", role=role)
        self._spawn(role, code)

    def _spawn(self, role: str, code: Action) -> None:
        old = self.executors.get(role)
        if old is not None:
            self.spawned_stores[role] = dict(old.store)
        self.executors[role] = Executor(code, {}, spawned=True)
        self.executors = dict(sorted(self.executors.items()))
        self._record("roleSpawned", role, None, None)

    def _fire_due(self) -> bool:
        fired = False
        while self.timeline_pos < len(self.timeline):
            t = self.timeline[self.timeline_pos]
            counter = {"atTraceStep": self.steps, "beforeAdaptQuery": self.query_count,
                       "beforeRuleCheck": self.check_count}[t.trigger]
            if counter < t.n:
                break
            self.timeline_pos += 1
            self._key = None
            self._apply_timeline_action(t)
            fired = True
        return fired

    def _apply_timeline_action(self, t: TimelineEntry) -> None:
        a = t.args
        if t.action == "env/set":
            values = a["values"] if "values" in a else {a["name"]: a["value"]}
            for k, v in values.items():
                self.env.set(k, v)
        elif t.action == "env/unset":
            self.env.unset(a["name"])
        elif t.action == "rules/connect":
            self.registry = self.registry.connect(a["text"], a["id"])
        elif t.action == "rules/disconnect":
            self.registry = self.registry.disconnect(a["id"])
        elif t.action == "input/push":
            self.inputs = self.inputs + (a["value"],)
        self._record("timeline", "", None, {"trigger": t.trigger, "n": t.n,
                                            "action": t.action,
                                            "args": {k: v for k, v in a.items() if k != "text"}})


def apply_timeline(system: System) -> bool:
    """Fire every due timeline trigger at the current hook; True if any fired."""
    return system._fire_due()


def run(projections: RoleCodeMap, config: RunConfig | None = None) -> Outcome:
    """Execute projected programs under the configured scheduler until they stop."""
    config = config or RunConfig()
    scheduler = config.scheduler or SeededScheduler(0)
    system = System.from_projection(projections, config)
    while system.status == "running":
        system.before_step()
        choices = system.enabled()
        if not choices:
            break
        if system.steps >= config.max_steps:
            system._abort({"message": f"step bound {config.max_steps} reached"}, None)
            break
        try:
            choice = scheduler.choose(choices)
        except RunAborted as exc:
            system._abort(exc.detail, None)
            break
        system.apply(choice)
    system.settle()
    return system.outcome()
