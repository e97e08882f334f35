"""Exhaustive schedule exploration and the global reference interpreter.

The reference interpreter runs the choreography itself (no projection, no
messages) and serves as the oracle for the projected system: both must reach
the same set of outcomes.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, replace
from typing import Any

from .adaptation import match_rule
from .checker import check_program, check_rule
from .model import (
    INPUT_BUILTIN, Action, Assign, BranchRecv, EvalError, If, IfLocal, Interaction, LocalAssign,
    LocalPar, LoopRecv, Par, Program, Recv, Scope, ScopeCoord, ScopeWait, Send, Seq,
    ServiceFailure, Skip, Stmt, Value, While, WhileLocal, eval_expr, expr_calls, expr_vars,
    iter_actions, rename_stmt, roles_of,
)
from .projector import RoleCodeMap, project_program
from .runtime import (
    UNIT, EnvStore, Outcome, RunAborted, RunConfig, ScriptedScheduler, System,
    TimelineEntry, _bool, leaf_at, leaves, outcome_fingerprint, run,
)


@dataclass(frozen=True)
class Bounds:
    max_states: int = 2_000_000
    max_depth: int = 10_000


@dataclass
class ExplorationReport:
    states_visited: int = 0
    schedules_explored: int = 0
    deadlocks: list = field(default_factory=list)  # [{"schedule": [...], "blocked": {...}}]
    outcomes: dict = field(default_factory=dict)  # fingerprint -> Outcome
    truncated: bool = False

    def summary(self) -> str:
        n, d = len(self.outcomes), len(self.deadlocks)
        text = f"{d} deadlock{'s' if d != 1 else ''}, {n} outcome{'s' if n != 1 else ''}"
        return text + (" (truncated)" if self.truncated else "")

    def to_json(self) -> dict:
        return {
            "statesVisited": self.states_visited,
            "schedulesExplored": self.schedules_explored,
            "deadlocks": self.deadlocks,
            "outcomes": [json.loads(fp) for fp in sorted(self.outcomes)],
            "truncated": self.truncated,
        }


def _unwind(path) -> list:
    out = []
    while path is not None:
        choice, _, path = path
        out.append([choice[0], list(choice[1])])
    return out[::-1]


def _reads_input(leaf: Action) -> bool:
    exprs = [getattr(leaf, a, None) for a in ("expr", "cond")]
    return any(e is not None and INPUT_BUILTIN in expr_calls(e) for e in exprs)


@dataclass(frozen=True)
class _Footprint:
    reads: frozenset = frozenset()
    writes: frozenset = frozenset()
    outs: frozenset = frozenset()  # destination roles (base names)
    ins: frozenset = frozenset()  # (source role, label)

    def __or__(self, o: "_Footprint") -> "_Footprint":
        return _Footprint(self.reads | o.reads, self.writes | o.writes,
                          self.outs | o.outs, self.ins | o.ins)

    def conflicts(self, o: "_Footprint") -> bool:
        return bool(self.writes & (o.reads | o.writes) or self.reads & o.writes
                    or self.outs & o.outs or self.ins & o.ins)


_NO_FOOTPRINT = _Footprint()


def _base(role: str) -> str:
    return role.split("'", 1)[0]


def _lbase(label: str) -> str:
    # installed code carries instance-qualified labels; compare conservatively
    return label.split("@", 1)[0]


def _leaf_footprint(a: Action) -> _Footprint:
    reads = set()
    for e in (getattr(a, "expr", None), getattr(a, "cond", None)):
        if e is not None:
            reads |= expr_vars(e)
    if isinstance(a, Send):
        return _Footprint(frozenset(reads), outs=frozenset({_base(a.to)}))
    if isinstance(a, Recv):
        return _Footprint(writes=frozenset({a.var} - {None}),
                          ins=frozenset({(_base(a.from_), _lbase(a.label))}))
    if isinstance(a, LocalAssign):
        return _Footprint(frozenset(reads), frozenset({a.var}))
    if isinstance(a, (IfLocal, WhileLocal)):
        return _Footprint(frozenset(reads), outs=frozenset(_base(r) for r in a.notify))
    if isinstance(a, (BranchRecv, LoopRecv)):
        return _Footprint(ins=frozenset({(_base(a.from_), _lbase(a.aux))}))
    if isinstance(a, ScopeWait):
        return _Footprint(ins=frozenset({(_base(a.coordinator), "#scope")}))
    if isinstance(a, ScopeCoord):
        return _Footprint(outs=frozenset(_base(r) for r in a.involved))
    return _NO_FOOTPRINT


class _Footprints:
    """Over-approximated footprints of what a role may still do, per rule registry."""

    def __init__(self, registry):
        self.cond_reads = frozenset().union(*(
            expr_vars(cr.rule.condition) for repo in registry.repositories for cr in repo.rules))
        self.universe: dict[str, _Footprint] = {}
        for repo in registry.repositories:
            for cr in repo.rules:
                for role, prog in cr.code.programs.items():
                    fp = self._static(prog)
                    self.universe[role] = self.universe.get(role, _NO_FOOTPRINT) | fp
        self.cache: dict[str, _Footprint] = {}

    def _static(self, a: Action) -> _Footprint:
        fp = _NO_FOOTPRINT
        for x in iter_actions(a):
            fp = fp | _leaf_footprint(x)
            if isinstance(x, ScopeCoord):
                fp = fp | _Footprint(self.cond_reads)
        return fp

    def future(self, a: Action, role: str) -> _Footprint:
        key = a.digest()
        fp = self.cache.get(key)
        if fp is None:
            fp = self._static(a)
            if any(isinstance(x, (ScopeWait, ScopeCoord)) for x in iter_actions(a)):
                # adapted code: whatever any connected rule may hand to this role
                fp = fp | self.universe.get(_base(role), _NO_FOOTPRINT)
            self.cache[key] = fp
        return fp


_footprint_tables: dict[tuple, _Footprints] = {}


def _footprints(registry) -> _Footprints:
    key = registry.version()
    table = _footprint_tables.get(key)
    if table is None or table.registry is not registry:
        table = _Footprints(registry)
        table.registry = registry
        _footprint_tables.clear()
        _footprint_tables[key] = table
    return table


def _is_local(leaf: Action) -> bool:
    return not isinstance(leaf, ScopeCoord) and not _reads_input(leaf)


def _siblings(term: Action, path: tuple) -> list[Action]:
    """Subterms running in parallel with the leaf at ``path``."""
    out = []
    for i in path:
        if isinstance(term, LocalPar):
            out.extend(t for j, t in enumerate(term.items) if j != i)
        term = term.items[i]
    return out


def _reduced_choices(system: System, choices: list[tuple]) -> list[tuple] | None:
    """A subset of ``choices`` that commutes with everything left out, or None.

    A role-local step (no scope query, no console input) only touches its
    role's store and channels, so it is independent of other roles.  Within
    its own role it must not clash with anything a parallel branch may still
    do, including code that adaptation could install there.
    """
    pending_timeline = system.timeline[system.timeline_pos:]
    if any(t.trigger == "atTraceStep" for t in pending_timeline):
        return None
    by_role: dict[str, list] = {}
    for c in choices:
        by_role.setdefault(c[0], []).append(c)
    thread_level = not any(t.action == "rules/connect" for t in pending_timeline)
    table = _footprints(system.registry) if thread_level else None
    for role, cs in by_role.items():
        term = system.executors[role].term
        pending = [leaf for _, leaf in leaves(term)]
        if len(pending) == len(cs) and all(_is_local(leaf) for leaf in pending):
            if len(cs) == 1 or not thread_level:
                return cs
        if not thread_level:
            continue
        for c in cs:
            leaf = leaf_at(term, c[1])
            if not _is_local(leaf):
                continue
            mine = _leaf_footprint(leaf)
            if not any(mine.conflicts(table.future(t, role)) for t in _siblings(term, c[1])):
                return [c]
    return None


def _on_path(key: bytes, path) -> bool:
    while path is not None:
        if path[1] == key:
            return True
        path = path[2]
    return False


def _expand(system: System, choices: list[tuple], path, reduce: bool) -> list:
    if reduce:
        local = _reduced_choices(system, choices)
        if local is not None:
            kids = []
            for c in local:
                child = system.clone()
                child.apply(c)
                kids.append((c, child))
            # an abort, or closing a cycle, could hide interleavings: expand fully
            if all(k.status == "running" and not _on_path(k.key(), path) for _, k in kids):
                return kids
    kids = []
    for c in choices:
        child = system.clone()
        child.apply(c)
        kids.append((c, child))
    return kids


def explore(projections: RoleCodeMap, config: RunConfig | None = None,
            bounds: Bounds = Bounds(), *, reduce: bool = True) -> ExplorationReport:
    """Depth-first enumeration of every scheduler choice, memoizing global states.

    With ``reduce`` (the default) commuting role-local steps are explored in a
    single order; deadlocks and the set of outcomes are unaffected.
    """
    config = replace(config or RunConfig(), record_trace=False, scheduler=None)
    report = ExplorationReport()
    visited: set[bytes] = set()
    stack: list[tuple[System, Any, int]] = [(System.from_projection(projections, config), None, 0)]
    while stack:
        system, path, depth = stack.pop()
        system.before_step()
        k = system.key()
        if k in visited:
            continue
        if len(visited) >= bounds.max_states:
            report.truncated = True
            break
        visited.add(k)
        choices = system.enabled()
        if not choices:
            system.settle()
            report.schedules_explored += 1
            if system.status == "deadlock":
                blocked = {r: e.term.canonical() for r, e in system.executors.items()
                           if not e.finished}
                report.deadlocks.append({"schedule": _unwind(path), "blocked": blocked})
            else:
                out = system.outcome()
                report.outcomes.setdefault(out.fingerprint(), out)
            continue
        if depth >= bounds.max_depth:
            report.truncated = True
            continue
        for c, child in reversed(_expand(system, choices, (None, k, path), reduce)):
            stack.append((child, (c, k, path), depth + 1))
    report.states_visited = len(visited)
    return report


def replay(projections: RoleCodeMap, config: RunConfig, schedule: list) -> Outcome:
    """Re-run a recorded schedule (e.g. a deadlock witness) under a scripted scheduler."""
    return run(projections, replace(config, scheduler=ScriptedScheduler(schedule)))


# -- reference interpreter -----------------------------------------------------


def _gseq(items) -> Stmt:
    flat = []
    for s in items:
        if isinstance(s, Skip):
            continue
        flat.extend(s.items if isinstance(s, Seq) else (s,))
    if not flat:
        return Skip()
    return flat[0] if len(flat) == 1 else Seq(tuple(flat))


def _gpar(items) -> Stmt:
    kept = [s for s in items if not isinstance(s, Skip)]
    if not kept:
        return Skip()
    return kept[0] if len(kept) == 1 else Par(tuple(kept))


def _gleaves(s: Stmt, path: tuple = ()):
    if isinstance(s, Seq):
        yield from _gleaves(s.items[0], path + (0,))
    elif isinstance(s, Par):
        for i, c in enumerate(s.items):
            yield from _gleaves(c, path + (i,))
    elif not isinstance(s, Skip):
        yield path, s


def _greplace(s: Stmt, path: tuple, new: Stmt) -> Stmt:
    if not path:
        return new
    i, rest = path[0], path[1:]
    if isinstance(s, Seq):
        return _gseq((_greplace(s.items[0], rest, new),) + s.items[1:])
    items = list(s.items)
    items[i] = _greplace(items[i], rest, new)
    return _gpar(items)


def _gat(s: Stmt, path: tuple) -> Stmt:
    for i in path:
        s = s.items[i]
    return s


class GlobalState:
    """State of the reference interpreter: remaining choreography plus all stores."""

    def __init__(self, program: Program, config: RunConfig):
        self.config = config
        self.term: Stmt = _gseq((program.body,))
        self.participants = tuple(sorted(roles_of(program.body)))
        self.stores: dict[str, dict] = {r: {} for r in self.participants}
        self.env = EnvStore(config.env)
        self.registry = config.registry
        self.timeline: tuple[TimelineEntry, ...] = tuple(config.timeline)
        self.timeline_pos = 0
        self.inputs = tuple(config.inputs)
        self.input_pos = 0
        self.steps = self.query_count = self.check_count = 0
        self.call_counts: dict[str, int] = {}
        self.spawn_counter: dict[str, int] = {}
        self.events: list[tuple] = []
        self.status = "running"
        self.error: dict | None = None

    def clone(self) -> "GlobalState":
        c = object.__new__(GlobalState)
        c.__dict__.update(self.__dict__)
        c.stores = {r: dict(s) for r, s in self.stores.items()}
        c.env = self.env.copy()
        c.call_counts = dict(self.call_counts)
        c.spawn_counter = dict(self.spawn_counter)
        c.events = list(self.events)
        return c

    def enabled(self) -> list[tuple]:
        if self.status != "running":
            return []
        return [p for p, _ in _gleaves(self.term)]

    def key(self) -> bytes:
        parts = [repr(self.term), self.stores, self.env.values, self.registry.version(),
                 self.timeline_pos, self.input_pos, sorted(self.call_counts.items()),
                 self.status, self.error, sorted(self.spawn_counter.items())]
        if self.timeline_pos < len(self.timeline):
            parts.append((self.steps, self.query_count, self.check_count))
        text = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.blake2b(text.encode(), digest_size=16).digest()

    def fingerprint(self) -> str:
        stores = {r: self.stores[r] for r in self.participants}
        return outcome_fingerprint(self.status, stores, self.call_counts, self.error)

    def finish(self) -> None:
        if self.status == "running":
            self.status = "completed"

    # -- evaluation

    def _eval(self, role: str, expr) -> Value:
        state = self

        class _Services:
            def invoke(self, name, args):
                state.call_counts[name] = state.call_counts.get(name, 0) + 1
                try:
                    return state.config.services.invoke(name, args)
                except ServiceFailure as exc:
                    raise RunAborted(str(ServiceFailure(name, exc.message, role)),
                                     service=name, role=role) from None

        class _Inputs:
            def read(self, prompt):
                if state.input_pos >= len(state.inputs):
                    raise RunAborted("input underrun", role=role)
                state.input_pos += 1
                return state.inputs[state.input_pos - 1]

        return eval_expr(self.stores.setdefault(role, {}), expr, _Services(), _Inputs())

    def _fire_due(self) -> bool:
        fired = False
        while self.timeline_pos < len(self.timeline):
            t = self.timeline[self.timeline_pos]
            counter = {"atTraceStep": self.steps, "beforeAdaptQuery": self.query_count,
                       "beforeRuleCheck": self.check_count}[t.trigger]
            if counter < t.n:
                break
            self.timeline_pos += 1
            fired = True
            a = t.args
            if t.action == "env/set":
                for k, v in (a["values"] if "values" in a else {a["name"]: a["value"]}).items():
                    self.env.set(k, v)
            elif t.action == "env/unset":
                self.env.unset(a["name"])
            elif t.action == "rules/connect":
                self.registry = self.registry.connect(a["text"], a["id"])
            elif t.action == "rules/disconnect":
                self.registry = self.registry.disconnect(a["id"])
            elif t.action == "input/push":
                self.inputs = self.inputs + (a["value"],)
        return fired

    def apply(self, path: tuple) -> None:
        leaf = _gat(self.term, path)
        try:
            self.term = _greplace(self.term, path, self._exec(leaf))
        except RunAborted as exc:
            self.status, self.error = "aborted", exc.detail
        except EvalError as exc:
            role = getattr(leaf, "role", None) or getattr(leaf, "sender", None)
            self.status, self.error = "aborted", {"message": str(exc), "role": role}
        self.steps += 1

    def _exec(self, s: Stmt) -> Stmt:
        if isinstance(s, Interaction):
            v = UNIT if s.expr is None else self._eval(s.sender, s.expr)
            if s.var is not None:
                self.stores.setdefault(s.receiver, {})[s.var] = v
            self.events.append(("interaction", s.label))
            return Skip()
        if isinstance(s, Assign):
            self.stores.setdefault(s.role, {})[s.var] = self._eval(s.role, s.expr)
            return Skip()
        if isinstance(s, If):
            taken = _bool(self._eval(s.role, s.cond), "if")
            return s.then if taken else (s.else_ or Skip())
        if isinstance(s, While):
            go = _bool(self._eval(s.role, s.cond), "while")
            return _gseq((s.body, s)) if go else Skip()
        if isinstance(s, Scope):
            return self._scope(s)
        raise TypeError(f"cannot execute {s!r}")

    def _scope(self, s: Scope) -> Stmt:
        self.query_count += 1
        self._fire_due()
        env = self.env.snapshot()

        def before_check(k: int):
            self.check_count += 1
            if self._fire_due() and self.config.live_env_checks:
                return self.env.snapshot()
            return None

        match = match_rule(self.registry, s.prop_map(), dict(self.stores.get(s.role, {})), env,
                           involved=roles_of(s), before_check=before_check)
        if match is None:
            self.events.append(("noRule", s.prop_map()))
            return s.body
        names = {}
        for nr in sorted(match.new_roles):
            k = self.spawn_counter.get(nr, 0)
            self.spawn_counter[nr] = k + 1
            names[nr] = nr if k == 0 else f"{nr}'{k}"
            self.stores[names[nr]] = {}
        self.events.append(("ruleApplied", match.rule_id))
        return rename_stmt(match.rule.body, names)


def reference_interpret(program: Program, config: RunConfig | None = None,
                        chooser: str | int = "first") -> GlobalState:
    """Run the global program once; ``chooser`` is "first" or an int seed."""
    state = GlobalState(program, config or RunConfig())
    rng = random.Random(chooser) if isinstance(chooser, int) else None
    while True:
        state._fire_due()
        choices = state.enabled()
        if not choices:
            break
        state.apply(choices[0] if rng is None else rng.choice(choices))
    state.finish()
    return state


def reference_outcomes(program: Program, config: RunConfig | None = None,
                       bounds: Bounds = Bounds()) -> tuple[dict[str, GlobalState], bool]:
    """Every outcome of the global program over all interleavings of parallel branches."""
    config = config or RunConfig()
    visited: set[bytes] = set()
    outcomes: dict[str, GlobalState] = {}
    truncated = False
    stack = [(GlobalState(program, config), 0)]
    while stack:
        state, depth = stack.pop()
        state._fire_due()
        k = state.key()
        if k in visited:
            continue
        if len(visited) >= bounds.max_states:
            truncated = True
            break
        visited.add(k)
        choices = state.enabled()
        if not choices:
            state.finish()
            outcomes.setdefault(state.fingerprint(), state)
            continue
        if depth >= bounds.max_depth:
            truncated = True
            continue
        for c in reversed(choices):
            child = state.clone()
            child.apply(c)
            stack.append((child, depth + 1))
    return outcomes, truncated


@dataclass
class EquivalenceReport:
    equivalent: bool
    race_free: bool
    projected: set
    reference: set
    only_projected: set
    only_reference: set
    exploration: ExplorationReport

    def summary(self) -> str:
        verdict = "equivalent" if self.equivalent else "NOT equivalent"
        return (f"{verdict}: {len(self.projected)} projected / {len(self.reference)} reference "
                f"outcomes, {len(self.exploration.deadlocks)} deadlocks")


def is_race_free(program: Program, config: RunConfig) -> bool:
    diags = list(check_program(program))
    for repo in config.registry.repositories:
        for cr in repo.rules:
            diags += check_rule(cr.rule)
    return not any(d.severity == "warning" for d in diags)


def check_equivalence(program: Program, config: RunConfig | None = None,
                      bounds: Bounds = Bounds(), code: RoleCodeMap | None = None) -> EquivalenceReport:
    """Compare projected-system outcomes with reference-interpreter outcomes.

    For race-free programs the two outcome sets must coincide and no schedule
    may deadlock.  Programs with race warnings only need to be deadlock free:
    a receive may commit after a later write to the same variable, which no
    atomic global run reproduces, so ``only_projected`` is reported but not
    held against them.  ``code`` substitutes a (possibly mutated) projection.
    """
    config = config or RunConfig()
    config = replace(config, starter=config.starter or program.starter)
    code = code or project_program(program)
    exploration = explore(code, config, bounds)
    ref, _ = reference_outcomes(program, config, bounds)
    projected, reference = set(exploration.outcomes), set(ref)
    race_free = is_race_free(program, config)
    ok = not exploration.deadlocks and (projected == reference or not race_free)
    return EquivalenceReport(ok, race_free, projected, reference, projected - reference,
                             reference - projected, exploration)
