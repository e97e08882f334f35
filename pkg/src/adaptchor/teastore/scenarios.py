"""Scripted TeaStore runs with machine-checkable expectations.

A scenario file names a choreography, the rule repositories to connect (in
order), the environment, the input script and a timeline, plus a list of
predicates over the resulting :class:`~adaptchor.runtime.Outcome`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..adaptation import RuleRegistry
from ..model import values_equal
from ..parser import parse_program
from ..projector import project_program
from ..runtime import Outcome, RunConfig, SeededScheduler, load_timeline, run
from .services import teastore_registry

HERE = Path(__file__).resolve().parent
CORPUS = HERE / "corpus"
SCENARIOS = HERE / "scenarios"


@dataclass
class Scenario:
    id: str
    choreography: str
    rules: list = field(default_factory=list)  # [{"id": ..., "file": ...}] in connection order
    env: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    timeline: list = field(default_factory=list)
    expected: list = field(default_factory=list)
    live_env_checks: bool = False
    fail_services: list = field(default_factory=list)
    seed: int = 0
    description: str = ""
    base_dir: Path = HERE

    @classmethod
    def from_json(cls, d: dict, base_dir: Path = HERE) -> "Scenario":
        return cls(id=d["id"], choreography=d["choreography"], rules=d.get("rules", []),
                   env=d.get("env", {}), inputs=d.get("inputs", []),
                   timeline=d.get("timeline", []), expected=d.get("expected", []),
                   live_env_checks=d.get("liveEnvChecks", False),
                   fail_services=d.get("failServices", []), seed=d.get("seed", 0),
                   description=d.get("description", ""), base_dir=base_dir)

    def path(self, name: str) -> Path:
        return (self.base_dir / name).resolve()


def scenario_ids() -> list[str]:
    return sorted(p.stem for p in SCENARIOS.glob("*.json"))


def load_scenario(ref: str | Path) -> Scenario:
    """Load by catalogue id (e.g. ``"barebone"``) or by path to a scenario file."""
    p = Path(ref)
    if not p.suffix:
        p = SCENARIOS / f"{ref}.json"
    if not p.exists():
        raise FileNotFoundError(f"no scenario {ref!r} (known: {', '.join(scenario_ids())})")
    base = HERE if p.resolve().parent == SCENARIOS else p.resolve().parent
    return Scenario.from_json(json.loads(p.read_text()), base)


def build(scenario: Scenario):
    """Program, projection and run configuration of a scenario."""
    program = parse_program(scenario.path(scenario.choreography).read_text())
    registry = RuleRegistry()
    for r in scenario.rules:
        registry = registry.connect(scenario.path(r["file"]).read_text(), r["id"])
    config = RunConfig(services=teastore_registry(scenario.fail_services),
                       inputs=list(scenario.inputs), env=dict(scenario.env), registry=registry,
                       timeline=load_timeline(scenario.timeline, scenario.base_dir),
                       scheduler=SeededScheduler(scenario.seed), starter=program.starter,
                       live_env_checks=scenario.live_env_checks)
    return program, project_program(program), config


def execute(scenario: Scenario, mode: str = "sim") -> Outcome:
    program, code, config = build(scenario)
    if mode == "sim":
        return run(code, config)
    if mode == "wire":
        from ..transport import run_wire
        return run_wire(code, config, program)
    raise ValueError(f"unknown mode {mode!r}")


# -- predicates ----------------------------------------------------------------------------


_MISSING = object()


def _lookup(store: Any, path: list) -> Any:
    for key in path:
        if isinstance(store, dict) and key in store:
            store = store[key]
        elif isinstance(store, list) and isinstance(key, int) and 0 <= key < len(store):
            store = store[key]
        else:
            return _MISSING
    return store


def rule_query_indices(outcome: Outcome) -> list[tuple[int, str | None]]:
    """(1-based adaptation query number, applied rule id or None) per scope entry."""
    out, n = [], 0
    for e in outcome.trace:
        if e.kind == "adaptQuery":
            n += 1
        elif e.kind == "ruleApplied":
            out.append((n, e.rule_id))
        elif e.kind == "noRule":
            out.append((n, None))
    return out


def check_predicate(p: dict, outcome: Outcome, mode: str = "sim") -> tuple[bool, str]:
    kind = p["kind"]
    if kind == "status":
        return outcome.status == p["equals"], f"status is {outcome.status}"
    if kind in ("store", "storeHas", "storeMissing", "storeStartsWith"):
        v = _lookup(outcome.final_stores.get(p["role"], {}), p["path"])
        where = f"{'.'.join(map(str, p['path']))}@{p['role']}"
        if kind == "storeHas":
            return v is not _MISSING, f"{where} {'present' if v is not _MISSING else 'missing'}"
        if kind == "storeMissing":
            return v is _MISSING, f"{where} {'missing' if v is _MISSING else 'present'}"
        if v is _MISSING:
            return False, f"{where} missing"
        if kind == "storeStartsWith":
            return isinstance(v, str) and v.startswith(p["prefix"]), f"{where} = {v!r}"
        return values_equal(v, p["equals"]), f"{where} = {v!r}"
    if kind == "calls":
        n = outcome.call_counts.get(p["service"], 0)
        return n == p["equals"], f"{p['service']} called {n} times"
    if kind == "callsIn":
        n = outcome.call_counts.get(p["service"], 0)
        return n in p["values"], f"{p['service']} called {n} times"
    if kind == "events":
        evs = outcome.events(p["event"])
        ok = "count" not in p or len(evs) == p["count"]
        if "ruleIds" in p:
            ok = ok and sorted(e.rule_id for e in evs) == sorted(p["ruleIds"])
        return ok, f"{len(evs)} {p['event']} events {sorted(str(e.rule_id) for e in evs)}"
    if kind == "rulesWithin":
        applied = [(n, r) for n, r in rule_query_indices(outcome) if r is not None]
        ok = all(p["from"] <= n <= p["to"] for n, _ in applied)
        return ok, f"rules applied at queries {applied}"
    if kind == "error":
        err = outcome.error or {}
        ok = all(values_equal(err.get(k), v) for k, v in p.get("fields", {}).items())
        ok = ok and p.get("contains", "") in str(err.get("message", ""))
        return ok, f"error {err}"
    if kind == "sameStoresAs":
        other = execute(load_scenario(p["scenario"]), mode)
        ignore = p.get("ignore", {})

        def strip(stores: dict) -> dict:
            return {r: {k: v for k, v in s.items() if k not in ignore.get(r, [])}
                    for r, s in stores.items()}

        ok = strip(outcome.final_stores) == strip(other.final_stores)
        return ok, f"stores {'match' if ok else 'differ from'} scenario {p['scenario']}"
    raise ValueError(f"unknown predicate kind {kind!r}")


@dataclass
class ScenarioReport:
    id: str
    mode: str
    outcome: Outcome
    results: list  # [(predicate, ok, detail)]

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.results)

    def render(self) -> str:
        lines = [f"scenario {self.id} [{self.mode}]: {'PASS' if self.passed else 'FAIL'} "
                 f"({self.outcome.status})"]
        for p, ok, detail in self.results:
            lines.append(f"  {'ok ' if ok else 'FAIL'} {p['kind']}: {detail}")
        if not self.passed:
            lines.append("  trace tail:")
            lines += [f"    {json.dumps(e.to_json(), sort_keys=True)}" for e in self.outcome.trace[-12:]]
        return "\n".join(lines)


def run_scenario(scenario: Scenario | str, mode: str = "sim") -> ScenarioReport:
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    outcome = execute(scenario, mode)
    results = [(p, *check_predicate(p, outcome, mode)) for p in scenario.expected]
    return ScenarioReport(scenario.id, mode, outcome, results)
