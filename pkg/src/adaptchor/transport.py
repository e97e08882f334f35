"""Distributed execution over TCP with newline-delimited JSON frames.

Every role runs as a node: a small server that funnels incoming frames into
per-sender FIFO inboxes, plus an executor thread that steps the role's
endpoint program with the same :func:`~adaptchor.runtime.execute_leaf` used
by the simulator.  A runtime node answers adaptation queries and the control
verbs; service nodes answer ``service_req`` frames.  :func:`run_wire` wires
all of them up on ephemeral localhost ports.
"""

from __future__ import annotations

import itertools
import json
import logging
import socket
import socketserver
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping
from urllib.parse import urlparse

from .adaptation import RepositoryError, RuleRegistry, match_rule
from .model import (
    NOOP, Action, DecodeError, EvalError, Noop, Program, ScopeCoord, ServiceFailure, Value,
    action_from_json, action_to_json, eval_expr,
)
from .parser import ParseError, parse_rules
from .projector import RoleCodeMap, scope_label
from .runtime import (
    HELLO, START, EnvStore, Envelope, Event, Outcome, ProtocolError, RunAborted, RunConfig,
    ServiceRegistry, TimelineEntry, directive_payload, execute_leaf, installed_code,
    instance_names, leaves, replace_at, waits_on, with_rendezvous,
)

log = logging.getLogger(__name__)

FRAME_KINDS = ("hello", "start", "msg", "service_req", "service_resp", "adapt_query",
               "adapt_resp", "directive", "control_req", "control_resp", "error")
ENVELOPE_KINDS = ("hello", "start", "msg", "directive")
Address = tuple  # (host, port)


# -- frames --------------------------------------------------------------------------


@dataclass(frozen=True)
class WireFrame:
    kind: str
    id: str = ""
    body: dict = field(default_factory=dict, hash=False)


def encode_frame(frame: WireFrame) -> str:
    """One JSON line (without the newline); keys sorted so equal frames encode equally."""
    if frame.kind not in FRAME_KINDS:
        raise ValueError(f"unknown frame kind {frame.kind!r}")
    return json.dumps({"kind": frame.kind, "id": frame.id, "body": frame.body},
                      sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _no_float(text: str):
    raise ValueError(f"floating-point numbers are not allowed: {text}")


def decode_frame(line: str | bytes) -> WireFrame:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("frame is not UTF-8", exc.start) from None
    line = line.rstrip("\r\n")
    if "\n" in line:
        raise DecodeError("embedded newline in frame", line.index("\n"))
    try:
        d = json.loads(line, parse_float=_no_float, parse_constant=_no_float)
    except json.JSONDecodeError as exc:
        raise DecodeError(exc.msg, len(line[: exc.pos].encode("utf-8"))) from None
    except ValueError as exc:
        raise DecodeError(str(exc), 0) from None
    if not isinstance(d, dict) or set(d) != {"kind", "id", "body"}:
        raise DecodeError("frame must be an object with kind, id and body", 0)
    if not isinstance(d["kind"], str) or not isinstance(d["id"], str) \
            or not isinstance(d["body"], dict):
        raise DecodeError("frame fields have the wrong types", 0)
    return WireFrame(d["kind"], d["id"], d["body"])


def envelope_frame(env: Envelope) -> WireFrame:
    kind = {HELLO: "hello", START: "start"}.get(env.label)
    if kind is None:
        kind = "directive" if env.label.startswith("#scope@") else "msg"
    body = {"from": env.from_, "to": env.to, "label": env.label, "seq": env.seq}
    if kind in ("msg", "directive"):
        body["payload"] = env.payload
    else:
        body["role"] = env.from_
    return WireFrame(kind, "", body)


def frame_envelope(frame: WireFrame) -> Envelope:
    b = frame.body
    if frame.kind in ("hello", "start"):
        label = HELLO if frame.kind == "hello" else START
        return Envelope(b.get("role", b.get("from")), b.get("to", ""), label, {}, b.get("seq", 0))
    return Envelope(b["from"], b["to"], b["label"], b.get("payload"), b["seq"])


def parse_location(location: str) -> Address:
    u = urlparse(location)
    if u.scheme != "socket" or not u.hostname or not u.port:
        raise ValueError(f"unsupported service location {location!r}")
    return (u.hostname, u.port)


# -- sockets ----------------------------------------------------------------------------


class FrameServer(socketserver.ThreadingTCPServer):
    """Threaded TCP server; ``dispatch(frame)`` returns the reply frame or None."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: Address, dispatch: Callable[[WireFrame], WireFrame | None]):
        self.dispatch = dispatch
        super().__init__(address, _FrameHandler)
        self.thread: threading.Thread | None = None

    @property
    def address(self) -> Address:
        return self.server_address[:2]

    def start(self) -> "FrameServer":
        self.thread = threading.Thread(target=self.serve_forever, args=(0.02,), daemon=True,
                                       name=f"frames:{self.address[1]}")
        self.thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


class _FrameHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        for raw in self.rfile:
            try:
                frame = decode_frame(raw)
            except DecodeError as exc:
                self._reply(WireFrame("error", "", {"message": str(exc), "offset": exc.offset}))
                continue
            if frame.kind not in FRAME_KINDS:
                self._reply(WireFrame("error", frame.id,
                                      {"message": f"unknown frame kind {frame.kind!r}"}))
                continue
            try:
                reply = self.server.dispatch(frame)
            except Exception as exc:  # a handler bug must not kill the connection silently
                log.exception("frame dispatch failed")
                reply = WireFrame("error", frame.id, {"message": str(exc)})
            if reply is not None:
                self._reply(reply)

    def _reply(self, frame: WireFrame) -> None:
        self.wfile.write((encode_frame(frame) + "\n").encode("utf-8"))
        self.wfile.flush()


class FrameClient:
    """One persistent connection; ``request`` is a blocking call/response pair."""

    _ids = itertools.count(1)

    def __init__(self, address: Address, *, attempts: int = 40, backoff: float = 0.025):
        delay, last = backoff, None
        for _ in range(attempts):
            try:
                self.sock = socket.create_connection(address, timeout=30)
                break
            except OSError as exc:
                last = exc
                time.sleep(delay)
                delay = min(delay * 2, 0.5)
        else:
            raise ConnectionError(f"cannot connect to {address[0]}:{address[1]}: {last}")
        self.sock.settimeout(None)
        self.file = self.sock.makefile("rwb")
        self.lock = threading.Lock()

    def send(self, frame: WireFrame) -> None:
        with self.lock:
            self.file.write((encode_frame(frame) + "\n").encode("utf-8"))
            self.file.flush()

    def request(self, kind: str, body: dict) -> WireFrame:
        frame = WireFrame(kind, str(next(self._ids)), body)
        with self.lock:
            self.file.write((encode_frame(frame) + "\n").encode("utf-8"))
            self.file.flush()
            line = self.file.readline()
        if not line:
            raise ConnectionError("connection closed while waiting for a reply")
        return decode_frame(line)

    def close(self) -> None:
        try:
            self.file.close()
            self.sock.close()
        except OSError:
            pass


def control(address: Address, verb: str, /, **args: Any) -> dict:
    """Send one control request and return the response body (raises on error frames)."""
    client = FrameClient(address)
    try:
        reply = client.request("control_req", {"verb": verb, "args": args})
    finally:
        client.close()
    if reply.kind == "error":
        raise RuntimeError(reply.body.get("message", "control request failed"))
    return reply.body


# -- services ----------------------------------------------------------------------------


class ServiceNode:
    """Serves ``service_req`` frames from a :class:`ServiceRegistry`."""

    def __init__(self, registry: ServiceRegistry, bind: Address = ("127.0.0.1", 0),
                 on_call: Callable[[str, list], None] | None = None):
        self.registry = registry
        self.on_call = on_call
        self.server = FrameServer(bind, self._dispatch)

    def _dispatch(self, frame: WireFrame) -> WireFrame:
        if frame.kind != "service_req":
            return WireFrame("error", frame.id, {"message": f"unexpected {frame.kind} frame"})
        name, args = frame.body.get("name"), frame.body.get("args", [])
        if self.on_call is not None:
            self.on_call(name, args)
        try:
            value = self.registry.invoke(name, args)
        except ServiceFailure as exc:
            return WireFrame("error", frame.id, {"message": exc.message, "service": name})
        return WireFrame("service_resp", frame.id, {"value": value})


def serve_service(registry: ServiceRegistry, bind: Address = ("127.0.0.1", 0),
                  on_call: Callable[[str, list], None] | None = None) -> ServiceNode:
    node = ServiceNode(registry, bind, on_call)
    node.server.start()
    return node


# -- the runtime (adaptation + control) ------------------------------------------------------


class RuntimeNode:
    """Rule registry, environment, input script and address book of a distributed run."""

    def __init__(self, registry: RuleRegistry | None = None, env: EnvStore | None = None,
                 bind: Address = ("127.0.0.1", 0), *, timeline=(), inputs=(),
                 live_env_checks: bool = False, locations: Mapping[str, Address] | None = None,
                 includes: Mapping[str, str] | None = None,
                 spawner: Callable[[str, Action], Address] | None = None):
        self.registry = registry or RuleRegistry()
        self.env = env or EnvStore()
        self.timeline = list(timeline)
        self.timeline_pos = 0
        self.inputs = deque(inputs)
        self.live_env_checks = live_env_checks
        self.locations = dict(locations or {})
        self.includes = dict(includes or {})
        self.spawner = spawner
        self.book: dict[str, Address] = {}
        self.spawned: set[str] = set()
        self.done: dict[str, dict] = {}
        self.abort: dict | None = None
        self.events: list[Event] = []
        self.query_count = self.check_count = 0
        self.lock = threading.RLock()
        self.changed = threading.Condition(self.lock)
        self.last_progress = time.monotonic()
        self.server = FrameServer(bind, self._dispatch)
        for t in self.timeline:
            if t.trigger == "atTraceStep" and t.n > 0:
                raise ValueError("atTraceStep triggers are only available in simulation")
        self._fire(lambda t: t.trigger == "atTraceStep")

    @property
    def address(self) -> Address:
        return self.server.address

    def record(self, kind: str, role: str, label=None, detail=None, rule_id=None) -> None:
        with self.lock:
            self.events.append(Event(len(self.events), kind, role, label, rule_id, detail))

    def progress(self) -> None:
        self.last_progress = time.monotonic()

    # timeline

    def _fire(self, due: Callable[[TimelineEntry], bool]) -> bool:
        fired = False
        while self.timeline_pos < len(self.timeline) and due(self.timeline[self.timeline_pos]):
            t = self.timeline[self.timeline_pos]
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
                self.inputs.append(a["value"])
            self.record("timeline", "", None, {"trigger": t.trigger, "n": t.n, "action": t.action})
        return fired

    def _due(self, t: TimelineEntry) -> bool:
        counter = {"beforeAdaptQuery": self.query_count, "beforeRuleCheck": self.check_count,
                   "atTraceStep": 0}[t.trigger]
        return counter >= t.n

    # dispatch

    def _dispatch(self, frame: WireFrame) -> WireFrame:
        if frame.kind == "adapt_query":
            with self.lock:
                return WireFrame("adapt_resp", frame.id, self._adapt(frame.body))
        if frame.kind == "control_req":
            verb, args = frame.body.get("verb"), frame.body.get("args", {})
            handler = self._verbs.get(verb)
            if handler is None:
                return WireFrame("error", frame.id, {"message": f"unknown verb {verb!r}"})
            return WireFrame("control_resp", frame.id, handler(self, args))
        return WireFrame("error", frame.id, {"message": f"unexpected {frame.kind} frame"})

    def _adapt(self, q: dict) -> dict:
        role, scope_id = q["role"], q["scopeId"]
        self.query_count += 1
        self._fire(self._due)
        env = self.env.snapshot()
        label = scope_label(scope_id)
        self.record("adaptQuery", role, label, {"scopeId": scope_id, "props": q["props"]})

        def before_check(k: int):
            self.check_count += 1
            if self._fire(self._due) and self.live_env_checks:
                return self.env.snapshot()
            return None

        match = match_rule(self.registry, q["props"], q["locals"], env,
                           involved=q["involved"], before_check=before_check)
        if match is None:
            self.record("noRule", role, label, {"scopeId": scope_id})
            return {"directive": "original"}
        names = instance_names(match.new_roles, self._reusable, lambda n: n in self.book)
        code = installed_code(match, names, scope_id)
        for f, loc in match.includes.items():
            self.includes.setdefault(f, loc)
        for nr in sorted(match.new_roles):
            self._spawn(names[nr], code.get(names[nr]))
        self.record("ruleApplied", role, label,
                    {"scopeId": scope_id, "spawned": sorted(names.values())}, match.rule_id)
        return {"directive": "apply", "ruleId": match.rule_id,
                "code": {r: action_to_json(p) for r, p in code.items()}}

    def _reusable(self, name: str) -> bool:
        return name not in self.book or (name in self.spawned and name in self.done)

    def _spawn(self, name: str, code: Action | None) -> None:
        if self.spawner is None:
            raise RunAborted(f"cannot spawn {name}: no spawner configured", role=name)
        self.done.pop(name, None)
        self.spawned.add(name)
        self.book[name] = tuple(self.spawner(name, code or NOOP))
        self.record("roleSpawned", name)
        self.changed.notify_all()

    # control verbs

    def _env_set(self, a: dict) -> dict:
        with self.lock:
            for k, v in (a["values"] if "values" in a else {a["name"]: a["value"]}).items():
                self.env.set(k, v)
            return {"status": "ok", "version": self.env.version}

    def _env_get(self, a: dict) -> dict:
        with self.lock:
            if a["name"] not in self.env.values:
                return {"status": "ok", "undefined": True}
            return {"status": "ok", "value": self.env.get(a["name"])}

    def _rules_connect(self, a: dict) -> dict:
        with self.lock:
            try:
                self.registry = self.registry.connect(a["text"], a["id"])
            except RepositoryError as exc:
                return {"status": "error", "message": str(exc),
                        "diagnostics": [d.format() for d in exc.diagnostics]}
            return {"status": "ok", "repositories": self.registry.ids}

    def _rules_disconnect(self, a: dict) -> dict:
        with self.lock:
            self.registry = self.registry.disconnect(a["id"])
            return {"status": "ok", "repositories": self.registry.ids}

    def _roles_register(self, a: dict) -> dict:
        with self.lock:
            self.book[a["role"]] = tuple(a["address"])
            self.changed.notify_all()
        return {"status": "ok"}

    def _roles_resolve(self, a: dict) -> dict:
        deadline = time.monotonic() + float(a.get("timeout", 10))
        with self.lock:
            while a["role"] not in self.book:
                left = deadline - time.monotonic()
                if left <= 0:
                    return {"status": "error", "message": f"unknown role {a['role']}"}
                self.changed.wait(left)
            return {"status": "ok", "address": list(self.book[a["role"]]),
                    "spawned": a["role"] in self.spawned}

    def _roles_done(self, a: dict) -> dict:
        with self.lock:
            self.done[a["role"]] = a
            self.progress()
            self.changed.notify_all()
        return {"status": "ok"}

    def _roles_abort(self, a: dict) -> dict:
        with self.lock:
            if self.abort is None:
                self.abort = a["error"]
            self.changed.notify_all()
        return {"status": "ok"}

    def _input_read(self, a: dict) -> dict:
        with self.lock:
            if not self.inputs:
                return {"status": "error", "message": "input underrun"}
            return {"status": "ok", "value": self.inputs.popleft()}

    def _services_resolve(self, a: dict) -> dict:
        with self.lock:
            loc = self.includes.get(a["function"])
            if loc is None:
                for repo in self.registry.repositories:
                    for cr in repo.rules:
                        loc = loc or cr.includes.get(a["function"])
            if loc is None:
                return {"status": "error", "message": f"no location for {a['function']}"}
            addr = self.locations.get(loc) or parse_location(loc)
            return {"status": "ok", "location": loc, "address": list(addr)}

    _verbs = {
        "env/set": _env_set, "env/get": _env_get,
        "rules/connect": _rules_connect, "rules/disconnect": _rules_disconnect,
        "roles/register": _roles_register, "roles/resolve": _roles_resolve,
        "roles/done": _roles_done, "roles/abort": _roles_abort,
        "input/read": _input_read, "services/resolve": _services_resolve,
    }


def serve_control(registry: RuleRegistry | None = None, env: EnvStore | None = None,
                  bind: Address = ("127.0.0.1", 0), **options: Any) -> RuntimeNode:
    """Start the runtime/control node in a background thread and return it."""
    node = RuntimeNode(registry, env, bind, **options)
    node.server.start()
    return node


# -- role nodes ----------------------------------------------------------------------------


class RoleNode:
    """One role of a distributed run: an inbox server plus an executor thread."""

    def __init__(self, role: str, code: Action, runtime: Address, *,
                 bind: Address = ("127.0.0.1", 0), peers: Mapping[str, Address] | None = None,
                 functions: Mapping[str, Address] | None = None,
                 on_step: Callable[[], None] | None = None):
        self.role = role
        self.term = code
        self.runtime = runtime
        self.peers = dict(peers or {})
        self.functions = dict(functions or {})
        self.on_step = on_step
        self.store: dict[str, Value] = {}
        self.inbox: dict[str, deque] = {}
        self.cond = threading.Condition()
        self.links: dict[Any, FrameClient] = {}
        self.seqs: dict[str, int] = {}
        self.events: list[dict] = []
        self.status = "running"
        self.error: dict | None = None
        self.stopped = threading.Event()
        self.server = FrameServer(bind, self._dispatch)
        self.thread: threading.Thread | None = None

    @property
    def address(self) -> Address:
        return self.server.address

    def _dispatch(self, frame: WireFrame) -> WireFrame | None:
        if frame.kind not in ENVELOPE_KINDS:
            return WireFrame("error", frame.id, {"message": f"unexpected {frame.kind} frame"})
        env = frame_envelope(frame)
        with self.cond:
            self.inbox.setdefault(env.from_, deque()).append(env)
            self.cond.notify_all()
        return None

    def start(self) -> "RoleNode":
        self.server.start()
        self.thread = threading.Thread(target=self.run, daemon=True, name=f"role:{self.role}")
        self.thread.start()
        return self

    def stop(self) -> None:
        self.stopped.set()
        with self.cond:
            self.cond.notify_all()
        for link in self.links.values():
            link.close()
        self.server.stop()

    # RoleContext

    def pop(self, from_: str) -> Envelope:
        with self.cond:
            q = self.inbox.get(from_)
            if not q:
                raise ProtocolError(f"{self.role} receives from {from_} on an empty channel",
                                    role=self.role)
            return q.popleft()

    def _link(self, key, address: Address) -> FrameClient:
        link = self.links.get(key)
        if link is None:
            link = self.links[key] = FrameClient(address)
        return link

    def _peer(self, role: str) -> Address:
        addr = self.peers.get(role)
        if addr is None:
            reply = control(self.runtime, "roles/resolve", role=role)
            if reply.get("status") != "ok":
                raise ProtocolError(f"{self.role} sends to unknown role {role}", role=self.role)
            addr = tuple(reply["address"])
            if not reply.get("spawned"):
                # spawned names can be reused by a later instance at a new address
                self.peers[role] = addr
        return addr

    def send(self, to: str, label: str, payload: Any) -> None:
        seq = self.seqs.get(to, 0)
        self.seqs[to] = seq + 1
        frame = envelope_frame(Envelope(self.role, to, label, payload, seq))
        address = self._peer(to)
        self._link(("peer", to, address), address).send(frame)
        self.record("send", label, {"to": to})

    def evaluate(self, expr) -> Value:
        node = self

        class _Services:
            def invoke(self, name: str, args: list) -> Value:
                addr = node.functions.get(name)
                if addr is None:
                    reply = control(node.runtime, "services/resolve", function=name)
                    if reply.get("status") != "ok":
                        raise RunAborted(str(ServiceFailure(name, "no such service", node.role)),
                                         service=name, role=node.role)
                    addr = node.functions[name] = tuple(reply["address"])
                resp = node._link(("svc", addr), addr).request("service_req",
                                                               {"name": name, "args": args})
                if resp.kind != "service_resp":
                    msg = resp.body.get("message", "service failed")
                    raise RunAborted(str(ServiceFailure(name, msg, node.role)),
                                     service=name, role=node.role)
                node.record("serviceCall", name)
                return resp.body["value"]

        class _Inputs:
            def read(self, prompt: Value) -> Value:
                reply = control(node.runtime, "input/read", role=node.role, prompt=prompt)
                if reply.get("status") != "ok":
                    raise RunAborted("input underrun", role=node.role)
                return reply["value"]

        return eval_expr(self.store, expr, _Services(), _Inputs())

    def coordinate(self, action: ScopeCoord) -> Action:
        query = {"role": self.role, "scopeId": action.scope_id, "props": action.prop_map(),
                 "locals": dict(self.store), "involved": list(action.involved)}
        resp = self._link("runtime", self.runtime).request("adapt_query", query).body
        if "directive" not in resp:
            raise RunAborted(resp.get("message", "adaptation query failed"), role=self.role)
        label = scope_label(action.scope_id)
        others = [r for r in action.involved if r != self.role]
        if resp["directive"] == "original":
            for r in others:
                self.send(r, label, directive_payload(None, None))
            return action.original
        code = resp["code"]
        for r in others:
            self.send(r, label, {"directive": "apply", "ruleId": resp["ruleId"],
                                 "code": code.get(r, {"kind": "noop"})})
        return action_from_json(code.get(self.role, {"kind": "noop"}))

    def record(self, kind: str, label=None, detail=None, rule_id=None) -> None:
        self.events.append({"kind": kind, "role": self.role, "label": label})

    # executor loop

    def _choose(self):
        for path, leaf in leaves(self.term):
            need = waits_on(leaf)
            if need is None:
                return path, leaf
            q = self.inbox.get(need[0])
            if q and q[0].label == need[1]:
                return path, leaf
        return None

    def head_mismatch(self) -> str | None:
        with self.cond:
            for _, leaf in leaves(self.term):
                need = waits_on(leaf)
                q = self.inbox.get(need[0]) if need else None
                if q and q[0].label != need[1]:
                    return f"{self.role} expects {need[1]} from {need[0]} " \
                           f"but the channel holds {q[0].label}"
        return None

    def run(self) -> None:
        try:
            while not isinstance(self.term, Noop):
                with self.cond:
                    pick = self._choose()
                    while pick is None and not self.stopped.is_set():
                        self.cond.wait(0.05)
                        pick = self._choose()
                if self.stopped.is_set():
                    return
                path, leaf = pick
                rest = execute_leaf(leaf, self)
                self.term = replace_at(self.term, path, rest)
                if self.on_step is not None:
                    self.on_step()
            self.status = "finished"
            control(self.runtime, "roles/done", role=self.role, store=self.store,
                    events=len(self.events))
        except RunAborted as exc:
            self._fail({**exc.detail, "role": exc.detail.get("role", self.role)})
        except ServiceFailure as exc:
            self._fail({"message": str(exc), "service": exc.service, "role": self.role})
        except EvalError as exc:
            self._fail({"message": str(exc), "role": self.role})
        except (ConnectionError, OSError) as exc:
            if not self.stopped.is_set():
                self._fail({"message": f"connection failure: {exc}", "role": self.role})

    def _fail(self, error: dict) -> None:
        self.status, self.error = "aborted", error
        try:
            control(self.runtime, "roles/abort", role=self.role, error=error)
        except (ConnectionError, OSError):
            log.warning("could not report abort of %s", self.role)

    def pending(self) -> int:
        with self.cond:
            return sum(len(q) for q in self.inbox.values())


def serve_role(role: str, code: Action, runtime: Address, *, bind: Address = ("127.0.0.1", 0),
               peers: Mapping[str, Address] | None = None,
               functions: Mapping[str, Address] | None = None, wait: bool = True) -> RoleNode:
    """Run one role: register with the runtime, then execute ``code`` (rendezvous included)."""
    node = RoleNode(role, code, runtime, bind=bind, peers=peers, functions=functions)
    node.server.start()
    control(runtime, "roles/register", role=role, address=list(node.address))
    node.thread = threading.Thread(target=node.run, daemon=True, name=f"role:{role}")
    node.thread.start()
    if wait:
        node.thread.join()
    return node


# -- in-process orchestration ------------------------------------------------------------------


def _locations(program: Program | None, registry: RuleRegistry, timeline) -> dict[str, str]:
    """function -> location from the program, connected rules and rules a timeline connects."""
    out: dict[str, str] = {}
    if program is not None:
        for inc in program.includes:
            for f in inc.functions:
                out.setdefault(f, inc.location)
    for repo in registry.repositories:
        for cr in repo.rules:
            for f, loc in cr.includes.items():
                out.setdefault(f, loc)
    for t in timeline:
        if t.action == "rules/connect":
            try:
                for r in parse_rules(t.args["text"]):
                    for inc in r.includes:
                        for f in inc.functions:
                            out.setdefault(f, inc.location)
            except ParseError:
                pass
    return out


def run_wire(code: RoleCodeMap, config: RunConfig | None = None, program: Program | None = None,
             *, stall_timeout: float = 3.0, max_seconds: float = 120.0) -> Outcome:
    """Run a projected system over localhost sockets and collect an :class:`Outcome`.

    Every include location gets its own service node on an ephemeral port.  A
    run with no progress for ``stall_timeout`` seconds is declared deadlocked
    (or a protocol error, if some inbox head can never be consumed).
    """
    config = config or RunConfig()
    starter = config.starter or (program.starter if program else None) or code.roles[0]
    calls: dict[str, int] = {}
    calls_lock = threading.Lock()
    services: list[ServiceNode] = []
    roles: dict[str, RoleNode] = {}
    runtime: RuntimeNode | None = None
    progress = [time.monotonic()]

    def tick() -> None:
        progress[0] = time.monotonic()

    def on_call(name: str, args: list) -> None:
        with calls_lock:
            calls[name] = calls.get(name, 0) + 1
        if runtime is not None:
            runtime.record("serviceCall", "", name, {"args": args})
        tick()

    func_locations = _locations(program, config.registry, config.timeline)
    remap: dict[str, Address] = {}
    for loc in sorted(set(func_locations.values())):
        node = serve_service(config.services, ("127.0.0.1", 0), on_call)
        services.append(node)
        remap[loc] = node.server.address
    functions = {f: remap[loc] for f, loc in func_locations.items()}

    def spawner(name: str, prog: Action) -> Address:
        node = RoleNode(name, prog, runtime.address, functions=functions, on_step=tick)
        old = roles.get(name)
        if old is not None:
            old.stop()
        roles[name] = node
        node.start()
        return node.address

    try:
        runtime = serve_control(config.registry, EnvStore(config.env), timeline=config.timeline,
                                inputs=config.inputs, live_env_checks=config.live_env_checks,
                                locations=remap, includes=func_locations, spawner=spawner)
        programs = with_rendezvous(code.programs, starter)
        for role, prog in programs.items():
            roles[role] = RoleNode(role, prog, runtime.address, functions=functions, on_step=tick)
            roles[role].server.start()
            runtime.book[role] = roles[role].address
        for role in programs:
            roles[role].thread = threading.Thread(target=roles[role].run, daemon=True,
                                                  name=f"role:{role}")
            roles[role].thread.start()
        status, error = _await(runtime, roles, programs, progress, stall_timeout, max_seconds)
        stores = {r: dict(roles[r].store) for r in code.programs}
        spawned = {r: dict(n.store) for r, n in roles.items() if r not in code.programs}
        trace = list(runtime.events)
        return Outcome(status, stores, trace, error, dict(calls), spawned)
    finally:
        for node in list(roles.values()):
            node.stop()
        for s in services:
            s.server.stop()
        if runtime is not None:
            runtime.server.stop()


def _await(runtime: RuntimeNode, roles: dict[str, RoleNode], programs, progress,
           stall_timeout: float, max_seconds: float) -> tuple[str, dict | None]:
    started = time.monotonic()
    while True:
        with runtime.lock:
            if runtime.abort is not None:
                return "aborted", runtime.abort
            active = [r for r, n in list(roles.items()) if n.status == "running"]
            runtime.changed.wait(0.05)
        if not active:
            leftover = sorted(r for r, n in roles.items() if n.pending())
            if leftover:
                return "aborted", {"message": "messages left undelivered",
                                   "channels": leftover, "role": None}
            return "completed", None
        now = time.monotonic()
        last = max(progress[0], runtime.last_progress)
        if now - last > stall_timeout or now - started > max_seconds:
            for r in active:
                msg = roles[r].head_mismatch()
                if msg:
                    return "aborted", {"message": msg, "role": r}
            return "deadlock", {"message": "no role can make progress",
                                "blocked": sorted(active)}
