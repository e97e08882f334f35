import socket

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptchor.adaptation import RuleRegistry
from adaptchor.model import DecodeError, action_from_json
from adaptchor.runtime import Envelope, EnvStore, RunConfig, ServiceRegistry, TimelineEntry, run
from adaptchor.transport import (
    FRAME_KINDS, FrameClient, WireFrame, control, decode_frame, encode_frame, envelope_frame,
    frame_envelope, parse_location, run_wire, serve_control, serve_service,
)

from conftest import config, corpus_text

json_values = st.recursive(
    st.booleans() | st.integers(-10**15, 10**15) | st.text(max_size=10) | st.none(),
    lambda inner: st.lists(inner, max_size=3) | st.dictionaries(st.text(max_size=5), inner, max_size=3),
    max_leaves=10,
)
frames = st.builds(WireFrame, st.sampled_from(FRAME_KINDS), st.text(max_size=8),
                   st.dictionaries(st.text(max_size=6), json_values, max_size=4))


@settings(max_examples=1000)
@given(frames)
def test_frame_round_trip(frame):
    line = encode_frame(frame)
    assert "\n" not in line
    assert decode_frame(line) == frame and decode_frame(line).body == frame.body
    assert decode_frame((line + "\n").encode()) == frame
    assert encode_frame(decode_frame(line)) == line


@pytest.mark.parametrize("line,offset", [
    ('{"kind":"msg","id":"1","body":{}', 32),
    ('{"kind":"msg","id":"é","body":{x}}', 32),
    ('{"kind":"msg","id":"1","body":{"v":1.5}}', 0),
    ('["msg"]', 0),
    ('{"kind":"msg","id":1,"body":{}}', 0),
    ('{"kind":"msg","id":"1"}', 0),
])
def test_malformed_frames(line, offset):
    with pytest.raises(DecodeError) as exc:
        decode_frame(line)
    assert exc.value.offset == offset


def test_non_utf8_frame():
    with pytest.raises(DecodeError) as exc:
        decode_frame(b'{"kind":"\xff"}')
    assert exc.value.offset == 9


def test_unknown_kind_is_not_encoded():
    with pytest.raises(ValueError):
        encode_frame(WireFrame("gossip"))


@pytest.mark.parametrize("label,kind", [("#hello", "hello"), ("#start", "start"),
                                        ("#scope@3.0", "directive"), ("getInfo", "msg"), ("#if@2", "msg")])
def test_envelope_frame_kinds(label, kind):
    env = Envelope("W", "P", label, {"x": 1} if kind in ("msg", "directive") else {}, 4)
    f = envelope_frame(env)
    assert f.kind == kind
    back = frame_envelope(decode_frame(encode_frame(f)))
    assert back == env


def test_parse_location():
    assert parse_location("socket://localhost:8001") == ("localhost", 8001)
    for bad in ("http://x:1", "socket://nohost", "localhost:80"):
        with pytest.raises(ValueError):
            parse_location(bad)


def test_server_reports_decode_errors_and_keeps_the_connection():
    node = serve_service(ServiceRegistry({"inc": lambda x: x + 1}))
    try:
        with socket.create_connection(node.server.address) as s:
            f = s.makefile("rwb")
            f.write(b'{"kind": nope}\n')
            f.flush()
            err = decode_frame(f.readline())
            assert err.kind == "error" and err.body["offset"] == 9
            f.write((encode_frame(WireFrame("service_req", "7", {"name": "inc", "args": [41]})) + "\n").encode())
            f.flush()
            assert decode_frame(f.readline()) == WireFrame("service_resp", "7", {"value": 42})
    finally:
        node.server.stop()


def test_service_node_failures():
    calls = []
    node = serve_service(ServiceRegistry({"inc": lambda x: x + 1}), on_call=lambda n, a: calls.append(n))
    try:
        c = FrameClient(node.server.address)
        r = c.request("service_req", {"name": "nope", "args": []})
        assert r.kind == "error" and r.body["service"] == "nope"
        assert c.request("msg", {}).kind == "error"
        c.close()
        assert calls == ["nope"]
    finally:
        node.server.stop()


def test_control_verbs():
    rt = serve_control(RuleRegistry(), EnvStore({"mode": "a"}), inputs=["first"])
    try:
        a = rt.address
        assert control(a, "env/get", name="mode") == {"status": "ok", "value": "a"}
        assert control(a, "env/set", name="mode", value="b")["status"] == "ok"
        assert control(a, "env/get", name="mode")["value"] == "b"
        assert control(a, "env/get", name="other") == {"status": "ok", "undefined": True}
        assert control(a, "rules/connect", id="rec-low", text=corpus_text("rec-low.rules"))["repositories"] == ["rec-low"]
        bad = control(a, "rules/connect", id="bad", text="rule {")
        assert bad["status"] == "error" and bad["diagnostics"]
        assert control(a, "rules/disconnect", id="rec-low")["repositories"] == []
        assert control(a, "input/read", role="U", prompt="?")["value"] == "first"
        assert control(a, "input/read", role="U", prompt="?")["status"] == "error"
        assert control(a, "roles/register", role="X", address=["127.0.0.1", 9])["status"] == "ok"
        assert control(a, "roles/resolve", role="X")["address"] == ["127.0.0.1", 9]
        assert control(a, "roles/resolve", role="Y", timeout=0)["status"] == "error"
        with pytest.raises(RuntimeError):
            control(a, "reboot")
    finally:
        rt.server.stop()


def test_adapt_query_returns_serialized_code():
    reg = RuleRegistry().connect(corpus_text("rec-low.rules"), "rec-low")
    rt = serve_control(reg, EnvStore({"recommender": "low-power"}), spawner=lambda name, code: ("127.0.0.1", 1))
    try:
        c = FrameClient(rt.address)
        q = {"role": "W", "scopeId": "3.2", "props": {"tag": "recommender"}, "locals": {},
             "involved": ["P", "U", "W"]}
        r = c.request("adapt_query", q)
        assert r.kind == "adapt_resp" and r.body["directive"] == "apply" and r.body["ruleId"] == "rec-low:0"
        assert set(r.body["code"]) == {"P", "R", "W"}
        action_from_json(r.body["code"]["W"])
        r = c.request("adapt_query", {**q, "scopeId": "4", "props": {"tag": "page-compiler"}})
        assert r.body == {"directive": "original"}
        c.close()
        assert [e.kind for e in rt.events] == ["adaptQuery", "roleSpawned", "ruleApplied", "adaptQuery", "noRule"]
    finally:
        rt.server.stop()


def test_trace_step_triggers_are_simulation_only():
    with pytest.raises(ValueError):
        serve_control(timeline=[TimelineEntry("atTraceStep", 3, "env/set", {"name": "x", "value": 1})])


def test_wire_matches_simulation(barebone):
    program, code = barebone
    sim = run(code, config(program))
    wire = run_wire(code, config(program), program)
    assert wire.status == "completed"
    assert wire.final_stores == sim.final_stores
    assert wire.call_counts == sim.call_counts


def test_wire_adaptation(adaptable):
    program, code = adaptable
    wire = run_wire(code, config(program, "rec-low", env={"recommender": "low-power"}), program)
    sim = run(code, config(program, "rec-low", env={"recommender": "low-power"}))
    assert wire.status == "completed"
    assert sorted(e.rule_id for e in wire.events("ruleApplied")) == ["rec-low:0", "rec-low:1"]
    assert wire.final_stores == sim.final_stores


def test_wire_service_failure(barebone):
    program, code = barebone
    out = run_wire(code, config(program, failing=("getPageInfo",)), program)
    assert out.status == "aborted"
    assert out.error["service"] == "getPageInfo" and out.error["role"] == "P"


def test_wire_deadlock_is_detected():
    from adaptchor.model import Lit, LocalSeq, Recv, Send
    from adaptchor.projector import RoleCodeMap
    code = RoleCodeMap({"A": LocalSeq((Recv("x", "B", "v"), Send("y", "B", Lit(1)))),
                        "B": LocalSeq((Recv("y", "A", "w"), Send("x", "A", Lit(2))))})
    out = run_wire(code, RunConfig(starter="A"), stall_timeout=0.5)
    assert out.status == "deadlock"
