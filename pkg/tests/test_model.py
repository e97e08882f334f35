import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptchor.model import (
    NOOP, BinOp, Call, DecodeError, EnvRef, EvalError, IfLocal, InputUnderrun, Lit, LocalAssign,
    LocalPar, LocalSeq, Not, PropRef, Recv, ScopeCoord, ScopeWait, Send, ServiceFailure, TypeMismatch,
    UndefinedVariable, Var, WhileLocal, BranchRecv, LoopRecv, action_from_json, action_to_json,
    decode_action, decode_value, encode_action, encode_value, eval_expr, expr_from_json, expr_to_json,
    qualify_action, qualify_label, rename_action, values_equal,
)

names = st.from_regex(r"[a-z][a-zA-Z0-9]{0,6}", fullmatch=True)
roles = st.from_regex(r"[A-Z][A-Z0-9]{0,2}", fullmatch=True)
values = st.recursive(
    st.booleans() | st.integers(-10**12, 10**12) | st.text(max_size=12),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=6), inner, max_size=4),
    max_leaves=12,
)
exprs = st.recursive(
    st.builds(Lit, values) | st.builds(Var, names) | st.builds(EnvRef, names) | st.builds(PropRef, names),
    lambda inner: (st.builds(Not, inner)
                   | st.builds(BinOp, st.sampled_from(["==", "!=", "<", "+", "and", "or", "*"]), inner, inner)
                   | st.builds(Call, names, st.lists(inner, max_size=3).map(tuple))),
    max_leaves=8,
)
leaf_actions = (st.builds(Send, names, roles, st.none() | exprs)
                | st.builds(Recv, names, roles, st.none() | names)
                | st.builds(LocalAssign, names, exprs)
                | st.just(NOOP))
actions = st.recursive(
    leaf_actions,
    lambda inner: (st.builds(LocalSeq, st.lists(inner, min_size=2, max_size=3).map(tuple))
                   | st.builds(LocalPar, st.lists(inner, min_size=2, max_size=3).map(tuple))
                   | st.builds(IfLocal, exprs, names.map(lambda n: f"#if@{n}"),
                               st.lists(roles, max_size=3).map(tuple), inner, inner)
                   | st.builds(BranchRecv, names.map(lambda n: f"#if@{n}"), roles, inner, inner)
                   | st.builds(WhileLocal, exprs, names, st.lists(roles, max_size=2).map(tuple), inner)
                   | st.builds(LoopRecv, names, roles, inner)
                   | st.builds(ScopeCoord, names, st.dictionaries(names, values.map(Lit), max_size=2)
                               .map(lambda d: tuple(sorted(d.items()))), st.lists(roles, max_size=3).map(tuple), inner)
                   | st.builds(ScopeWait, names, roles, inner)),
    max_leaves=10,
)


@settings(max_examples=300)
@given(values)
def test_value_encoding_round_trips(v):
    assert values_equal(decode_value(encode_value(v)), v)


@given(values)
def test_encoding_is_canonical(v):
    text = encode_value(v)
    assert encode_value(decode_value(text)) == text


def test_bool_and_int_stay_distinct():
    assert not values_equal(True, 1)
    assert not values_equal([0], [False])
    assert values_equal({"a": [1, "x"]}, {"a": [1, "x"]})
    assert decode_value("true") is True


@pytest.mark.parametrize("text", ["1.5", "null", "[1, null]", "NaN", '{"a": 1e3}'])
def test_rejected_values(text):
    with pytest.raises(DecodeError):
        decode_value(text)


def test_decode_error_reports_byte_offset():
    with pytest.raises(DecodeError) as exc:
        decode_value('["é", ')
    # the multi-byte character counts twice
    assert exc.value.offset == len('["é", '.encode())


@given(exprs)
def test_expr_json_round_trips(e):
    assert expr_from_json(json.loads(json.dumps(expr_to_json(e)))) == e


@settings(max_examples=300)
@given(actions)
def test_action_json_round_trips(a):
    assert decode_action(encode_action(a)) == a
    assert action_from_json(action_to_json(a)).canonical() == a.canonical()


@given(actions, actions)
def test_digest_tracks_structure(a, b):
    assert (a.digest() == b.digest()) == (a == b)


def ev(src, store=None, **kw):
    from adaptchor.parser import parse_expr
    return eval_expr(store or {}, parse_expr(src), **kw)


def test_evaluation_basics():
    assert ev("1 + 2 * 3") == 7
    assert ev("7 / 2") == 3
    assert ev('"ab" + "c"') == "abc"
    assert ev("x != \"none\"", {"x": "tok"}) is True
    assert ev("not (1 < 2) or true") is True
    assert ev("E.mode == \"a\" and N.tag == \"t\"", env={"mode": "a"}, props={"tag": "t"}) is True


def test_and_short_circuits():
    assert ev("false and undefinedThing") is False
    assert ev("true or undefinedThing") is True


@pytest.mark.parametrize("src,err", [
    ("x", UndefinedVariable), ("1 + true", TypeMismatch), ("1 < \"a\"", TypeMismatch),
    ("not 3", TypeMismatch), ("1 / 0", EvalError), ("E.x", EvalError), ("N.tag", EvalError),
    ("1 and true", TypeMismatch),
])
def test_evaluation_errors(src, err):
    with pytest.raises(err):
        ev(src)


def test_calls_go_to_services_and_inputs():
    class Svc:
        def invoke(self, name, args):
            return [name] + args

    class Inp:
        def read(self, prompt):
            return f"answer to {prompt}"

    assert ev('f( 1, "a" )', services=Svc()) == ["f", 1, "a"]
    assert ev('getInput( "q" )', inputs=Inp()) == "answer to q"
    with pytest.raises(InputUnderrun):
        ev('getInput( "q" )')
    with pytest.raises(ServiceFailure):
        ev("f()")


def test_rename_touches_peers_only():
    a = LocalSeq((Send("m", "R", Var("x")), Recv("n", "R", "y"),
                  ScopeWait("1", "R", NOOP), IfLocal(Var("c"), "#if@0", ("R", "S"), NOOP, NOOP)))
    b = rename_action(a, {"R": "R'1"})
    assert b.items[0].to == "R'1" and b.items[1].from_ == "R'1"
    assert b.items[2].coordinator == "R'1"
    assert b.items[3].notify == ("R'1", "S")
    assert b.items[0].label == "m"


def test_qualified_labels():
    assert qualify_label("getInfo", "3.0") == "getInfo@3.0"
    assert qualify_label("#if@r:0.2", "3.0") == "#if@3.0/r:0.2"
    q = qualify_action(LocalSeq((Send("m", "P", None), ScopeCoord("r:0.1", (), ("W",), NOOP))), "4")
    assert q.items[0].label == "m@4"
    assert q.items[1].scope_id == "4/r:0.1"
