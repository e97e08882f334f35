import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from adaptchor.explorer import (
    Bounds, check_equivalence, explore, is_race_free, reference_interpret,
    reference_outcomes, replay,
)
from adaptchor.model import Lit, LocalSeq, Recv, Send
from adaptchor.parser import parse_program
from adaptchor.projector import RoleCodeMap, project_program
from adaptchor.runtime import RunConfig, ServiceRegistry

from conftest import config
from mutations import drop_choice_notification

CYCLIC = RoleCodeMap({"A": LocalSeq((Recv("x", "B", "v"), Send("y", "B", Lit(1)))),
                      "B": LocalSeq((Recv("y", "A", "w"), Send("x", "A", Lit(2))))})


def small(body, **kw):
    p = parse_program('include f from "socket://localhost:9000" with "soap"\n'
                      f"preamble {{ starter: A }}\naioc {{ {body} }}")
    return p, RunConfig(starter="A", services=ServiceRegistry({"f": lambda x: x * 10}), **kw)


def test_barebone_has_one_outcome(barebone):
    program, code = barebone
    report = explore(code, config(program))
    assert report.summary() == "0 deadlocks, 1 outcome"
    [out] = report.outcomes.values()
    assert out.final_stores["U"]["page"]["title"] == "Earl Gray"


def test_cyclic_pair_is_one_deadlock_and_replays():
    report = explore(CYCLIC, RunConfig(starter="A"))
    assert report.summary() == "1 deadlock, 0 outcomes"
    [d] = report.deadlocks
    assert set(d["blocked"]) == {"A", "B"}
    assert replay(CYCLIC, RunConfig(starter="A"), d["schedule"]).status == "deadlock"


def test_report_json_and_plurals():
    p, cfg = small("{ x@A = 1 | y@A = 2 }; m: A( x ) -> B( z )")
    report = explore(project_program(p), cfg)
    j = report.to_json()
    assert j["truncated"] is False and len(j["outcomes"]) == 1 and j["deadlocks"] == []
    assert j["statesVisited"] == report.states_visited > 0


def test_racing_writes_give_two_outcomes():
    p, cfg = small("{ x@A = 1 | x@A = 2 }; m: A( x ) -> B( z )")
    report = explore(project_program(p), cfg)
    assert report.summary() == "0 deadlocks, 2 outcomes"
    assert sorted(o.final_stores["B"]["z"] for o in report.outcomes.values()) == [1, 2]


def test_bounds_truncate():
    p, cfg = small("{ x@A = 1 | y@A = 2 | w@A = 3 }; m: A( x ) -> B( z )")
    report = explore(project_program(p), cfg, Bounds(max_states=3))
    assert report.truncated and report.summary().endswith("(truncated)")
    report = explore(project_program(p), cfg, Bounds(max_depth=2))
    assert report.truncated


def test_reference_interpreter_runs_scopes_and_rules(adaptable):
    program, _ = adaptable
    state = reference_interpret(program, config(program, "rec-low", env={"recommender": "low-power"}))
    assert state.status == "completed"
    assert [e for e in state.events if e[0] == "ruleApplied"] == [("ruleApplied", "rec-low:0"),
                                                                 ("ruleApplied", "rec-low:1")]
    assert "recommendations" in state.stores["U"]["page"]


def test_reference_interpreter_with_seed(barebone):
    program, _ = barebone
    a = reference_interpret(program, config(program), chooser=3)
    b = reference_interpret(program, config(program))
    assert a.fingerprint() == b.fingerprint()


def test_reference_outcomes_of_a_race():
    p, cfg = small("{ x@A = 1 | x@A = 2 }; m: A( x ) -> B( z )")
    outcomes, truncated = reference_outcomes(p, cfg)
    assert len(outcomes) == 2 and not truncated


def test_race_warnings_decide_the_comparison():
    p, cfg = small("{ x@A = 1 | x@A = 2 }; m: A( x ) -> B( z )")
    assert not is_race_free(p, cfg)
    p, cfg = small("x@A = 1; m: A( x ) -> B( z )")
    assert is_race_free(p, cfg)


def test_choice_program_is_equivalent_and_mutant_is_not():
    p, cfg = small("x@A = 2; if ( x > 1 )@A { m: A( x ) -> B( y ); n: B( y ) -> C( z ) } "
                   "else { o: A( 0 ) -> C( z ) }; e: C( z ) -> A( r )")
    assert check_equivalence(p, cfg).equivalent
    bad = check_equivalence(p, cfg, code=drop_choice_notification(project_program(p)))
    assert not bad.equivalent


@pytest.mark.parametrize("seed", range(3))
def test_scheduler_choices_cover_explored_outcomes(seed, barebone):
    from adaptchor.runtime import run
    program, code = barebone
    report = explore(code, config(program))
    assert run(code, config(program, seed=seed)).fingerprint() in report.outcomes


role = st.sampled_from(["A", "B", "C"])


@st.composite
def programs(draw):
    """Small connected programs mixing assignments, messages, choices and parallel blocks."""
    def block(depth, anchor):
        items, prev = [], {anchor}
        for _ in range(draw(st.integers(1, 3))):
            kind = draw(st.sampled_from(["msg", "assign", "par", "if"] if depth < 2 else ["msg", "assign"]))
            s = draw(st.sampled_from(sorted(prev)))
            if kind == "assign":
                v = draw(st.sampled_from(["x", "y"]))
                items.append(f"{v}@{s} = {draw(st.integers(0, 3))}")
                prev = {s}
            elif kind == "msg":
                r = draw(role.filter(lambda x: x != s))
                items.append(f"{draw(st.sampled_from(['m', 'n']))}: {s}( {draw(st.integers(0, 3))} ) -> {r}( x )")
                prev = {s, r}
            elif kind == "par":
                left, lr = block(depth + 1, s)
                right, rr = block(depth + 1, s)
                items.append("{ { " + left + " } | { " + right + " } }")
                prev = {s}
                if not (lr & prev and rr & prev):
                    items.append(f"x@{s} = 0")
            else:
                then, _ = block(depth + 1, s)
                items.append(f"z@{s} = {draw(st.integers(0, 1))}; if ( z == 1 )@{s} {{ {then} }}")
                prev = {s} | set()
                items.append(f"x@{s} = 0")
        return "; ".join(items), prev
    return block(0, "A")[0]


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much])
@given(programs())
def test_reduction_and_projection_agree_with_reference(body):
    from adaptchor.checker import check_program
    p, cfg = small(body)
    assume(not [d for d in check_program(p) if d.severity == "error"])
    code = project_program(p)
    full = explore(code, cfg, reduce=False)
    reduced = explore(code, cfg)
    assert set(full.outcomes) == set(reduced.outcomes)
    assert len(full.deadlocks) == len(reduced.deadlocks) == 0
    if is_race_free(p, cfg):
        ref, _ = reference_outcomes(p, cfg)
        assert set(full.outcomes) == set(ref)


def test_racy_receives_may_reorder_but_never_deadlock():
    p, cfg = small("{ { m: A( 0 ) -> B( x ); m: A( 0 ) -> C( x ) } | { n: A( 1 ) -> C( x ); "
                   "m: C( 1 ) -> B( x ) } }")
    report = check_equivalence(p, cfg)
    assert not report.race_free and report.equivalent
    late = '{"calls":{},"error":null,"status":"completed","stores":{"A":{},"B":{"x":0},"C":{"x":1}}}'
    assert report.only_projected == {late}
