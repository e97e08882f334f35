import pytest

from adaptchor.adaptation import (
    RepositoryError, RuleRegistry, compile_repository, connect_repository, disconnect_repository,
    eval_condition, match_rule,
)
from adaptchor.parser import parse_expr
from adaptchor.teastore import CORPUS

OVERLAP_A = 'rule { on { N.tag == "t" } do { x@W = "a" } }'
OVERLAP_B = 'rule { on { N.tag == "t" and E.flag == true } do { x@W = "b" } }\n' \
            'rule { on { N.tag == "t" } do { x@W = "b2" } }'


def reg(*pairs):
    r = RuleRegistry()
    for rid, text in pairs:
        r = r.connect(text, rid)
    return r


def test_rule_ids_follow_file_order():
    rules = compile_repository((CORPUS / "db.rules").read_text(), "db")
    assert [r.rule_id for r in rules] == ["db:0", "db:1", "db:2"]


def test_connection_order_decides():
    props, env = {"tag": "t"}, {"flag": True}
    assert match_rule(reg(("a", OVERLAP_A), ("b", OVERLAP_B)), props, {}, env).rule_id == "a:0"
    assert match_rule(reg(("b", OVERLAP_B), ("a", OVERLAP_A)), props, {}, env).rule_id == "b:0"


def test_file_order_decides_within_repository():
    m = match_rule(reg(("b", OVERLAP_B)), {"tag": "t"}, {}, {"flag": False})
    assert m.rule_id == "b:1" and m.index == 1 and m.repository_id == "b"


def test_no_match():
    assert match_rule(reg(("a", OVERLAP_A)), {"tag": "other"}, {}, {}) is None
    assert match_rule(RuleRegistry(), {"tag": "t"}, {}, {}) is None


def test_disconnect_and_reconnect_moves_to_the_end():
    r = reg(("a", OVERLAP_A), ("b", OVERLAP_B))
    r = disconnect_repository(r, "a")
    assert r.ids == ["b"]
    r = connect_repository(r, OVERLAP_A, "a")
    assert r.ids == ["b", "a"]
    assert match_rule(r, {"tag": "t"}, {}, {"flag": True}).rule_id == "b:0"
    assert r.disconnect("missing") is r


def test_registry_is_immutable():
    r0 = RuleRegistry()
    r1 = r0.connect(OVERLAP_A, "a")
    assert r0.ids == [] and r1.ids == ["a"]
    assert r1.version() != r0.version()


def test_duplicate_repository_id():
    with pytest.raises(RepositoryError):
        reg(("a", OVERLAP_A), ("a", OVERLAP_B))


def test_repository_is_all_or_nothing():
    bad = OVERLAP_A + '\nrule { on { true } do { m: A( 1 ) -> B( x ); n: C( 1 ) -> D( y ) } }'
    with pytest.raises(RepositoryError) as exc:
        RuleRegistry().connect(bad, "bad")
    assert "bad:1" in str(exc.value)
    assert exc.value.diagnostics
    with pytest.raises(RepositoryError):
        RuleRegistry().connect("rule { on {", "broken")
    with pytest.raises(RepositoryError):
        RuleRegistry().connect("// nothing here", "empty")


@pytest.mark.parametrize("cond,expected", [
    ('N.tag == "t"', True),
    ("E.missing == 1", False),       # undefined environment key
    ("N.tag", False),                # not a boolean
    ("1 + true == 2", False),        # type error
    ('recommender == true', True),   # coordinator's local variable
    ("undefinedLocal == true", False),
])
def test_condition_evaluation(cond, expected):
    assert eval_condition(parse_expr(cond), {"tag": "t"}, {}, {"recommender": True}) is expected


def test_rules_needing_foreign_roles_are_skipped():
    text = 'rule { on { true } do { m: W( 1 ) -> Q( x ) } }\nrule { on { true } do { x@W = 1 } }'
    r = reg(("r", text))
    assert match_rule(r, {}, {}, {}, involved={"W"}).rule_id == "r:1"
    assert match_rule(r, {}, {}, {}, involved={"W", "Q"}).rule_id == "r:0"


def test_new_roles_count_as_available():
    m = match_rule(reg(("rec", (CORPUS / "rec-low.rules").read_text())),
                   {"tag": "recommender"}, {}, {"recommender": "low-power"}, involved={"W", "U", "P"})
    assert m.rule_id == "rec:0" and m.new_roles == ("R",)
    assert m.includes["getTopItems"] == "socket://localhost:8001"


def test_before_check_hook_can_swap_environment():
    r = reg(("db", (CORPUS / "db.rules").read_text()))
    seen = []

    def hook(k):
        seen.append(k)
        return {"db": "replica"} if k == 2 else None

    assert match_rule(r, {"tag": "db"}, {}, {"db": "primary"}, before_check=hook) is None
    assert seen == [1, 2, 3]
    assert match_rule(r, {"tag": "db"}, {}, {"db": "primary"}).rule_id == "db:1"
