import json

import pytest

from adaptchor.model import ServiceFailure
from adaptchor.teastore import (
    SERVICE_NAMES, corpus_path, fixtures, load_scenario, products, run_scenario, scenario_ids,
    teastore_registry, teastore_service,
)
from adaptchor.teastore.scenarios import check_predicate, execute
from adaptchor.teastore.services import HANDLERS

from conftest import EARL_GRAY, FIXTURES, raw_product


def raw_products():
    return json.loads(FIXTURES.read_text())["products"]


def test_fixture_catalogue():
    assert len(products()) == len(raw_products()) >= 10
    assert set(fixtures()["users"]) == {"alice", "bob"}
    assert set(SERVICE_NAMES) == set(HANDLERS)
    assert corpus_path("barebone.chor").exists()


def test_page_info_and_image():
    p = raw_product(EARL_GRAY)
    assert teastore_service("getPageInfo", [EARL_GRAY]) == {
        "address": EARL_GRAY, "title": p["title"], "description": p["description"]}
    assert teastore_service("getPageImg", [EARL_GRAY]) == p["imageBase64"]
    with pytest.raises(ServiceFailure):
        teastore_service("getPageInfo", ["/tea/unknown"])


def test_top_items_by_popularity():
    raw = raw_products()
    best = max(raw, key=lambda p: p["popularity"])
    items = teastore_service("getTopItems", [10, "popularity"])
    assert len(items) == 10 and items[0]["address"] == best["address"]
    pops = [i["popularity"] for i in items]
    assert pops == sorted(pops, reverse=True)
    assert min(pops) >= sorted((p["popularity"] for p in raw), reverse=True)[9]
    with pytest.raises(ServiceFailure):
        teastore_service("getTopItems", [3, "price"])


def test_recommendations_text():
    r = teastore_service("processRecommendations", [[{"title": "A"}, {"title": "B"}]])
    assert r == {"items": ["A", "B"], "description": "Flavoured with A, B"}


def test_compile_page_variants():
    info = {"title": "T", "description": "D"}
    assert teastore_service("compilePage", [info, "img"]) == {"title": "T", "description": "D", "image": "img"}
    page = teastore_service("compilePageWithRecommends", [dict(info, user="bob"), "img", {"items": []}])
    assert page["user"] == "bob" and page["recommendations"] == {"items": []}


@pytest.mark.parametrize("creds,token", [("alice:oolong", "tok-alice"), ("bob:matcha", "tok-bob"),
                                         ("alice:matcha", "none"), ("nobody", "none"), (3, "none")])
def test_login(creds, token):
    assert teastore_service("login", [creds]) == token


def test_logged_user_services_need_a_token():
    info = teastore_service("getPageInfoAsLoggedUser", [EARL_GRAY, "tok-alice"])
    assert info["user"] == "alice"
    with pytest.raises(ServiceFailure):
        teastore_service("getPageInfoAsLoggedUser", [EARL_GRAY, "none"])
    with pytest.raises(ServiceFailure):
        teastore_service("getQueryAsLoggedUser", [info, "guest"])


def test_query_processing_is_stable_and_excludes_the_product():
    anon = teastore_service("processQuery", [{"about": EARL_GRAY}])
    mine = teastore_service("processQuery", [{"about": EARL_GRAY, "user": "alice"}])
    assert len(anon) == len(mine) == 3
    assert EARL_GRAY not in [i["address"] for i in anon + mine]
    assert mine == teastore_service("processQuery", [{"about": EARL_GRAY, "user": "alice"}])


def test_failing_registry():
    reg = teastore_registry(failing=["login"])
    with pytest.raises(ServiceFailure):
        reg.invoke("login", ["alice:oolong"])
    assert reg.invoke("getTopItems", [1, "popularity"])


CATALOGUE = scenario_ids()


def test_catalogue_contents():
    assert {"barebone", "barebone-compiler", "rec-low", "no-rules", "auth-available", "auth-unavailable",
            "page-info-nested", "rec-full", "ephemeral", "rule-race", "image-service-down"} <= set(CATALOGUE)


@pytest.mark.parametrize("sid", CATALOGUE)
def test_scenario_passes_in_simulation(sid):
    report = run_scenario(sid, "sim")
    assert report.passed, report.render()


@pytest.mark.parametrize("sid", CATALOGUE)
def test_scenario_passes_over_the_wire(sid):
    report = run_scenario(sid, "wire")
    assert report.passed, report.render()


def test_unknown_scenario():
    with pytest.raises(FileNotFoundError):
        load_scenario("no-such-scenario")


def test_scenario_from_a_file(tmp_path):
    (tmp_path / "p.chor").write_text('preamble { starter: A }\naioc { m: A( 1 ) -> B( x ) }')
    (tmp_path / "s.json").write_text(json.dumps({
        "id": "tiny", "choreography": "p.chor",
        "expected": [{"kind": "store", "role": "B", "path": ["x"], "equals": 1},
                     {"kind": "store", "role": "B", "path": ["x"], "equals": True}]}))
    report = run_scenario(load_scenario(tmp_path / "s.json"))
    assert [ok for _, ok, _ in report.results] == [True, False]
    assert not report.passed and "FAIL" in report.render()


def test_predicate_kinds():
    out = execute(load_scenario("rec-low"))
    check = lambda p: check_predicate(p, out)[0]  # noqa: E731
    assert check({"kind": "storeHas", "role": "U", "path": ["page", "recommendations", "items", 0]})
    assert not check({"kind": "storeHas", "role": "U", "path": ["page", "nothing"]})
    assert check({"kind": "callsIn", "service": "getTopItems", "values": [1]})
    assert check({"kind": "calls", "service": "login", "equals": 0})
    assert check({"kind": "rulesWithin", "from": 1, "to": 4})
    assert not check({"kind": "rulesWithin", "from": 4, "to": 4})
    with pytest.raises(ValueError):
        check({"kind": "vibes"})
