import json
from pathlib import Path

import pytest

from adaptchor.adaptation import RuleRegistry
from adaptchor.parser import parse_program
from adaptchor.projector import project_program
from adaptchor.runtime import RunConfig, SeededScheduler
from adaptchor.teastore import CORPUS
from adaptchor.teastore.services import teastore_registry

EARL_GRAY = "/tea/earl-gray"
FIXTURES = Path(CORPUS).parent / "fixtures" / "products.json"


def corpus_text(name: str) -> str:
    return (CORPUS / name).read_text()


def load(name: str):
    return parse_program(corpus_text(name))


def registry(*repos: str) -> RuleRegistry:
    reg = RuleRegistry()
    for r in repos:
        reg = reg.connect(corpus_text(f"{r}.rules"), r)
    return reg


def config(program, *repos, env=None, inputs=(EARL_GRAY,), seed=0, **kw) -> RunConfig:
    return RunConfig(services=teastore_registry(kw.pop("failing", ())), inputs=list(inputs),
                     env=dict(env or {}), registry=registry(*repos),
                     scheduler=SeededScheduler(seed), starter=program.starter, **kw)


def raw_product(address: str) -> dict:
    """Fixture row read straight from the JSON file, independent of the service layer."""
    return next(p for p in json.loads(FIXTURES.read_text())["products"] if p["address"] == address)


@pytest.fixture
def barebone():
    p = load("barebone.chor")
    return p, project_program(p)


@pytest.fixture
def adaptable():
    p = load("adaptable.chor")
    return p, project_program(p)


# -- acceptance summary: one PASS/FAIL line per criterion --------------------------------------

_criteria: dict[str, list] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        if item.module.__name__ == "test_acceptance":
            _criteria[item.nodeid] = [item.function.__doc__.strip().splitlines()[0], None]


def pytest_runtest_logreport(report):
    entry = _criteria.get(report.nodeid)
    if entry is None:
        return
    if report.when == "call":
        entry[1] = report.passed
    elif report.failed:
        entry[1] = False


def pytest_terminal_summary(terminalreporter):
    ran = [e for e in _criteria.values() if e[1] is not None]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for title, ok in ran:
        number, _, text = title.partition(" ")
        terminalreporter.write_line(f"criterion {int(number):2d}: {'PASS' if ok else 'FAIL'}  {text}")
