import json
import subprocess
import sys

import jsonschema
import pytest

from adaptchor.cli import address, cli_main, key_value, peer_map

from conftest import EARL_GRAY
from endpoint_schema import ENDPOINT_SCHEMA


def cli(capsys, *argv):
    code = cli_main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("name", ["barebone", "barebone-compiler", "adaptable", "recommender", "ephemeral"])
def test_check_corpus_is_silent(capsys, name):
    assert cli(capsys, "check", f"corpus/{name}.chor") == (0, "", "")


def test_check_reports_positions(capsys, tmp_path):
    f = tmp_path / "bad.chor"
    f.write_text("preamble { starter: A }\naioc {\n  m: A( 1 ) -> B( x );\n  n: C( 2 ) -> D( y )\n}\n")
    code, out, err = cli(capsys, "check", str(f))
    assert code == 1 and out == ""
    assert err.startswith(f"{f}:") and "error" in err


def test_check_reports_syntax_errors(capsys, tmp_path):
    f = tmp_path / "bad.chor"
    f.write_text("preamble { starter: A }\naioc { m: A( 1 ) -> }")
    code, _, err = cli(capsys, "check", str(f))
    assert code == 1 and f"{f}:2:" in err


def test_project_emits_schema_valid_json(capsys):
    code, out, _ = cli(capsys, "project", "corpus/barebone.chor", "--role", "W")
    assert code == 0
    jsonschema.validate(json.loads(out), ENDPOINT_SCHEMA)


def test_project_unknown_role(capsys):
    code, _, err = cli(capsys, "project", "corpus/barebone.chor", "--role", "Q")
    assert code == 1 and "no role Q" in err


def test_run_completes_and_reports(capsys):
    code, out, _ = cli(capsys, "run", "corpus/adaptable.chor", "--input", EARL_GRAY)
    lines = out.splitlines()
    assert code == 0 and lines[0] == "completed"
    assert sum(line.startswith("noRule ") for line in lines) == 4
    result = json.loads(lines[-1])
    assert result["error"] is None and result["stores"]["U"]["page"]["title"] == "Earl Gray"


def test_run_with_rules_and_env(capsys):
    code, out, _ = cli(capsys, "run", "corpus/adaptable.chor", "--rules", "corpus/rec-low.rules",
                       "--env", "recommender=low-power", "--input", EARL_GRAY)
    assert code == 0 and "ruleApplied" in out and " rec-low:" in out


def test_seeded_runs_write_identical_traces(capsys, tmp_path):
    traces = []
    for i in range(2):
        out = tmp_path / f"t{i}.jsonl"
        assert cli(capsys, "run", "corpus/barebone.chor", "--input", EARL_GRAY, "--seed", "7",
                   "--trace", str(out))[0] == 0
        traces.append(out.read_bytes())
    assert traces[0] == traces[1] and traces[0].count(b"\n") > 10
    json.loads(traces[0].splitlines()[0])


def test_failed_run_exits_one(capsys):
    code, out, _ = cli(capsys, "run", "corpus/barebone.chor")
    assert code == 1 and out.splitlines()[0] == "aborted" and "input underrun" in out


def test_explore_barebone(capsys):
    code, out, _ = cli(capsys, "explore", "corpus/barebone.chor", "--input", EARL_GRAY)
    assert code == 0 and out.splitlines()[0] == "0 deadlocks, 1 outcome"


def test_explore_json_report(capsys):
    code, out, _ = cli(capsys, "explore", "corpus/race.chor", "--rules", "corpus/db.rules",
                       "--json")
    summary, report = out.splitlines()
    report = json.loads(report)
    assert code == 0 and summary.startswith("0 deadlocks")
    assert report["deadlocks"] == [] and not report["truncated"]
    assert len(report["outcomes"]) == int(summary.split(", ")[1].split()[0])


def test_scenario_command(capsys):
    code, out, _ = cli(capsys, "scenario", "rule-race")
    assert code == 0 and out.startswith("scenario rule-race [sim]: PASS")


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run"], ["project", "corpus/barebone.chor"],
                                  ["run", "corpus/barebone.chor", "--env", "novalue"],
                                  ["run", "missing.chor"], ["run", "corpus/barebone.chor", "--mode", "x"]])
def test_usage_errors_exit_two(capsys, argv):
    assert cli(capsys, *argv)[0] == 2


def test_help_exits_zero(capsys):
    code, out, _ = cli(capsys, "--help")
    assert code == 0 and "explore" in out


def test_argument_helpers():
    assert key_value("auth=available") == ("auth", "available")
    assert key_value("n=3") == ("n", 3)
    assert key_value("s=") == ("s", "")
    assert address(":8000") == ("127.0.0.1", 8000)
    assert peer_map("A=h:1,B=k:2") == {"A": ("h", 1), "B": ("k", 2)}


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "adaptchor", "explore", "corpus/barebone.chor",
                        "--input", EARL_GRAY], capture_output=True, text=True, timeout=120)
    assert r.returncode == 0 and r.stdout.startswith("0 deadlocks, 1 outcome")
