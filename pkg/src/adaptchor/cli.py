"""Command-line entry point: ``adaptchor <subcommand> ...``.

Exit codes: 0 success, 1 diagnostics or a failed run/assertion, 2 usage error.
Paths that do not exist relative to the working directory are looked up in
the packaged TeaStore folder, so ``corpus/barebone.chor`` always resolves.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .adaptation import RepositoryError, RuleRegistry
from .checker import check_program, errors
from .explorer import Bounds, explore
from .model import action_to_json
from .parser import ParseError, parse_program
from .projector import ProjectionError, project_program
from .runtime import (EnvStore, RunConfig, SeededScheduler, load_timeline, run, trace_to_jsonl,
                      with_rendezvous)
from .teastore.scenarios import HERE as TEASTORE_DIR
from .teastore.scenarios import run_scenario
from .teastore.services import teastore_registry


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    packaged = TEASTORE_DIR / path
    if packaged.exists():
        return packaged
    raise UsageError(f"no such file: {path}")


def json_or_string(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def key_value(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected k=v, got {text!r}")
    return key, json_or_string(value)


def address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def peer_map(text: str) -> dict[str, tuple[str, int]]:
    out = {}
    for item in filter(None, text.split(",")):
        role, sep, addr = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected role=host:port, got {item!r}")
        out[role] = address(addr)
    return out


def _load_program(path: str):
    return parse_program(resolve(path).read_text())


def _registry(rule_files: list[str]) -> RuleRegistry:
    registry = RuleRegistry()
    for f in rule_files:
        p = resolve(f)
        registry = registry.connect(p.read_text(), p.stem)
    return registry


def _config(args, program) -> RunConfig:
    timeline = load_timeline(resolve(args.timeline)) if args.timeline else []
    return RunConfig(services=teastore_registry(), inputs=[json_or_string(v) for v in args.input],
                     env=dict(args.env), registry=_registry(args.rules), timeline=timeline,
                     scheduler=SeededScheduler(args.seed), starter=program.starter,
                     live_env_checks=args.live_env_checks)


# -- subcommands -------------------------------------------------------------------------------


def cmd_check(args) -> int:
    diags = check_program(_load_program(args.file))
    for d in diags:
        print(d.format(args.file), file=sys.stderr)
    return 1 if errors(diags) else 0


def cmd_project(args) -> int:
    code = project_program(_load_program(args.file))
    if args.role not in code.programs:
        print(f"no role {args.role} (roles: {', '.join(code.roles)})", file=sys.stderr)
        return 1
    print(json.dumps(action_to_json(code.programs[args.role]), sort_keys=True, separators=(",", ":")))
    return 0


def cmd_run(args) -> int:
    program = _load_program(args.file)
    code = project_program(program)
    config = _config(args, program)
    if args.mode == "wire":
        from .transport import run_wire
        outcome = run_wire(code, config, program)
    else:
        outcome = run(code, config)
    if args.trace:
        Path(args.trace).write_text(trace_to_jsonl(outcome.trace))
    print(outcome.status)
    for kind in ("ruleApplied", "noRule"):
        for e in outcome.events(kind):
            print(f"{kind} {e.label}" + (f" {e.rule_id}" if e.rule_id else ""))
    print(json.dumps({"stores": outcome.final_stores, "calls": outcome.call_counts,
                      "error": outcome.error}, sort_keys=True))
    return 0 if outcome.status == "completed" else 1


def cmd_explore(args) -> int:
    program = _load_program(args.file)
    report = explore(project_program(program), _config(args, program),
                     Bounds(max_states=args.max_states, max_depth=args.max_depth))
    print(report.summary())
    if args.json:
        print(json.dumps(report.to_json(), sort_keys=True))
    return 1 if report.deadlocks else 0


def cmd_scenario(args) -> int:
    report = run_scenario(str(resolve(args.id)) if args.id.endswith(".json") else args.id, args.mode)
    print(report.render())
    return 0 if report.passed else 1


def _serve_until_interrupted(stop) -> int:
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        stop()
    return 0


def cmd_serve_service(args) -> int:
    from .transport import serve_service
    nodes = [serve_service(teastore_registry(), bind) for bind in args.bind or [("127.0.0.1", 0)]]
    for node in nodes:
        print(f"services listening on {node.server.address[0]}:{node.server.address[1]}", flush=True)

    def stop():
        for node in nodes:
            node.server.stop()

    return _serve_until_interrupted(stop)


def cmd_serve_control(args) -> int:
    from .transport import RoleNode, _locations, serve_control

    def spawner(name, prog):
        return RoleNode(name, prog, node.address).start().address

    timeline = load_timeline(resolve(args.timeline)) if args.timeline else []
    registry = _registry(args.rules)
    program = _load_program(args.chor) if args.chor else None
    node = serve_control(registry, EnvStore(dict(args.env)), args.bind,
                         timeline=timeline, inputs=[json_or_string(v) for v in args.input],
                         live_env_checks=args.live_env_checks, spawner=spawner,
                         includes=_locations(program, registry, timeline))
    print(f"control listening on {node.address[0]}:{node.address[1]}", flush=True)
    return _serve_until_interrupted(node.server.stop)


def cmd_serve_role(args) -> int:
    from .transport import serve_role
    program = _load_program(args.file)
    code = project_program(program)
    if args.role not in code.programs:
        print(f"no role {args.role} (roles: {', '.join(code.roles)})", file=sys.stderr)
        return 1
    term = with_rendezvous(code.programs, program.starter)[args.role]
    node = serve_role(args.role, term, args.runtime, bind=args.bind, peers=args.peers)
    print(json.dumps({"role": args.role, "status": node.status, "store": node.store}, sort_keys=True))
    return 0 if node.status == "finished" else 1


# -- parser ------------------------------------------------------------------------------------


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rules", action="append", default=[], metavar="FILE",
                   help="rule repository; repeat to set the connection order")
    p.add_argument("--env", action="append", default=[], type=key_value, metavar="K=V",
                   help="environment entry; the value is JSON when it parses, else a string")
    p.add_argument("--input", action="append", default=[], metavar="V", help="scripted input value")
    p.add_argument("--timeline", metavar="FILE", help="timeline JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--live-env-checks", action="store_true",
                   help="re-read the environment before every rule condition")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adaptchor", description="Adaptable choreography toolchain.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("check", help="report diagnostics for a choreography")
    p.add_argument("file")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("project", help="print one role's endpoint program as JSON")
    p.add_argument("file")
    p.add_argument("--role", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("run", help="execute a choreography")
    p.add_argument("file")
    _run_options(p)
    p.add_argument("--mode", choices=("sim", "wire"), default="sim")
    p.add_argument("--trace", metavar="OUT", help="write the trace as JSON lines")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("explore", help="enumerate every schedule of a choreography")
    p.add_argument("file")
    _run_options(p)
    p.add_argument("--max-states", type=int, default=Bounds().max_states)
    p.add_argument("--max-depth", type=int, default=Bounds().max_depth)
    p.add_argument("--json", action="store_true", help="also print the full report")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("scenario", help="run a packaged TeaStore scenario")
    p.add_argument("id")
    p.add_argument("--mode", choices=("sim", "wire"), default="sim")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("serve-service", help="serve the TeaStore functions over sockets")
    p.add_argument("--bind", type=address, action="append", default=[],
                   help="listening address; repeat to serve several include locations")
    p.set_defaults(func=cmd_serve_service)

    p = sub.add_parser("serve-control", help="serve rules, environment and inputs over sockets")
    _run_options(p)
    p.add_argument("--chor", metavar="FILE", help="choreography whose include lines locate services")
    p.add_argument("--bind", type=address, default=("127.0.0.1", 0))
    p.set_defaults(func=cmd_serve_control)

    p = sub.add_parser("serve-role", help="run one role of a choreography against a control node")
    p.add_argument("file")
    p.add_argument("--role", required=True)
    p.add_argument("--runtime", type=address, required=True, metavar="HOST:PORT")
    p.add_argument("--bind", type=address, default=("127.0.0.1", 0))
    p.add_argument("--peers", type=peer_map, default={}, metavar="ROLE=HOST:PORT,...")
    p.set_defaults(func=cmd_serve_role)
    return parser


def cli_main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 2
    except ParseError as exc:
        for d in exc.diagnostics:
            print(d.format(getattr(args, "file", "<input>")), file=sys.stderr)
        return 1
    except RepositoryError as exc:
        print(exc, file=sys.stderr)
        for d in exc.diagnostics:
            print(d.format(), file=sys.stderr)
        return 1
    except (ProjectionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
