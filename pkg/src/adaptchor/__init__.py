"""Adaptable choreographies: parse, check, project, run and explore."""

from .adaptation import (MatchResult, RepositoryError, RuleRegistry, connect_repository,
                         disconnect_repository, match_rule)
from .checker import check_program, check_rule
from .explorer import (Bounds, EquivalenceReport, ExplorationReport, check_equivalence, explore,
                       reference_interpret, reference_outcomes, replay)
from .model import (Program, RuleDef, ServiceFailure, action_from_json, action_to_json, decode_value,
                    encode_value, eval_expr)
from .parser import (Diagnostic, ParseError, format_program, format_rules, parse_expr, parse_program,
                     parse_rules)
from .projector import ProjectionError, RoleCodeMap, project_program, project_rule
from .runtime import (EnvStore, Outcome, RunConfig, SeededScheduler, ScriptedScheduler,
                      ServiceRegistry, load_timeline, run, trace_to_jsonl)

__version__ = "0.1.0"

__all__ = [
    "Bounds", "Diagnostic", "EnvStore", "EquivalenceReport", "ExplorationReport", "MatchResult",
    "Outcome", "ParseError", "Program", "ProjectionError", "RepositoryError", "RoleCodeMap",
    "RuleDef", "RuleRegistry", "RunConfig", "ScriptedScheduler", "SeededScheduler",
    "ServiceFailure", "ServiceRegistry", "action_from_json", "action_to_json", "check_equivalence",
    "check_program", "check_rule", "connect_repository", "decode_value", "disconnect_repository",
    "encode_value", "eval_expr", "explore", "format_program", "format_rules", "load_timeline",
    "match_rule", "parse_expr", "parse_program", "parse_rules", "project_program", "project_rule",
    "reference_interpret", "reference_outcomes", "replay", "run", "trace_to_jsonl",
]
