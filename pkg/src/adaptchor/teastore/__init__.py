"""TeaStore case study: corpus, deterministic services and scripted scenarios."""

from .scenarios import (CORPUS, SCENARIOS, ScenarioReport, Scenario, load_scenario,
                        run_scenario, scenario_ids)
from .services import SERVICE_NAMES, fixtures, products, teastore_registry, teastore_service


def corpus_path(name: str):
    """Path of a packaged corpus file, e.g. ``corpus_path("barebone.chor")``."""
    return CORPUS / name


__all__ = [
    "CORPUS", "SCENARIOS", "SERVICE_NAMES", "ScenarioReport", "Scenario", "corpus_path",
    "fixtures", "load_scenario", "products", "run_scenario", "scenario_ids", "teastore_registry",
    "teastore_service",
]
