"""Scenario catalog and entry point."""

from __future__ import annotations

import time

from ..errors import InvariantViolation
from . import data_purchase, manufacturing, onboarding, treasury
from .runner import ScenarioContext, ScenarioResult

CATALOG = {
    module.name: module
    for module in (data_purchase, treasury, manufacturing, onboarding)
}


def run_scenario(name: str, seed: int = 0, transport: str = "sim") -> ScenarioResult:
    module = CATALOG.get(name)
    if module is None:
        raise InvariantViolation(
            f"unknown scenario {name!r}; available: {', '.join(sorted(CATALOG))}"
        )
    started = time.perf_counter()
    ctx = ScenarioContext(name=name, seed=seed, transport=transport)
    module.run(ctx)
    result = ctx.finish()
    result.elapsed_s = time.perf_counter() - started
    return result
