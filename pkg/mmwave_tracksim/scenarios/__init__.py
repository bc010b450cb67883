from __future__ import annotations

from .base import ScenarioModel
from .rma import RMaScenario
from .uma import UMaScenario
from .umi import UMiScenario

SCENARIO_ALIAS_MAP = {
    "umi": "UMi",
    "micro": "UMi",
    "street-canyon": "UMi",
    "uma": "UMa",
    "macro": "UMa",
    "rma": "RMa",
    "rural": "RMa",
}

SCENARIO_NAMES = ("UMi", "UMa", "RMa")


def resolve_scenario_alias(name: str | None, default: str = "UMi") -> str:
    if name is None:
        return default
    candidate = name.strip()
    if not candidate:
        return default
    alias = SCENARIO_ALIAS_MAP.get(candidate.lower())
    if alias:
        return alias
    return name


def resolve_scenario(name: str) -> ScenarioModel:
    resolved = resolve_scenario_alias(name)
    for scenario_cls in (UMiScenario, UMaScenario, RMaScenario):
        if scenario_cls.supports(resolved):
            return scenario_cls()
    raise ValueError(f"Unknown scenario '{name}'. Supported: {list(SCENARIO_NAMES)}")


__all__ = [
    "RMaScenario",
    "SCENARIO_ALIAS_MAP",
    "SCENARIO_NAMES",
    "ScenarioModel",
    "UMaScenario",
    "UMiScenario",
    "resolve_scenario",
    "resolve_scenario_alias",
]
