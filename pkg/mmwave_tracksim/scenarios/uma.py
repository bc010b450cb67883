from __future__ import annotations

from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .base import ScenarioModel, as_distance_array, normalize_scenario_name

UMA_BREAKPOINT_M = 18.0
UMA_DECAY_M = 63.0


def _height_factor(ut_height: float) -> float:
    if ut_height <= 13.0:
        return 0.0
    return ((ut_height - 13.0) / 10.0) ** 1.5


class UMaScenario(ScenarioModel):
    name = "UMa"

    @classmethod
    def supports(cls, scenario: str) -> bool:
        return normalize_scenario_name(scenario) == "uma"

    def los_probability(self, d_2d: ArrayLike, ut_height: float) -> NDArray[np.float64]:
        d = as_distance_array(d_2d)
        with np.errstate(divide="ignore"):
            near = np.minimum(UMA_BREAKPOINT_M / d, 1.0)
        decay = np.exp(-d / UMA_DECAY_M)
        base = near * (1.0 - decay) + decay
        boost = 1.0 + _height_factor(ut_height) * 1.25 * (d / 100.0) ** 3 * np.exp(-d / 150.0)
        return np.where(d <= UMA_BREAKPOINT_M, 1.0, np.minimum(base * boost, 1.0))

    def default_parameters(self) -> dict[str, Any]:
        return {
            "bs_height": 25.0,
            "correlation_distance_los": 50.0,
        }
