from __future__ import annotations

from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .base import ScenarioModel, as_distance_array, normalize_scenario_name

RMA_BREAKPOINT_M = 10.0
RMA_DECAY_M = 1000.0


class RMaScenario(ScenarioModel):
    name = "RMa"

    @classmethod
    def supports(cls, scenario: str) -> bool:
        return normalize_scenario_name(scenario) == "rma"

    def los_probability(self, d_2d: ArrayLike, ut_height: float) -> NDArray[np.float64]:
        d = as_distance_array(d_2d)
        prob = np.exp(-(d - RMA_BREAKPOINT_M) / RMA_DECAY_M)
        return np.where(d <= RMA_BREAKPOINT_M, 1.0, prob)

    def default_parameters(self) -> dict[str, Any]:
        return {
            "bs_height": 35.0,
            "correlation_distance_los": 60.0,
        }
