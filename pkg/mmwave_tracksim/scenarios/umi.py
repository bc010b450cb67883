from __future__ import annotations

from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .base import ScenarioModel, as_distance_array, normalize_scenario_name

UMI_BREAKPOINT_M = 18.0
UMI_DECAY_M = 36.0


class UMiScenario(ScenarioModel):
    name = "UMi"

    @classmethod
    def supports(cls, scenario: str) -> bool:
        return normalize_scenario_name(scenario) in {"umi", "umistreetcanyon"}

    def los_probability(self, d_2d: ArrayLike, ut_height: float) -> NDArray[np.float64]:
        d = as_distance_array(d_2d)
        with np.errstate(divide="ignore"):
            near = np.minimum(UMI_BREAKPOINT_M / d, 1.0)
        decay = np.exp(-d / UMI_DECAY_M)
        prob = near * (1.0 - decay) + decay
        return np.where(d <= UMI_BREAKPOINT_M, 1.0, prob)

    def default_parameters(self) -> dict[str, Any]:
        return {
            "bs_height": 10.0,
            "correlation_distance_los": 50.0,
        }
