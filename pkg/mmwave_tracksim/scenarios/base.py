from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray


def normalize_scenario_name(name: str) -> str:
    return name.strip().lower().replace("-", "").replace("_", "")


def as_distance_array(d_2d: ArrayLike) -> NDArray[np.float64]:
    return np.asarray(d_2d, dtype=np.float64)


class ScenarioModel(ABC):
    name: str = ""

    @classmethod
    @abstractmethod
    def supports(cls, scenario: str) -> bool:
        raise NotImplementedError

    @abstractmethod
    def los_probability(self, d_2d: ArrayLike, ut_height: float) -> NDArray[np.float64]:
        raise NotImplementedError

    def default_parameters(self) -> dict[str, Any]:
        return {}
