from __future__ import annotations

import math

import numpy as np
import pytest

from mmwave_tracksim.scenarios import (
    RMaScenario,
    UMaScenario,
    UMiScenario,
    resolve_scenario,
    resolve_scenario_alias,
)


def test_umi_is_certain_los_inside_breakpoint() -> None:
    model = UMiScenario()
    assert float(model.los_probability(10.0, 1.5)) == 1.0
    assert float(model.los_probability(18.0, 1.5)) == 1.0


def test_umi_probability_at_50m() -> None:
    assert float(UMiScenario().los_probability(50.0, 1.5)) == pytest.approx(0.5196, abs=1e-4)


def test_umi_is_vectorized_and_monotone() -> None:
    d = np.linspace(1.0, 300.0, 200)
    p = UMiScenario().los_probability(d, 1.5)
    assert p.shape == d.shape
    assert np.all(np.diff(p) <= 1e-12)
    assert np.all((p > 0) & (p <= 1))


def test_uma_without_height_boost() -> None:
    expected = 18 / 50 + math.exp(-50 / 63) * (1 - 18 / 50)
    assert float(UMaScenario().los_probability(50.0, 1.5)) == pytest.approx(expected)


def test_uma_height_boost_raises_probability() -> None:
    model = UMaScenario()
    low = float(model.los_probability(120.0, 1.5))
    high = float(model.los_probability(120.0, 23.0))
    assert high > low


def test_rma_law() -> None:
    model = RMaScenario()
    assert float(model.los_probability(5.0, 1.5)) == 1.0
    assert float(model.los_probability(1010.0, 1.5)) == pytest.approx(math.exp(-1.0))


def test_scenario_defaults() -> None:
    assert UMiScenario().default_parameters() == {"bs_height": 10.0, "correlation_distance_los": 50.0}
    assert UMaScenario().default_parameters()["bs_height"] == 25.0
    assert RMaScenario().default_parameters()["correlation_distance_los"] == 60.0


def test_resolve_scenario_aliases() -> None:
    assert resolve_scenario_alias("micro") == "UMi"
    assert resolve_scenario_alias(None) == "UMi"
    assert isinstance(resolve_scenario("uma"), UMaScenario)
    assert isinstance(resolve_scenario("Rural"), RMaScenario)


def test_resolve_scenario_rejects_unknown() -> None:
    with pytest.raises(ValueError):
        resolve_scenario("indoor")
