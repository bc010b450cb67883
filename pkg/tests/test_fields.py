from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
import pytest

from mmwave_tracksim.config import SimulationConfig
from mmwave_tracksim.fields import (
    BINARY,
    GAUSSIAN_UNIT,
    CorrelatedGridMap,
    ExtentTooSmall,
    GridSpec,
    LosState,
    OutOfExtent,
    assign_los_state,
    build_correlated_map,
    build_correlated_stack,
    build_los_state_map,
    build_sf_maps,
    build_uncorrelated_map,
    expected_autocorrelation,
    exponential_filter,
    exponential_kernel,
    kernel_covariance,
    kernel_radius,
    los_threshold_state,
    sample_map,
    sf_map_center,
    write_map_csv,
)
from mmwave_tracksim.scenarios import UMiScenario
from mmwave_tracksim.trajectory import generate_trajectory


def make_map(values: np.ndarray, *, origin=(0.0, 0.0), resolution: float = 1.0) -> CorrelatedGridMap:
    return CorrelatedGridMap(
        origin=origin,
        resolution=resolution,
        width=values.shape[0],
        height=values.shape[1],
        values=values,
        correlation_distance=10.0,
        field_kind=GAUSSIAN_UNIT,
    )


def test_kernel_is_truncated_at_three_correlation_distances() -> None:
    kernel = exponential_kernel(1.0, 5.0)
    radius = kernel_radius(1.0, 5.0)
    assert radius == 15
    assert kernel.shape == (31, 31)
    assert kernel[radius, radius] == 1.0
    assert kernel[radius, radius + 5] == pytest.approx(math.exp(-1.0))
    # corner lies at 15*sqrt(2) m, outside the support
    assert kernel[0, 0] == 0.0
    assert kernel[radius, 0] == pytest.approx(math.exp(-3.0))


def test_impulse_response_is_the_kernel() -> None:
    kernel = exponential_kernel(1.0, 3.0)
    size = kernel.shape[0]
    impulse = np.zeros((size, size))
    impulse[size // 2, size // 2] = 1.0
    out = exponential_filter(impulse, 1.0, 3.0)
    np.testing.assert_allclose(out, kernel, atol=1e-12)


def test_valid_filter_needs_an_apron() -> None:
    with pytest.raises(ExtentTooSmall):
        exponential_filter(np.zeros((10, 10)), 1.0, 5.0, mode="valid")


def test_filter_handles_stacks() -> None:
    rng = np.random.default_rng(0)
    stack = rng.standard_normal((3, 12, 14))
    out = exponential_filter(stack, 1.0, 2.0)
    assert out.shape == stack.shape
    np.testing.assert_allclose(out[1], exponential_filter(stack[1], 1.0, 2.0))


def test_correlated_map_is_gaussian_unit() -> None:
    grid_map = build_correlated_map((20.0, 10.0), 1.0, 5.0, np.random.default_rng(1))
    assert (grid_map.width, grid_map.height) == (21, 11)
    assert grid_map.values.shape == (21, 11)
    assert grid_map.field_kind == GAUSSIAN_UNIT
    assert grid_map.origin == pytest.approx((-10.0, -5.0))
    assert not grid_map.values.flags.writeable

    radius = kernel_radius(1.0, 5.0)
    noise = np.random.default_rng(1).standard_normal((1, 21 + 2 * radius, 11 + 2 * radius))
    filtered = exponential_filter(noise, 1.0, 5.0, mode="valid")[0]
    np.testing.assert_allclose(grid_map.values, (filtered - filtered.mean()) / filtered.std())


def test_every_layer_is_standardized() -> None:
    grid = GridSpec.from_center((0.0, 0.0), (99.0, 99.0), 1.0)
    for layer in build_correlated_stack(grid, 15.0, np.random.default_rng(8), 5):
        assert abs(float(layer.values.mean())) < 1e-12
        assert float(layer.values.var()) == pytest.approx(1.0)


def test_correlated_map_is_deterministic() -> None:
    a = build_correlated_map((20.0, 20.0), 1.0, 5.0, np.random.default_rng(5))
    b = build_correlated_map((20.0, 20.0), 1.0, 5.0, np.random.default_rng(5))
    np.testing.assert_array_equal(a.values, b.values)


def test_extent_below_two_cells() -> None:
    with pytest.raises(ExtentTooSmall):
        build_correlated_map((0.5, 0.5), 1.0, 5.0, np.random.default_rng(0))


def test_expected_autocorrelation_oracle() -> None:
    rho = expected_autocorrelation(1.0, 15.0, [0.0, 5.0, 15.0, 45.0])
    assert rho[0] == pytest.approx(1.0)
    assert rho[0] > rho[1] > rho[2] > rho[3] > 0.0
    assert expected_autocorrelation(1.0, 2.0, [100.0]) == [0.0]


def test_kernel_covariance_is_the_kernel_overlap() -> None:
    kernel = exponential_kernel(1.0, 2.0)
    cov = kernel_covariance(1.0, 2.0)
    radius = kernel_radius(1.0, 2.0)
    assert cov.shape == (4 * radius + 1, 4 * radius + 1)
    assert cov[2 * radius, 2 * radius] == pytest.approx(1.0)
    overlap = float(np.sum(kernel[3:, :] * kernel[:-3, :]) / np.sum(kernel * kernel))
    assert cov[2 * radius + 3, 2 * radius] == pytest.approx(overlap)
    assert cov[2 * radius, 2 * radius - 3] == pytest.approx(overlap)


def test_finite_grid_oracle_accounts_for_mean_removal() -> None:
    lags = [0.0, 5.0, 15.0, 45.0]
    stationary = expected_autocorrelation(1.0, 15.0, lags)
    finite = expected_autocorrelation(1.0, 15.0, lags, shape=(100, 100))
    assert finite[0] == pytest.approx(1.0)
    assert all(f < s for f, s in zip(finite[1:], stationary[1:]))
    assert finite[3] < 0.2
    wide = expected_autocorrelation(1.0, 2.0, [0.0, 2.0, 6.0], shape=(400, 400))
    assert wide == pytest.approx(expected_autocorrelation(1.0, 2.0, [0.0, 2.0, 6.0]), abs=2e-3)
    with pytest.raises(ValueError):
        expected_autocorrelation(1.0, 15.0, [45.0], shape=(40, 40))


def _empirical_autocorrelation(fields: np.ndarray, shift: int) -> float:
    total = 0.0
    for axis in (1, 2):
        n = fields.shape[axis]
        head = np.take(fields, range(0, n - shift), axis=axis)
        tail = np.take(fields, range(shift, n), axis=axis)
        total += float(np.mean(head * tail) / np.mean(fields * fields))
    return total / 2


def test_filtered_noise_matches_autocorrelation_oracle() -> None:
    resolution, delta = 5.0, 15.0
    radius = kernel_radius(resolution, delta)
    rng = np.random.default_rng(2024)
    noise = rng.standard_normal((40, 60 + 2 * radius, 60 + 2 * radius))
    fields = exponential_filter(noise, resolution, delta, mode="valid")
    lags = [0.0, 5.0, 15.0]
    oracle = expected_autocorrelation(resolution, delta, lags)
    for lag, expected in zip(lags, oracle):
        measured = _empirical_autocorrelation(fields, int(lag / resolution))
        assert measured == pytest.approx(expected, abs=0.08)


def test_gaussian_unit_maps_decorrelate_with_distance() -> None:
    rng = np.random.default_rng(99)
    stack = np.stack(
        [build_correlated_map((300.0, 300.0), 5.0, 15.0, rng).values for _ in range(20)]
    )
    rho = [_empirical_autocorrelation(stack, int(lag / 5.0)) for lag in (0.0, 5.0, 15.0, 45.0)]
    assert rho[0] == pytest.approx(1.0)
    assert rho[0] > rho[1] > rho[2] > rho[3]
    assert rho[3] < 0.5 * rho[1]


def test_unit_maps_match_oracle_at_one_metre_resolution() -> None:
    lags = [0.0, 5.0, 15.0, 45.0]
    stack = np.stack(
        [
            build_correlated_map((99.0, 99.0), 1.0, 15.0, np.random.default_rng(seed)).values
            for seed in range(10)
        ]
    )
    assert stack.shape == (10, 100, 100)
    rho = [_empirical_autocorrelation(stack, int(lag)) for lag in lags]
    oracle = expected_autocorrelation(1.0, 15.0, lags, shape=(100, 100))
    assert rho[0] == pytest.approx(1.0)
    assert rho[0] > rho[1] > rho[2] > rho[3]
    assert rho[3] < 0.2
    # the 45 m lag is checked against the oracle over 200 maps in the gated run
    for measured, expected in zip(rho[:3], oracle[:3]):
        assert measured == pytest.approx(expected, abs=0.08)


def test_sample_map_is_exact_on_grid_and_bilinear_between() -> None:
    values = np.array([[0.0, 1.0], [2.0, 3.0]])
    grid_map = make_map(values, origin=(10.0, 20.0), resolution=2.0)
    assert sample_map(grid_map, (10.0, 20.0)) == 0.0
    assert sample_map(grid_map, (12.0, 22.0)) == 3.0
    assert sample_map(grid_map, (11.0, 21.0)) == pytest.approx(1.5)
    assert sample_map(grid_map, (12.0, 21.0)) == pytest.approx(2.5)


def test_sample_map_outside_extent() -> None:
    grid_map = make_map(np.zeros((3, 3)))
    with pytest.raises(OutOfExtent):
        sample_map(grid_map, (2.5, 1.0))


def test_copula_threshold() -> None:
    assert los_threshold_state(0.0, 0.6) == LosState.LOS
    assert los_threshold_state(0.0, 0.4) == LosState.NLOS
    assert los_threshold_state(3.0, 1.0) == LosState.LOS
    assert los_threshold_state(-3.0, 0.0) == LosState.NLOS


def test_assign_los_state_uses_distance_probability() -> None:
    # Phi(0.5) = 0.691: LOS where P_LOS > 0.691
    grid_map = make_map(np.full((101, 3), 0.5), origin=(0.0, -1.0))
    scenario = UMiScenario()
    assert assign_los_state(grid_map, (0.0, 0.0), (15.0, 0.0), scenario=scenario) == LosState.LOS
    assert assign_los_state(grid_map, (0.0, 0.0), (50.0, 0.0), scenario=scenario) == LosState.NLOS


def test_los_is_certain_within_eighteen_metres() -> None:
    gauss = build_correlated_map((99.0, 99.0), 1.0, 10.0, np.random.default_rng(31))
    xs, ys = gauss.grid.coordinates()
    offsets = np.random.default_rng(32).uniform(0.0, 18.0, size=(len(xs), len(ys)))
    states = [
        assign_los_state(gauss, (x - offsets[ix, iy], y), (x, y))
        for ix, x in enumerate(xs)
        for iy, y in enumerate(ys)
    ]
    assert len(states) == 10_000
    assert all(state == LosState.LOS for state in states)


def test_los_frequency_at_fifty_metres_follows_probability() -> None:
    assert float(UMiScenario().los_probability(50.0, 1.5)) == pytest.approx(0.5196, abs=1e-4)
    grid = GridSpec.from_center((0.0, 0.0), (99.0, 99.0), 1.0)
    layers = build_correlated_stack(grid, 1.0, np.random.default_rng(50), 100)
    xs, ys = grid.coordinates()
    # kernel support is 3 m, so cells 10 m apart are independent
    cells = [(float(x), float(y)) for x in xs[::10] for y in ys[::10]]
    states = [
        assign_los_state(layer, (x - 50.0, y), (x, y)) for layer in layers for x, y in cells
    ]
    assert len(states) == 10_000
    frequency = sum(state == LosState.LOS for state in states) / len(states)
    assert 0.47 <= frequency <= 0.57


def test_los_state_map_agrees_with_point_lookup() -> None:
    gauss = build_correlated_map((100.0, 100.0), 2.0, 10.0, np.random.default_rng(3), center=(30.0, 0.0))
    state_map = build_los_state_map(gauss, (0.0, 0.0), scenario=UMiScenario())
    binary = state_map.underlying
    assert binary.field_kind == BINARY
    assert set(np.unique(binary.values)) <= {0.0, 1.0}
    xs, ys = gauss.grid.coordinates()
    for ix, iy in [(0, 0), (10, 25), (40, 7), (50, 50)]:
        state = assign_los_state(gauss, (0.0, 0.0), (xs[ix], ys[iy]))
        assert (binary.values[ix, iy] == 1.0) == (state == LosState.LOS)


def _flip_rate(values: np.ndarray) -> float:
    return float(np.mean(values[1:, :] != values[:-1, :]))


def test_correlated_los_map_has_fewer_state_flips() -> None:
    rng = np.random.default_rng(11)
    center = (60.0, 0.0)
    correlated = build_los_state_map(
        build_correlated_map((200.0, 200.0), 2.0, 10.0, rng, center=center), (0.0, 0.0)
    )
    uncorrelated = build_los_state_map(
        build_uncorrelated_map((200.0, 200.0), 2.0, rng, center=center), (0.0, 0.0)
    )
    assert _flip_rate(correlated.underlying.values) < 0.7 * _flip_rate(uncorrelated.underlying.values)


def test_build_sf_maps_layout() -> None:
    config = SimulationConfig(sf_map_extent=(20.0, 20.0), correlation_distance_sf=5.0)
    maps = build_sf_maps(config, [2, 3], np.random.default_rng(4), center=(50.0, 0.0))
    assert len(maps.cluster) == 2
    assert [len(layer) for layer in maps.subpath] == [2, 3]
    assert maps.path_loss.grid.contains((50.0, 0.0))
    assert maps.path_loss.correlation_distance == 5.0
    assert not np.array_equal(maps.cluster[0].values, maps.cluster[1].values)


def test_grid_spec_from_center() -> None:
    grid = GridSpec.from_center((5.0, 5.0), (10.0, 4.0), 2.0)
    assert (grid.width, grid.height) == (6, 3)
    assert grid.origin == (0.0, 3.0)
    assert grid.upper == (10.0, 7.0)
    assert grid.contains((10.0, 7.0))
    assert not grid.contains((5.0, 5.0), margin=2.5)


def test_write_map_csv(tmp_path: Path) -> None:
    values = np.arange(6, dtype=float).reshape(3, 2)
    path = tmp_path / "map.csv"
    write_map_csv(make_map(values, origin=(-1.0, 2.0), resolution=0.5), path)
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    rows = list(csv.reader(raw.decode("utf-8").splitlines()))
    assert rows[0] == ["origin_x_m", "origin_y_m", "resolution_m", "width", "height"]
    assert rows[1] == ["-1", "2", "0.5", "3", "2"]
    assert rows[2:] == [["0", "2", "4"], ["1", "3", "5"]]


def _gradient_variance(values: np.ndarray) -> float:
    return float(np.var(np.diff(values, axis=0)) + np.var(np.diff(values, axis=1)))


@pytest.mark.parametrize("seed", range(10))
def test_filtered_map_is_smoother_than_raw_noise(seed: int) -> None:
    correlated = build_correlated_map((50.0, 50.0), 1.0, 15.0, np.random.default_rng(seed))
    raw = build_uncorrelated_map((50.0, 50.0), 1.0, np.random.default_rng(seed))
    assert _gradient_variance(correlated.values) < 0.2 * _gradient_variance(raw.values)


def test_sf_maps_center_on_route_midpoint() -> None:
    config = SimulationConfig(rng_seed=1)
    trajectory = generate_trajectory(config)
    center = sf_map_center(trajectory)
    assert center == pytest.approx((55.3, 0.0), abs=0.1)
    grid = GridSpec.from_center(center, config.sf_map_extent, config.map_resolution)
    assert all(grid.contains(p) for p in trajectory.positions)

    line = generate_trajectory(SimulationConfig(rng_seed=1, track="linear"))
    assert sf_map_center(line) == pytest.approx((60.0, 0.0))
