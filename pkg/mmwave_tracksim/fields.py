from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numba as nb
import numpy as np
from numpy.typing import NDArray
from scipy.signal import fftconvolve
from scipy.special import ndtr

from .config import SimulationConfig
from .scenarios import ScenarioModel, UMiScenario
from .trajectory import Trajectory

GAUSSIAN_UNIT = "gaussian_unit"
BINARY = "binary"
FIELD_KINDS = (GAUSSIAN_UNIT, BINARY)

KERNEL_RADIUS_FACTOR = 3.0
GRID_EPS = 1e-9


class ExtentTooSmall(ValueError):
    pass


class OutOfExtent(ValueError):
    pass


class LosState(str, Enum):
    LOS = "LOS"
    NLOS = "NLOS"


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float]
    resolution: float
    width: int
    height: int

    @classmethod
    def from_center(
        cls,
        center: tuple[float, float],
        extent: tuple[float, float],
        resolution: float,
    ) -> GridSpec:
        width = int(math.floor(extent[0] / resolution + GRID_EPS)) + 1
        height = int(math.floor(extent[1] / resolution + GRID_EPS)) + 1
        origin = (
            center[0] - (width - 1) * resolution / 2,
            center[1] - (height - 1) * resolution / 2,
        )
        return cls(origin=origin, resolution=resolution, width=width, height=height)

    @property
    def upper(self) -> tuple[float, float]:
        return (
            self.origin[0] + (self.width - 1) * self.resolution,
            self.origin[1] + (self.height - 1) * self.resolution,
        )

    def contains(self, point: Sequence[float], margin: float = 0.0) -> bool:
        tol = GRID_EPS * max(1.0, self.resolution)
        upper = self.upper
        return (
            self.origin[0] + margin - tol <= point[0] <= upper[0] - margin + tol
            and self.origin[1] + margin - tol <= point[1] <= upper[1] - margin + tol
        )

    def coordinates(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        xs = self.origin[0] + self.resolution * np.arange(self.width)
        ys = self.origin[1] + self.resolution * np.arange(self.height)
        return xs, ys


@dataclass(frozen=True)
class CorrelatedGridMap:
    """Grid of values indexed ``values[ix, iy]``; cell centers sit at
    ``origin + resolution * (ix, iy)``."""

    origin: tuple[float, float]
    resolution: float
    width: int
    height: int
    values: NDArray[np.float64]
    correlation_distance: float
    field_kind: str = GAUSSIAN_UNIT

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.origin, self.resolution, self.width, self.height)


@dataclass(frozen=True)
class LosStateMap:
    underlying: CorrelatedGridMap
    bs_position: tuple[float, float]


@dataclass(frozen=True)
class SfMaps:
    """Correlated shadow-fading fields for one run.

    ``cluster[n]`` drives Z_n, ``subpath[n][m - 1]`` drives U of subpath ``m``
    (subpath id 0 is reserved for the LOS component, which is never shadowed).
    """

    path_loss: CorrelatedGridMap
    cluster: list[CorrelatedGridMap]
    subpath: list[list[CorrelatedGridMap]]


def _frozen(values: NDArray[np.float64]) -> NDArray[np.float64]:
    values.setflags(write=False)
    return values


def kernel_radius(resolution: float, correlation_distance: float) -> int:
    return int(math.floor(KERNEL_RADIUS_FACTOR * correlation_distance / resolution + GRID_EPS))


def exponential_kernel(resolution: float, correlation_distance: float) -> NDArray[np.float64]:
    if correlation_distance <= 0 or resolution <= 0:
        raise ValueError("correlation distance and resolution must be positive")
    radius = kernel_radius(resolution, correlation_distance)
    offsets = resolution * np.arange(-radius, radius + 1, dtype=np.float64)
    dist = np.hypot(offsets[:, None], offsets[None, :])
    kernel = np.exp(-dist / correlation_distance)
    kernel[dist > KERNEL_RADIUS_FACTOR * correlation_distance + GRID_EPS] = 0.0
    return kernel


@nb.njit(parallel=True, cache=True)
def _filter_valid(noise, kernel):
    layers, rows, cols = noise.shape
    size = kernel.shape[0]
    out_rows = rows - size + 1
    out_cols = cols - size + 1
    out = np.zeros((layers, out_rows, out_cols))
    for task in nb.prange(layers * out_rows):
        layer = task // out_rows
        i = task % out_rows
        for j in range(out_cols):
            acc = 0.0
            for a in range(size):
                for b in range(size):
                    w = kernel[a, b]
                    if w != 0.0:
                        acc += w * noise[layer, i + a, j + b]
            out[layer, i, j] = acc
    return out


def exponential_filter(
    values: NDArray[np.float64],
    resolution: float,
    correlation_distance: float,
    *,
    mode: str = "same",
) -> NDArray[np.float64]:
    """Convolve a grid (or a stack of grids) with the truncated exponential kernel.

    ``mode="same"`` zero-pads outside the grid and keeps the input shape;
    ``mode="valid"`` treats the outer kernel radius of the input as an apron and
    returns only the cells that see the complete kernel.
    """
    if mode not in ("same", "valid"):
        raise ValueError(f"unknown filter mode {mode!r}")
    kernel = exponential_kernel(resolution, correlation_distance)
    radius = kernel.shape[0] // 2
    stack = np.asarray(values, dtype=np.float64)
    squeeze = stack.ndim == 2
    if squeeze:
        stack = stack[None, :, :]
    if mode == "same":
        stack = np.pad(stack, ((0, 0), (radius, radius), (radius, radius)))
    elif min(stack.shape[1:]) <= 2 * radius:
        raise ExtentTooSmall("input is smaller than the kernel apron")
    out = _filter_valid(np.ascontiguousarray(stack), kernel)
    return out[0] if squeeze else out


def normalize_unit(values: NDArray[np.float64]) -> NDArray[np.float64]:
    """Rescale a filtered field to zero mean and unit variance over its own cells."""
    centered = values - values.mean()
    return centered / centered.std()


def _check_grid(grid: GridSpec) -> None:
    if grid.width < 2 or grid.height < 2:
        raise ExtentTooSmall(
            f"grid of {grid.width}x{grid.height} cells; need at least 2x2 "
            f"(resolution {grid.resolution:g} m)"
        )


def build_correlated_stack(
    grid: GridSpec,
    correlation_distance: float,
    rng: np.random.Generator,
    layers: int,
) -> list[CorrelatedGridMap]:
    """Filter ``layers`` independent i.i.d. normal grids in one pass.

    The i.i.d. draws cover an apron one kernel radius wide around the grid so
    every output cell sees the complete kernel.
    """
    _check_grid(grid)
    radius = kernel_radius(grid.resolution, correlation_distance)
    shape = (layers, grid.width + 2 * radius, grid.height + 2 * radius)
    noise = rng.standard_normal(shape)
    filtered = exponential_filter(noise, grid.resolution, correlation_distance, mode="valid")
    return [
        CorrelatedGridMap(
            origin=grid.origin,
            resolution=grid.resolution,
            width=grid.width,
            height=grid.height,
            values=_frozen(normalize_unit(filtered[layer])),
            correlation_distance=correlation_distance,
            field_kind=GAUSSIAN_UNIT,
        )
        for layer in range(layers)
    ]


def build_correlated_map(
    extent: tuple[float, float],
    resolution: float,
    correlation_distance: float,
    rng: np.random.Generator,
    *,
    center: tuple[float, float] = (0.0, 0.0),
) -> CorrelatedGridMap:
    if resolution <= 0 or correlation_distance <= 0:
        raise ValueError("resolution and correlation distance must be positive")
    grid = GridSpec.from_center(center, extent, resolution)
    return build_correlated_stack(grid, correlation_distance, rng, 1)[0]


def build_uncorrelated_map(
    extent: tuple[float, float],
    resolution: float,
    rng: np.random.Generator,
    *,
    center: tuple[float, float] = (0.0, 0.0),
) -> CorrelatedGridMap:
    grid = GridSpec.from_center(center, extent, resolution)
    _check_grid(grid)
    values = rng.standard_normal((grid.width, grid.height))
    return CorrelatedGridMap(
        origin=grid.origin,
        resolution=grid.resolution,
        width=grid.width,
        height=grid.height,
        values=_frozen(values),
        correlation_distance=0.0,
        field_kind=GAUSSIAN_UNIT,
    )


def kernel_covariance(resolution: float, correlation_distance: float) -> NDArray[np.float64]:
    """Covariance of unit-variance filtered white noise over 2-D cell offsets.

    Centered at ``[2r, 2r]`` for kernel radius ``r``; zero beyond ``2r`` cells.
    """
    kernel = exponential_kernel(resolution, correlation_distance)
    cov = fftconvolve(kernel, kernel[::-1, ::-1])
    return cov / cov[cov.shape[0] // 2, cov.shape[1] // 2]


def expected_autocorrelation(
    resolution: float,
    correlation_distance: float,
    lags: Sequence[float],
    *,
    shape: tuple[int, int] | None = None,
) -> list[float]:
    """Autocorrelation of filtered white noise along the grid axes.

    Without ``shape`` this is the stationary value. With ``shape`` it is the
    expectation for a ``shape`` grid standardized by its own mean, as
    ``normalize_unit`` does, averaged over both axes.
    """
    cov = kernel_covariance(resolution, correlation_distance)
    center = cov.shape[0] // 2
    shifts = [int(round(abs(lag) / resolution)) for lag in lags]
    stationary = [float(cov[center + s, center]) if s <= center else 0.0 for s in shifts]
    if shape is None:
        return stationary

    cells = shape[0] * shape[1]
    if min(shape) < 2 or max(shifts) >= min(shape):
        raise ValueError(f"lags {list(lags)} do not fit a {shape[0]}x{shape[1]} grid")
    # covariance of each cell with the grid mean, times the cell count
    row_sums = fftconvolve(np.ones(shape), cov, mode="same")
    mean_var = float(row_sums.sum()) / cells**2
    out = []
    for shift, value in zip(shifts, stationary):
        total = 0.0
        for axis in (0, 1):
            n = shape[axis]
            head = np.take(row_sums, range(0, n - shift), axis=axis)
            tail = np.take(row_sums, range(shift, n), axis=axis)
            total += value - (float(head.mean()) + float(tail.mean())) / cells + mean_var
        out.append(total / 2 / (1.0 - mean_var))
    return out


def sample_map(grid_map: CorrelatedGridMap, position: Sequence[float]) -> float:
    if not grid_map.grid.contains(position):
        raise OutOfExtent(
            f"position ({position[0]:.3f}, {position[1]:.3f}) is outside the map "
            f"{grid_map.origin} .. {grid_map.grid.upper}"
        )
    fx = (position[0] - grid_map.origin[0]) / grid_map.resolution
    fy = (position[1] - grid_map.origin[1]) / grid_map.resolution
    ix = min(max(int(math.floor(fx)), 0), grid_map.width - 2)
    iy = min(max(int(math.floor(fy)), 0), grid_map.height - 2)
    tx = min(max(fx - ix, 0.0), 1.0)
    ty = min(max(fy - iy, 0.0), 1.0)
    v = grid_map.values
    return float(
        (1 - tx) * (1 - ty) * v[ix, iy]
        + tx * (1 - ty) * v[ix + 1, iy]
        + (1 - tx) * ty * v[ix, iy + 1]
        + tx * ty * v[ix + 1, iy + 1]
    )


def los_threshold_state(variate: float, probability: float) -> LosState:
    return LosState.LOS if float(ndtr(variate)) < probability else LosState.NLOS


def assign_los_state(
    gauss_map: CorrelatedGridMap,
    bs_position: Sequence[float],
    position: Sequence[float],
    *,
    scenario: ScenarioModel | None = None,
    ut_height: float = 1.5,
) -> LosState:
    if gauss_map.field_kind != GAUSSIAN_UNIT:
        raise ValueError("LOS assignment needs a GaussianUnit map")
    model = scenario or UMiScenario()
    d_2d = math.hypot(position[0] - bs_position[0], position[1] - bs_position[1])
    probability = float(model.los_probability(d_2d, ut_height))
    return los_threshold_state(sample_map(gauss_map, position), probability)


def build_los_state_map(
    gauss_map: CorrelatedGridMap,
    bs_position: tuple[float, float],
    *,
    scenario: ScenarioModel | None = None,
    ut_height: float = 1.5,
) -> LosStateMap:
    model = scenario or UMiScenario()
    xs, ys = gauss_map.grid.coordinates()
    d_2d = np.hypot(xs[:, None] - bs_position[0], ys[None, :] - bs_position[1])
    probability = model.los_probability(d_2d, ut_height)
    binary = (ndtr(gauss_map.values) < probability).astype(np.float64)
    underlying = CorrelatedGridMap(
        origin=gauss_map.origin,
        resolution=gauss_map.resolution,
        width=gauss_map.width,
        height=gauss_map.height,
        values=_frozen(binary),
        correlation_distance=gauss_map.correlation_distance,
        field_kind=BINARY,
    )
    return LosStateMap(underlying=underlying, bs_position=bs_position)


def _bounding_center(points: Sequence[Sequence[float]]) -> tuple[float, float]:
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    return ((min(xs) + max(xs)) / 2, (min(ys) + max(ys)) / 2)


def los_map_center(
    bs_position: Sequence[float], positions: Sequence[Sequence[float]]
) -> tuple[float, float]:
    return _bounding_center([bs_position, *positions])


def sf_map_center(trajectory: Trajectory) -> tuple[float, float]:
    """Point halfway along the route by arc length."""
    position, _ = trajectory.locate(trajectory.track_length / 2)
    return position


def build_sf_maps(
    config: SimulationConfig,
    cluster_sizes: Sequence[int],
    rng: np.random.Generator,
    *,
    center: tuple[float, float],
) -> SfMaps:
    """Build the path-loss SF field plus one Z field per cluster and one U field
    per scattered subpath, all with ``correlation_distance_sf``."""
    grid = GridSpec.from_center(center, config.sf_map_extent, config.map_resolution)
    delta = config.correlation_distance_sf
    layers = 1 + len(cluster_sizes) + sum(cluster_sizes)
    maps = build_correlated_stack(grid, delta, rng, layers)
    path_loss = maps[0]
    cluster = maps[1 : 1 + len(cluster_sizes)]
    subpath = []
    cursor = 1 + len(cluster_sizes)
    for size in cluster_sizes:
        subpath.append(maps[cursor : cursor + size])
        cursor += size
    return SfMaps(path_loss=path_loss, cluster=cluster, subpath=subpath)


def write_map_csv(grid_map: CorrelatedGridMap, path: Path) -> None:
    try:
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["origin_x_m", "origin_y_m", "resolution_m", "width", "height"])
            writer.writerow(
                [
                    f"{grid_map.origin[0]:.9g}",
                    f"{grid_map.origin[1]:.9g}",
                    f"{grid_map.resolution:.9g}",
                    grid_map.width,
                    grid_map.height,
                ]
            )
            # one line per y row, x ascending
            for iy in range(grid_map.height):
                writer.writerow(f"{v:.9g}" for v in grid_map.values[:, iy])
    except OSError as exc:
        raise OSError(f"failed to write map {path}: {exc}") from exc


__all__ = [
    "BINARY",
    "CorrelatedGridMap",
    "ExtentTooSmall",
    "GAUSSIAN_UNIT",
    "GridSpec",
    "LosState",
    "LosStateMap",
    "OutOfExtent",
    "SfMaps",
    "assign_los_state",
    "build_correlated_map",
    "build_correlated_stack",
    "build_los_state_map",
    "build_sf_maps",
    "build_uncorrelated_map",
    "exponential_filter",
    "exponential_kernel",
    "expected_autocorrelation",
    "kernel_covariance",
    "los_map_center",
    "normalize_unit",
    "sample_map",
    "sf_map_center",
    "write_map_csv",
]
