from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np
from scipy.constants import speed_of_light

from .config import SimulationConfig
from .fields import LosState
from .trajectory import BS_POSITION, distance_2d, distance_3d

REFERENCE_DISTANCE_M = 1.0
LOS_SUBPATH_ID = 0
ZENITH_EPS = 1e-6
TWO_PI = 2.0 * math.pi


class DistanceBelowReference(ValueError):
    pass


class NonPositiveTotalPower(ValueError):
    pass


@dataclass(frozen=True)
class Subpath:
    subpath_id: int
    excess_delay: float  # ns
    power: float  # mW
    phase: float
    aod: float
    zod: float
    aoa: float
    zoa: float
    is_los_component: bool = False


@dataclass(frozen=True)
class TimeCluster:
    cluster_id: int
    subpaths: tuple[Subpath, ...]
    cluster_shadowing: float = 0.0  # Z_n, dB

    @property
    def cluster_excess_delay(self) -> float:
        return self.subpaths[0].excess_delay

    @property
    def power(self) -> float:
        return math.fsum(sp.power for sp in self.subpaths)

    @property
    def los_component(self) -> Subpath | None:
        for sp in self.subpaths:
            if sp.is_los_component:
                return sp
        return None


@dataclass(frozen=True)
class ChannelSnapshot:
    time: float
    step: int
    ut_position: tuple[float, float]
    los_state: LosState
    path_loss: float  # dB
    shadow_fading: float  # dB, already included in path_loss
    total_received_power: float  # mW
    d_2d: float
    d_3d: float
    clusters: tuple[TimeCluster, ...]

    def iter_subpaths(self) -> Iterator[tuple[TimeCluster, Subpath]]:
        for cluster in self.clusters:
            for sp in cluster.subpaths:
                yield cluster, sp

    @property
    def num_subpaths(self) -> int:
        return sum(len(c.subpaths) for c in self.clusters)

    @property
    def rx_power_dbm(self) -> float:
        return 10.0 * math.log10(self.total_received_power)

    @property
    def has_los_component(self) -> bool:
        return any(c.los_component is not None for c in self.clusters)


def wrap_azimuth(angle):
    """Wrap into (-pi, pi]; works on scalars and arrays."""
    return np.pi - np.mod(np.pi - angle, TWO_PI)


def wrap_phase(angle):
    return np.mod(angle, TWO_PI)


def fspl_reference(frequency: float) -> float:
    return 20.0 * math.log10(4.0 * math.pi * frequency * REFERENCE_DISTANCE_M / speed_of_light)


def path_loss(
    frequency: float,
    d_3d: float,
    los_state: LosState,
    sf_db: float,
    *,
    exponent_los: float = 2.0,
    exponent_nlos: float = 3.2,
) -> float:
    """Close-in free-space reference distance model (d0 = 1 m)."""
    if d_3d < REFERENCE_DISTANCE_M:
        raise DistanceBelowReference(f"d_3D = {d_3d:.3f} m is below the 1 m reference distance")
    exponent = exponent_los if los_state == LosState.LOS else exponent_nlos
    return fspl_reference(frequency) + 10.0 * exponent * math.log10(d_3d) + sf_db


def received_power_mw(tx_power_dbm: float, path_loss_db: float) -> float:
    return 10.0 ** ((tx_power_dbm - path_loss_db) / 10.0)


def los_angles(
    ut_position: Sequence[float],
    bs_height: float,
    ut_height: float,
    bs_position: Sequence[float] = BS_POSITION,
) -> tuple[float, float, float, float]:
    """Exact (AOD, ZOD, AOA, ZOA) of the direct path."""
    dx = ut_position[0] - bs_position[0]
    dy = ut_position[1] - bs_position[1]
    d_2d = math.hypot(dx, dy)
    elevation = math.atan2(bs_height - ut_height, d_2d)
    aod = float(wrap_azimuth(math.atan2(dy, dx)))
    aoa = float(wrap_azimuth(math.atan2(bs_position[1] - ut_position[1], bs_position[0] - ut_position[0])))
    return aod, math.pi / 2 + elevation, aoa, math.pi / 2 - elevation


def _log_weights(delays: np.ndarray, decay: float, shadowing_db: np.ndarray) -> np.ndarray:
    log_w = -delays / decay + shadowing_db * (math.log(10.0) / 10.0)
    log_w -= log_w.max()
    weights = np.exp(log_w)
    return weights / weights.sum()


def allocate_powers(
    clusters: Sequence[TimeCluster],
    total_power: float,
    z_db: Sequence[float],
    u_db: Sequence[Sequence[float]],
    *,
    cluster_decay_ns: float,
    subpath_decay_ns: float,
) -> tuple[TimeCluster, ...]:
    """Split ``total_power`` over clusters and subpaths.

    ``u_db[n][m]`` lines up with ``clusters[n].subpaths[m]``.
    """
    if not math.isfinite(total_power) or total_power <= 0:
        raise NonPositiveTotalPower(f"total power must be positive, got {total_power!r}")
    cluster_delays = np.array([c.cluster_excess_delay for c in clusters])
    cluster_frac = _log_weights(cluster_delays, cluster_decay_ns, np.asarray(z_db, dtype=float))
    out = []
    for cluster, frac, z, u in zip(clusters, cluster_frac, z_db, u_db):
        delays = np.array([sp.excess_delay for sp in cluster.subpaths])
        offsets = delays - cluster.cluster_excess_delay
        sub_frac = _log_weights(offsets, subpath_decay_ns, np.asarray(u, dtype=float))
        subpaths = tuple(
            replace(sp, power=float(total_power * frac * f))
            for sp, f in zip(cluster.subpaths, sub_frac)
        )
        out.append(replace(cluster, subpaths=subpaths, cluster_shadowing=float(z)))
    return tuple(out)


def uniform_azimuth(rng: np.random.Generator, size=None):
    # uniform on (-pi, pi]
    return np.pi - rng.uniform(0.0, TWO_PI, size=size)


def draw_cluster_sizes(config: SimulationConfig, rng: np.random.Generator) -> list[int]:
    count = int(rng.integers(config.min_clusters, config.max_clusters + 1))
    sizes = rng.integers(config.min_subpaths, config.max_subpaths + 1, size=count)
    return [int(s) for s in sizes]


def _intra_cluster_offsets(config: SimulationConfig, size: int, rng: np.random.Generator) -> np.ndarray:
    skew = rng.uniform(0.0, config.subpath_delay_skew) if config.subpath_delay_skew > 0 else 0.0
    steps = np.arange(size, dtype=float) * config.subpath_spacing_ns
    return steps ** (1.0 + skew)


def _lobe_azimuths(rng: np.random.Generator, lobe: float, spread: float, size: int) -> np.ndarray:
    if spread <= 0:
        return np.full(size, lobe)
    return wrap_azimuth(lobe + rng.laplace(0.0, spread, size=size))


def _near_horizon(rng: np.random.Generator, spread: float, size: int) -> np.ndarray:
    if spread <= 0:
        return np.full(size, np.pi / 2)
    zenith = np.pi / 2 + rng.laplace(0.0, spread, size=size)
    return np.clip(zenith, ZENITH_EPS, np.pi - ZENITH_EPS)


def shadowing_from_rng(
    config: SimulationConfig, cluster_sizes: Sequence[int], rng: np.random.Generator
) -> tuple[list[float], list[list[float]]]:
    z_db = [float(v) for v in rng.normal(0.0, config.sigma_cluster_db, size=len(cluster_sizes))]
    u_db = [[float(v) for v in rng.normal(0.0, config.sigma_subpath_db, size=s)] for s in cluster_sizes]
    return z_db, u_db


def make_los_component(
    config: SimulationConfig, ut_position: Sequence[float], phase: float
) -> Subpath:
    aod, zod, aoa, zoa = los_angles(ut_position, config.resolved_bs_height, config.ut_height)
    return Subpath(
        subpath_id=LOS_SUBPATH_ID,
        excess_delay=0.0,
        power=1.0,
        phase=phase,
        aod=aod,
        zod=zod,
        aoa=aoa,
        zoa=zoa,
        is_los_component=True,
    )


def shadowing_vectors(
    clusters: Sequence[TimeCluster], u_db: Sequence[Sequence[float]]
) -> list[list[float]]:
    """Map per-scattered-subpath U values (indexed by subpath_id - 1) onto
    each cluster's current subpath order; the LOS component gets 0 dB."""
    out = []
    for cluster, u in zip(clusters, u_db):
        out.append(
            [0.0 if sp.is_los_component else float(u[sp.subpath_id - 1]) for sp in cluster.subpaths]
        )
    return out


def generate_initial_drop(
    config: SimulationConfig,
    los_state: LosState,
    rng: np.random.Generator,
    *,
    ut_position: tuple[float, float] | None = None,
    cluster_sizes: Sequence[int] | None = None,
    shadowing: tuple[Sequence[float], Sequence[Sequence[float]]] | None = None,
    sf_db: float | None = None,
    time: float = 0.0,
) -> ChannelSnapshot:
    """Draw the anchor omnidirectional CIR at the track start.

    ``cluster_sizes``, ``shadowing`` and ``sf_db`` are drawn from ``rng`` when not
    supplied; the runner supplies them from the correlated maps so the anchor
    drop and later steps read the same fields.
    """
    if ut_position is None:
        ut_position = (BS_POSITION[0] + config.tr_separation_2d, BS_POSITION[1])
    sizes = list(cluster_sizes) if cluster_sizes is not None else draw_cluster_sizes(config, rng)
    is_los = los_state == LosState.LOS
    mean_delay = config.mean_cluster_delay_los_ns if is_los else config.mean_cluster_delay_nlos_ns

    los_shift = config.subpath_spacing_ns if is_los else 0.0
    clusters = []
    cluster_start = 0.0
    for n, size in enumerate(sizes):
        if n > 0:
            cluster_start += config.cluster_void_ns + rng.exponential(mean_delay)
        offsets = _intra_cluster_offsets(config, size, rng)
        delays = cluster_start + los_shift + offsets
        aod_lobe, aoa_lobe = uniform_azimuth(rng), uniform_azimuth(rng)
        spread = config.azimuth_lobe_spread
        aods = _lobe_azimuths(rng, aod_lobe, spread, size)
        aoas = _lobe_azimuths(rng, aoa_lobe, spread, size)
        zods = _near_horizon(rng, config.zenith_spread, size)
        zoas = _near_horizon(rng, config.zenith_spread, size)
        phases = rng.uniform(0.0, TWO_PI, size=size)
        subpaths = tuple(
            Subpath(
                subpath_id=m + 1,
                excess_delay=float(delays[m]),
                power=1.0,
                phase=float(phases[m]),
                aod=float(aods[m]),
                zod=float(zods[m]),
                aoa=float(aoas[m]),
                zoa=float(zoas[m]),
            )
            for m in range(size)
        )
        clusters.append(TimeCluster(cluster_id=n, subpaths=subpaths))
        cluster_start = float(delays[-1]) - los_shift

    if is_los:
        los = make_los_component(config, ut_position, float(rng.uniform(0.0, TWO_PI)))
        first = clusters[0]
        clusters[0] = replace(first, subpaths=(los, *first.subpaths))

    if shadowing is None:
        shadowing = shadowing_from_rng(config, sizes, rng)
    z_db, u_db = shadowing
    if sf_db is None:
        sigma = config.sf_sigma_los if is_los else config.sf_sigma_nlos
        sf_db = float(rng.normal(0.0, sigma))

    d_2d = distance_2d(ut_position)
    d_3d = distance_3d(d_2d, config.resolved_bs_height, config.ut_height)
    pl = path_loss(
        config.carrier_frequency,
        d_3d,
        los_state,
        sf_db,
        exponent_los=config.exponent_los,
        exponent_nlos=config.exponent_nlos,
    )
    total = received_power_mw(config.tx_power_dbm, pl)
    allocated = allocate_powers(
        clusters,
        total,
        z_db,
        shadowing_vectors(clusters, u_db),
        cluster_decay_ns=config.cluster_decay_ns,
        subpath_decay_ns=config.subpath_decay_ns,
    )
    return ChannelSnapshot(
        time=time,
        step=0,
        ut_position=(float(ut_position[0]), float(ut_position[1])),
        los_state=los_state,
        path_loss=pl,
        shadow_fading=sf_db,
        total_received_power=total,
        d_2d=d_2d,
        d_3d=d_3d,
        clusters=allocated,
    )


__all__ = [
    "ChannelSnapshot",
    "DistanceBelowReference",
    "LOS_SUBPATH_ID",
    "NonPositiveTotalPower",
    "Subpath",
    "TimeCluster",
    "allocate_powers",
    "draw_cluster_sizes",
    "fspl_reference",
    "generate_initial_drop",
    "los_angles",
    "make_los_component",
    "path_loss",
    "received_power_mw",
    "shadowing_from_rng",
    "shadowing_vectors",
    "wrap_azimuth",
    "wrap_phase",
]
