from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.constants import speed_of_light

from .config import SimulationConfig
from .drop import (
    ChannelSnapshot,
    Subpath,
    TWO_PI,
    ZENITH_EPS,
    allocate_powers,
    make_los_component,
    path_loss,
    received_power_mw,
    shadowing_vectors,
    uniform_azimuth,
    wrap_azimuth,
    wrap_phase,
)
from .fields import CorrelatedGridMap, LosState, SfMaps, assign_los_state, sample_map
from .scenarios import ScenarioModel, resolve_scenario
from .trajectory import BS_POSITION, TrackPoint, distance_2d, distance_3d

NS_PER_S = 1e9
# scattered arrivals never reach the LOS component
LOS_DELAY_FLOOR_NS = 1e-3

SubpathKey = tuple[int, int]


class DegenerateGeometry(ValueError):
    pass


@dataclass(frozen=True)
class AngleSet:
    aod: float
    zod: float
    aoa: float
    zoa: float

    @classmethod
    def of(cls, subpath: Subpath) -> AngleSet:
        return cls(aod=subpath.aod, zod=subpath.zod, aoa=subpath.aoa, zoa=subpath.zoa)


ZERO_ANGLES = AngleSet(0.0, 0.0, 0.0, 0.0)


@dataclass
class EvolutionCounters:
    delay_clamps: int = 0
    azimuth_wraps: int = 0
    zenith_reflections: int = 0
    los_transitions: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "delay_clamps": self.delay_clamps,
            "azimuth_wraps": self.azimuth_wraps,
            "zenith_reflections": self.zenith_reflections,
            "los_transitions": self.los_transitions,
        }


@dataclass
class EvolutionState:
    """Per-subpath bookkeeping carried from one update to the next.

    ``reflection`` and ``slopes`` hold AngleSet values keyed by
    ``(cluster_id, subpath_id)``; slopes are in rad/s. ``path_delays`` are
    unreferenced delays in ns against a fixed origin; snapshot excess delays
    are derived from them each step.
    """

    reflection: dict[SubpathKey, AngleSet]
    slopes: dict[SubpathKey, AngleSet] = field(default_factory=dict)
    anchor_time: float = 0.0
    anchor_angles: dict[SubpathKey, AngleSet] = field(default_factory=dict)
    path_delays: dict[SubpathKey, float] = field(default_factory=dict)
    los_state: LosState = LosState.NLOS
    heading: float = 0.0
    counters: EvolutionCounters = field(default_factory=EvolutionCounters)


@dataclass(frozen=True)
class SimulationMaps:
    sf: SfMaps
    los: CorrelatedGridMap | None = None


def _draw_reflection(rng: np.random.Generator) -> AngleSet:
    az = uniform_azimuth(rng, size=2)
    # zenith surfaces on (-pi/2, pi/2]
    zen = math.pi / 2 - rng.uniform(0.0, math.pi, size=2)
    return AngleSet(aod=float(az[0]), zod=float(zen[0]), aoa=float(az[1]), zoa=float(zen[1]))


def draw_reflection_angles(
    snapshot: ChannelSnapshot, rng: np.random.Generator, *, mode: str = "subpath"
) -> dict[SubpathKey, AngleSet]:
    angles: dict[SubpathKey, AngleSet] = {}
    for cluster in snapshot.clusters:
        shared = _draw_reflection(rng) if mode == "cluster" else None
        for sp in cluster.subpaths:
            key = (cluster.cluster_id, sp.subpath_id)
            if sp.is_los_component:
                angles[key] = ZERO_ANGLES
            else:
                angles[key] = shared if shared is not None else _draw_reflection(rng)
    return angles


def init_evolution_state(
    snapshot: ChannelSnapshot,
    rng: np.random.Generator,
    *,
    reflection_mode: str = "subpath",
    heading: float = 0.0,
) -> EvolutionState:
    anchors = {
        (cluster.cluster_id, sp.subpath_id): AngleSet.of(sp) for cluster, sp in snapshot.iter_subpaths()
    }
    return EvolutionState(
        reflection=draw_reflection_angles(snapshot, rng, mode=reflection_mode),
        slopes={key: ZERO_ANGLES for key in anchors},
        anchor_time=snapshot.time,
        anchor_angles=anchors,
        path_delays={
            (cluster.cluster_id, sp.subpath_id): sp.excess_delay for cluster, sp in snapshot.iter_subpaths()
        },
        los_state=snapshot.los_state,
        heading=heading,
    )


def compute_slopes(
    subpath: Subpath | AngleSet,
    psi: AngleSet,
    speed: float,
    heading: float,
    d_2d: float,
    d_3d: float,
) -> AngleSet:
    if d_2d <= 0:
        raise DegenerateGeometry("slopes are undefined at d_2D = 0")
    if d_3d <= 0:
        raise DegenerateGeometry("slopes are undefined at d_3D = 0")
    dep = heading - subpath.aod
    arr = heading - subpath.aoa
    return AngleSet(
        aod=speed * math.sin(dep + psi.aod) / d_2d,
        zod=-speed * math.cos(dep + psi.zod) / d_3d,
        aoa=-speed * math.sin(arr + psi.aoa) / d_2d,
        zoa=-speed * math.cos(arr + psi.zoa) / d_3d,
    )


def _reflect_zenith(zenith: float, azimuth: float) -> tuple[float, float, bool]:
    reflected = False
    # a single step never moves far enough to need more than a couple of bounces
    while zenith < 0.0 or zenith > math.pi:
        zenith = -zenith if zenith < 0.0 else TWO_PI - zenith
        azimuth += math.pi
        reflected = True
    zenith = min(max(zenith, ZENITH_EPS), math.pi - ZENITH_EPS)
    return zenith, azimuth, reflected


def _wrap(azimuth: float) -> float:
    return azimuth if -math.pi < azimuth <= math.pi else float(wrap_azimuth(azimuth))


def propagate_angles(anchor: AngleSet, slopes: AngleSet, elapsed: float) -> tuple[AngleSet, int, int]:
    """Linear angle update from the anchor; returns (angles, wraps, reflections)."""
    aod = anchor.aod + slopes.aod * elapsed
    aoa = anchor.aoa + slopes.aoa * elapsed
    zod, aod, r_dep = _reflect_zenith(anchor.zod + slopes.zod * elapsed, aod)
    zoa, aoa, r_arr = _reflect_zenith(anchor.zoa + slopes.zoa * elapsed, aoa)
    wraps = sum(1 for a in (aod, aoa) if not -math.pi < a <= math.pi)
    angles = AngleSet(_wrap(aod), zod, _wrap(aoa), zoa)
    return angles, wraps, int(r_dep) + int(r_arr)


def update_angles(state: EvolutionState, t: float) -> dict[SubpathKey, AngleSet]:
    if t < state.anchor_time:
        raise ValueError(f"t = {t} precedes the slope anchor time {state.anchor_time}")
    elapsed = t - state.anchor_time
    return {
        key: propagate_angles(anchor, state.slopes.get(key, ZERO_ANGLES), elapsed)[0]
        for key, anchor in state.anchor_angles.items()
    }


def arrival_unit_vector(aoa: float, zoa: float) -> np.ndarray:
    sin_z = math.sin(zoa)
    return np.array([sin_z * math.cos(aoa), sin_z * math.sin(aoa), math.cos(zoa)])


def _radial_speed(subpath: Subpath, velocity: Sequence[float]) -> float:
    v = np.array([velocity[0], velocity[1], 0.0])
    return float(arrival_unit_vector(subpath.aoa, subpath.zoa) @ v)


def _sort_subpaths(subpaths: Sequence[Subpath]) -> tuple[Subpath, ...]:
    return tuple(
        sorted(subpaths, key=lambda sp: (sp.excess_delay, not sp.is_los_component, sp.subpath_id))
    )


def advance_path_delays(
    snapshot: ChannelSnapshot,
    velocity: Sequence[float],
    dt: float,
    path_delays: dict[SubpathKey, float] | None = None,
) -> dict[SubpathKey, float]:
    """Move every unreferenced path delay by -(r.v) dt / c, LOS component included.

    Subpaths missing from ``path_delays`` start from their excess delay.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    path_delays = path_delays or {}
    scale = dt / speed_of_light * NS_PER_S
    advanced: dict[SubpathKey, float] = {}
    for cluster, sp in snapshot.iter_subpaths():
        key = (cluster.cluster_id, sp.subpath_id)
        advanced[key] = path_delays.get(key, sp.excess_delay) - _radial_speed(sp, velocity) * scale
    return advanced


def reference_delays(
    snapshot: ChannelSnapshot, path_delays: dict[SubpathKey, float]
) -> tuple[ChannelSnapshot, int]:
    """Rewrite excess delays against the earliest arrival.

    Without a LOS component the earliest subpath sits at 0. With one, the LOS
    component is pinned at 0 and the reference moves back whenever a scattered
    subpath would arrive less than ``LOS_DELAY_FLOOR_NS`` after it; that move
    is the returned clamp count (0 or 1).
    """
    los_key: SubpathKey | None = None
    scattered: list[float] = []
    for cluster, sp in snapshot.iter_subpaths():
        key = (cluster.cluster_id, sp.subpath_id)
        if sp.is_los_component:
            los_key = key
        else:
            scattered.append(path_delays[key])
    clamps = 0
    if los_key is None:
        reference = min(scattered)
    else:
        reference = path_delays[los_key]
        if scattered and min(scattered) - LOS_DELAY_FLOOR_NS < reference:
            reference = min(scattered) - LOS_DELAY_FLOOR_NS
            clamps = 1
    clusters = []
    for cluster in snapshot.clusters:
        subpaths = [
            replace(
                sp,
                excess_delay=0.0
                if sp.is_los_component
                else path_delays[(cluster.cluster_id, sp.subpath_id)] - reference,
            )
            for sp in cluster.subpaths
        ]
        clusters.append(replace(cluster, subpaths=_sort_subpaths(subpaths)))
    return replace(snapshot, clusters=tuple(clusters)), clamps


def update_delays(
    snapshot: ChannelSnapshot,
    velocity: Sequence[float],
    dt: float,
    path_delays: dict[SubpathKey, float] | None = None,
) -> tuple[ChannelSnapshot, dict[SubpathKey, float], int]:
    """Advance delays with the angles currently held by ``snapshot`` and re-reference them.

    Returns the updated snapshot, the advanced path delays and the clamp count.
    """
    advanced = advance_path_delays(snapshot, velocity, dt, path_delays)
    moved, clamps = reference_delays(snapshot, advanced)
    return moved, advanced, clamps


def update_phases(
    snapshot: ChannelSnapshot, velocity: Sequence[float], dt: float, frequency: float
) -> ChannelSnapshot:
    scale = -TWO_PI * frequency / speed_of_light * dt
    clusters = tuple(
        replace(
            cluster,
            subpaths=tuple(
                replace(sp, phase=float(wrap_phase(sp.phase + scale * _radial_speed(sp, velocity))))
                for sp in cluster.subpaths
            ),
        )
        for cluster in snapshot.clusters
    )
    return replace(snapshot, clusters=clusters)


def sample_shadowing(
    config: SimulationConfig, sf_maps: SfMaps, position: Sequence[float], cluster_ids: Sequence[int]
) -> tuple[list[float], list[list[float]]]:
    z_db = [config.sigma_cluster_db * sample_map(sf_maps.cluster[n], position) for n in cluster_ids]
    u_db = [
        [config.sigma_subpath_db * sample_map(grid_map, position) for grid_map in sf_maps.subpath[n]]
        for n in cluster_ids
    ]
    return z_db, u_db


def update_powers(
    snapshot: ChannelSnapshot,
    sf_maps: SfMaps,
    position: Sequence[float],
    total_received_power: float,
    config: SimulationConfig,
) -> ChannelSnapshot:
    z_db, u_db = sample_shadowing(config, sf_maps, position, [c.cluster_id for c in snapshot.clusters])
    clusters = allocate_powers(
        snapshot.clusters,
        total_received_power,
        z_db,
        shadowing_vectors(snapshot.clusters, u_db),
        cluster_decay_ns=config.cluster_decay_ns,
        subpath_decay_ns=config.subpath_decay_ns,
    )
    return replace(snapshot, clusters=clusters, total_received_power=total_received_power)


def lookup_los_state(
    config: SimulationConfig,
    maps: SimulationMaps,
    position: Sequence[float],
    scenario: ScenarioModel | None = None,
) -> LosState:
    if config.los_mode == "los":
        return LosState.LOS
    if config.los_mode == "nlos":
        return LosState.NLOS
    if maps.los is None:
        raise ValueError("los_mode 'map' needs a LOS map")
    return assign_los_state(
        maps.los,
        BS_POSITION,
        position,
        scenario=scenario or resolve_scenario(config.scenario),
        ut_height=config.ut_height,
    )


def shadow_fading_db(
    config: SimulationConfig, sf_maps: SfMaps, los_state: LosState, position: Sequence[float]
) -> float:
    sigma = config.sf_sigma_los if los_state == LosState.LOS else config.sf_sigma_nlos
    if sigma == 0:
        return 0.0
    return sigma * sample_map(sf_maps.path_loss, position)


def _apply_los_transition(
    snapshot: ChannelSnapshot,
    state: EvolutionState,
    los_state: LosState,
    config: SimulationConfig,
    position: tuple[float, float],
) -> ChannelSnapshot:
    has_los = snapshot.has_los_component
    if los_state == LosState.LOS and not has_los:
        first = snapshot.clusters[0]
        los = make_los_component(config, position, phase=0.0)
        key = (first.cluster_id, los.subpath_id)
        state.reflection[key] = ZERO_ANGLES
        state.slopes[key] = ZERO_ANGLES
        # one subpath spacing ahead of the earliest scattered arrival, as in a LOS drop
        earliest = min(state.path_delays[(c.cluster_id, sp.subpath_id)] for c, sp in snapshot.iter_subpaths())
        state.path_delays[key] = earliest - config.subpath_spacing_ns
        clusters = (replace(first, subpaths=(los, *first.subpaths)), *snapshot.clusters[1:])
        return replace(snapshot, clusters=clusters)
    if los_state == LosState.NLOS and has_los:
        clusters = []
        for cluster in snapshot.clusters:
            kept = tuple(sp for sp in cluster.subpaths if not sp.is_los_component)
            for sp in cluster.subpaths:
                if sp.is_los_component:
                    key = (cluster.cluster_id, sp.subpath_id)
                    for table in (state.reflection, state.slopes, state.anchor_angles, state.path_delays):
                        table.pop(key, None)
            clusters.append(replace(cluster, subpaths=kept))
        return replace(snapshot, clusters=tuple(clusters))
    return snapshot


def _with_angles(snapshot: ChannelSnapshot, angles: dict[SubpathKey, AngleSet]) -> ChannelSnapshot:
    clusters = []
    for cluster in snapshot.clusters:
        subpaths = []
        for sp in cluster.subpaths:
            a = angles[(cluster.cluster_id, sp.subpath_id)]
            subpaths.append(replace(sp, aod=a.aod, zod=a.zod, aoa=a.aoa, zoa=a.zoa))
        clusters.append(replace(cluster, subpaths=tuple(subpaths)))
    return replace(snapshot, clusters=tuple(clusters))


def step(
    snapshot: ChannelSnapshot,
    state: EvolutionState,
    point: TrackPoint,
    maps: SimulationMaps,
    config: SimulationConfig,
    *,
    scenario: ScenarioModel | None = None,
) -> tuple[ChannelSnapshot, EvolutionState]:
    """Advance ``snapshot`` (at t_{k-1}) to the trajectory point ``point`` (t_k)."""
    dt = point.time - snapshot.time
    if dt <= 0:
        raise ValueError(f"step {point.time} s does not advance past {snapshot.time} s")
    previous = snapshot.ut_position
    position = point.position
    chord = (position[0] - previous[0], position[1] - previous[1])
    speed = math.hypot(*chord) / dt
    heading = math.atan2(chord[1], chord[0]) if speed > 0 else state.heading
    velocity = (chord[0] / dt, chord[1] / dt)

    # propagation condition
    los_state = lookup_los_state(config, maps, position, scenario)

    # time-variant path loss
    d_2d = distance_2d(position)
    d_3d = distance_3d(d_2d, config.resolved_bs_height, config.ut_height)
    sf_db = shadow_fading_db(config, maps.sf, los_state, position)
    pl = path_loss(
        config.carrier_frequency,
        d_3d,
        los_state,
        sf_db,
        exponent_los=config.exponent_los,
        exponent_nlos=config.exponent_nlos,
    )
    total = received_power_mw(config.tx_power_dbm, pl)

    # delays and phases both use the t_{k-1} arrival directions
    state.path_delays = advance_path_delays(snapshot, velocity, dt, state.path_delays)
    moved = update_phases(snapshot, velocity, dt, config.carrier_frequency)

    # slopes anchored at t_{k-1}, then the linear angle update to t_k
    prev_d_2d = distance_2d(previous)
    prev_d_3d = distance_3d(prev_d_2d, config.resolved_bs_height, config.ut_height)
    slopes: dict[SubpathKey, AngleSet] = {}
    anchors: dict[SubpathKey, AngleSet] = {}
    angles: dict[SubpathKey, AngleSet] = {}
    for cluster, sp in moved.iter_subpaths():
        key = (cluster.cluster_id, sp.subpath_id)
        anchors[key] = AngleSet.of(sp)
        slopes[key] = compute_slopes(sp, state.reflection[key], speed, heading, prev_d_2d, prev_d_3d)
        angles[key], wraps, reflections = propagate_angles(anchors[key], slopes[key], dt)
        state.counters.azimuth_wraps += wraps
        state.counters.zenith_reflections += reflections
    state.slopes = slopes
    state.anchor_angles = anchors
    state.anchor_time = snapshot.time
    moved = _with_angles(moved, angles)

    if los_state != state.los_state:
        state.counters.los_transitions += 1
        moved = _apply_los_transition(moved, state, los_state, config, position)

    moved, clamps = reference_delays(moved, state.path_delays)
    state.counters.delay_clamps += clamps

    # power reallocation against the new total
    moved = replace(
        moved,
        time=point.time,
        step=snapshot.step + 1,
        ut_position=(float(position[0]), float(position[1])),
        los_state=los_state,
        path_loss=pl,
        shadow_fading=sf_db,
        d_2d=d_2d,
        d_3d=d_3d,
    )
    moved = update_powers(moved, maps.sf, position, total, config)

    state.los_state = los_state
    state.heading = heading
    return moved, state

