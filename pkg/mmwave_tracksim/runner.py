from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from . import get_version
from .config import (
    SimulationConfig,
    config_from_mapping,
    config_to_dict,
    resolve_config,
    validate_config,
)
from .drop import ChannelSnapshot, draw_cluster_sizes, generate_initial_drop
from .evolution import (
    EvolutionCounters,
    EvolutionState,
    SimulationMaps,
    init_evolution_state,
    lookup_los_state,
    sample_shadowing,
    shadow_fading_db,
    step,
)
from .fields import (
    CorrelatedGridMap,
    GridSpec,
    build_correlated_map,
    build_los_state_map,
    build_sf_maps,
    build_uncorrelated_map,
    los_map_center,
    sf_map_center,
    write_map_csv,
)
from .scenarios import resolve_scenario
from .trajectory import BS_POSITION, Trajectory, generate_trajectory

# Fixed sub-stream ids; new consumers take new ids so existing streams never shift.
STREAM_IDS: dict[str, int] = {
    "los_map": 0,
    "sf_maps": 1,
    "drop": 2,
    "reflection": 3,
    "uncorrelated": 4,
}

CSV_FORMAT = ".9g"
MANIFEST_NAME = "manifest.json"

CIR_COLUMNS = [
    "time_s",
    "step",
    "cluster_id",
    "subpath_id",
    "excess_delay_ns",
    "power_dbm",
    "phase_rad",
    "aod_az_deg",
    "zod_deg",
    "aoa_az_deg",
    "zoa_deg",
    "is_los",
]
SUMMARY_COLUMNS = [
    "time_s",
    "x_m",
    "y_m",
    "d_2d_m",
    "d_3d_m",
    "los_state",
    "path_loss_db",
    "rx_power_dbm",
    "num_clusters",
]
ANGLE_COLUMNS = [
    "time_s",
    "step",
    "cluster_id",
    "subpath_id",
    "aod_az_deg",
    "zod_deg",
    "aoa_az_deg",
    "zoa_deg",
]
DELAY_COLUMNS = ["time_s", "step", "cluster_id", "cluster_excess_delay_ns", "cluster_power_dbm"]


class SimulationError(RuntimeError):
    def __init__(self, message: str, step: int, position: tuple[float, float]) -> None:
        super().__init__(f"step {step} at ({position[0]:.3f}, {position[1]:.3f}) m: {message}")
        self.message = message
        self.step = step
        self.position = position

    def __reduce__(self):
        # rebuilt in the parent when raised inside a --runs worker
        return type(self), (self.message, self.step, self.position)


class RunLogger:
    """``[INFO]``/``[WARN]`` lines and ``[SIM]`` JSON events on stderr."""

    def __init__(self, *, verbose: bool = False, quiet: bool = False) -> None:
        self.verbose = verbose
        self.quiet = quiet

    def info(self, message: str) -> None:
        if not self.quiet:
            sys.stderr.write(f"[INFO] {message}\n")

    def warn(self, message: str) -> None:
        if not self.quiet:
            sys.stderr.write(f"[WARN] {message}\n")

    def event(self, event: str, **payload: Any) -> None:
        if not self.verbose:
            return
        data = {"event": event, "ts": time.time(), **payload}
        try:
            sys.stderr.write("[SIM] " + json.dumps(data, ensure_ascii=False) + "\n")
        except Exception:
            return


@dataclass
class RunManifest:
    config: dict[str, Any]
    rng_seed: int
    version: str
    started_at: float
    finished_at: float = 0.0
    warnings: dict[str, int] = field(default_factory=dict)
    # one entry per step with any non-zero counter: {"step": k, counter: count, ...}
    step_warnings: list[dict[str, int]] = field(default_factory=list)
    files: dict[str, str] = field(default_factory=dict)
    # Not serialized; kept so the maps of a run can be exported next to it.
    maps: SimulationMaps | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "rng_seed": self.rng_seed,
            "version": self.version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "warnings": self.warnings,
            "step_warnings": self.step_warnings,
            "files": self.files,
        }


def stream_rng(seed: int, name: str) -> np.random.Generator:
    sequence = np.random.SeedSequence(seed, spawn_key=(STREAM_IDS[name],))
    return np.random.Generator(np.random.Philox(sequence))


@dataclass(frozen=True)
class RunContext:
    config: SimulationConfig
    trajectory: Trajectory
    maps: SimulationMaps
    cluster_sizes: list[int]
    drop_rng: np.random.Generator


def prepare_run(config: SimulationConfig) -> RunContext:
    """Validate, lay out the track, and build every correlated map of a run."""
    config = resolve_config(validate_config(config))
    assert config.rng_seed is not None
    seed = config.rng_seed
    trajectory = generate_trajectory(config)
    positions = trajectory.positions

    los_map = None
    if config.los_mode == "map":
        los_map = build_correlated_map(
            config.map_extent,
            config.los_map_resolution,
            config.resolved_correlation_distance_los,
            stream_rng(seed, "los_map"),
            center=los_map_center(BS_POSITION, positions),
        )

    # cluster sizes come first from the drop stream so the SF stack knows its depth
    drop_rng = stream_rng(seed, "drop")
    sizes = draw_cluster_sizes(config, drop_rng)
    sf_maps = build_sf_maps(config, sizes, stream_rng(seed, "sf_maps"), center=sf_map_center(trajectory))
    return RunContext(
        config=config,
        trajectory=trajectory,
        maps=SimulationMaps(sf=sf_maps, los=los_map),
        cluster_sizes=sizes,
        drop_rng=drop_rng,
    )


def iter_steps(
    context: RunContext, *, logger: RunLogger | None = None
) -> Iterator[tuple[ChannelSnapshot, EvolutionState]]:
    """Yield the anchor drop and every evolved snapshot with the live state.

    The state is mutated in place by the next step; copy what you keep.
    """
    logger = logger or RunLogger(quiet=True)
    config = context.config
    assert config.rng_seed is not None
    trajectory = context.trajectory
    maps = context.maps
    scenario = resolve_scenario(config.scenario)
    logger.event(
        "maps_built",
        los_map=maps.los is not None,
        sf_layers=1 + len(maps.sf.cluster) + sum(len(s) for s in maps.sf.subpath),
    )

    start = trajectory[0]
    try:
        los_state = lookup_los_state(config, maps, start.position, scenario)
        cluster_ids = list(range(len(context.cluster_sizes)))
        snapshot = generate_initial_drop(
            config,
            los_state,
            context.drop_rng,
            ut_position=start.position,
            cluster_sizes=context.cluster_sizes,
            shadowing=sample_shadowing(config, maps.sf, start.position, cluster_ids),
            sf_db=shadow_fading_db(config, maps.sf, los_state, start.position),
            time=start.time,
        )
    except (ValueError, ArithmeticError) as exc:
        raise SimulationError(str(exc), step=0, position=start.position) from exc
    logger.event(
        "drop_generated",
        los_state=los_state.value,
        clusters=len(snapshot.clusters),
        subpaths=snapshot.num_subpaths,
    )

    state = init_evolution_state(
        snapshot,
        stream_rng(config.rng_seed, "reflection"),
        reflection_mode=config.reflection_angles,
        heading=start.heading,
    )
    yield snapshot, state
    for k in range(1, len(trajectory)):
        point = trajectory[k]
        try:
            snapshot, state = step(snapshot, state, point, maps, config, scenario=scenario)
        except (ValueError, ArithmeticError) as exc:
            raise SimulationError(str(exc), step=k, position=point.position) from exc
        yield snapshot, state


def _counter_deltas(before: dict[str, int], after: dict[str, int]) -> dict[str, int]:
    return {name: after[name] - before[name] for name in after if after[name] != before[name]}


def run_simulation(
    config: SimulationConfig, *, logger: RunLogger | None = None
) -> tuple[list[ChannelSnapshot], RunManifest]:
    logger = logger or RunLogger(quiet=True)
    started = time.time()
    context = prepare_run(config)
    config = context.config
    assert config.rng_seed is not None

    snapshots: list[ChannelSnapshot] = []
    step_warnings: list[dict[str, int]] = []
    totals = EvolutionCounters().as_dict()
    for snapshot, state in iter_steps(context, logger=logger):
        counts = state.counters.as_dict()
        deltas = _counter_deltas(totals, counts)
        if deltas:
            step_warnings.append({"step": snapshot.step, **deltas})
            if "delay_clamps" in deltas:
                logger.event("delay_clamped", step=snapshot.step, count=deltas["delay_clamps"])
        totals = counts
        snapshots.append(snapshot)

    manifest = RunManifest(
        config=config_to_dict(config),
        rng_seed=config.rng_seed,
        version=get_version(),
        started_at=started,
        finished_at=time.time(),
        warnings=totals,
        step_warnings=step_warnings,
        maps=context.maps,
    )
    if totals["delay_clamps"]:
        logger.warn(
            f"Scattered delays held behind the LOS component on {totals['delay_clamps']} steps."
        )
    logger.info(f"Simulated {len(snapshots)} steps (seed={config.rng_seed}).")
    return snapshots, manifest


def _fmt(value: float) -> str:
    return format(value, CSV_FORMAT)


def _power_dbm(power_mw: float) -> float:
    return 10.0 * math.log10(power_mw)


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    try:
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc


def _cir_rows(snapshots: Sequence[ChannelSnapshot]) -> Iterable[list[str]]:
    for snap in snapshots:
        for cluster, sp in snap.iter_subpaths():
            yield [
                _fmt(snap.time),
                str(snap.step),
                str(cluster.cluster_id),
                str(sp.subpath_id),
                _fmt(sp.excess_delay),
                _fmt(_power_dbm(sp.power)),
                _fmt(sp.phase),
                _fmt(math.degrees(sp.aod)),
                _fmt(math.degrees(sp.zod)),
                _fmt(math.degrees(sp.aoa)),
                _fmt(math.degrees(sp.zoa)),
                "1" if sp.is_los_component else "0",
            ]


def _summary_rows(snapshots: Sequence[ChannelSnapshot]) -> Iterable[list[str]]:
    for snap in snapshots:
        yield [
            _fmt(snap.time),
            _fmt(snap.ut_position[0]),
            _fmt(snap.ut_position[1]),
            _fmt(snap.d_2d),
            _fmt(snap.d_3d),
            snap.los_state.value,
            _fmt(snap.path_loss),
            _fmt(snap.rx_power_dbm),
            str(len(snap.clusters)),
        ]


def _angle_rows(snapshots: Sequence[ChannelSnapshot]) -> Iterable[list[str]]:
    for snap in snapshots:
        for cluster, sp in snap.iter_subpaths():
            yield [
                _fmt(snap.time),
                str(snap.step),
                str(cluster.cluster_id),
                str(sp.subpath_id),
                _fmt(math.degrees(sp.aod)),
                _fmt(math.degrees(sp.zod)),
                _fmt(math.degrees(sp.aoa)),
                _fmt(math.degrees(sp.zoa)),
            ]


def _delay_rows(snapshots: Sequence[ChannelSnapshot]) -> Iterable[list[str]]:
    for snap in snapshots:
        for cluster in snap.clusters:
            yield [
                _fmt(snap.time),
                str(snap.step),
                str(cluster.cluster_id),
                _fmt(cluster.cluster_excess_delay),
                _fmt(_power_dbm(cluster.power)),
            ]


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _map_files(maps: SimulationMaps, config: SimulationConfig) -> dict[str, CorrelatedGridMap]:
    files: dict[str, CorrelatedGridMap] = {}
    if maps.los is not None:
        files["los_gauss.csv"] = maps.los
        state_map = build_los_state_map(
            maps.los,
            BS_POSITION,
            scenario=resolve_scenario(config.scenario),
            ut_height=config.ut_height,
        )
        files["los_state.csv"] = state_map.underlying
    files["sf_path_loss.csv"] = maps.sf.path_loss
    for n, grid_map in enumerate(maps.sf.cluster):
        files[f"sf_cluster_{n}.csv"] = grid_map
    return files


def write_outputs(
    snapshots: Sequence[ChannelSnapshot],
    manifest: RunManifest,
    out_dir: Path,
    *,
    include_maps: bool = False,
    logger: RunLogger | None = None,
) -> dict[str, Path]:
    logger = logger or RunLogger(quiet=True)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"failed to create {out_dir}: {exc}") from exc
    written: dict[str, Path] = {}
    tables = (
        ("cir.csv", CIR_COLUMNS, _cir_rows),
        ("summary.csv", SUMMARY_COLUMNS, _summary_rows),
        ("angles.csv", ANGLE_COLUMNS, _angle_rows),
        ("delays.csv", DELAY_COLUMNS, _delay_rows),
    )
    for name, header, rows in tables:
        path = out_dir / name
        _write_rows(path, header, rows(snapshots))
        written[name] = path
    if include_maps and manifest.maps is not None:
        config = config_from_mapping(manifest.config)
        for name, grid_map in _map_files(manifest.maps, config).items():
            path = out_dir / name
            write_map_csv(grid_map, path)
            written[name] = path

    manifest.files = {name: file_digest(path) for name, path in sorted(written.items())}
    manifest_path = out_dir / MANIFEST_NAME
    try:
        manifest_path.write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"failed to write {manifest_path}: {exc}") from exc
    written[MANIFEST_NAME] = manifest_path
    logger.event("outputs_written", out_dir=str(out_dir), files=sorted(written))
    return written


def make_maps(
    config: SimulationConfig, out_dir: Path, *, logger: RunLogger | None = None
) -> dict[str, Path]:
    """Export the correlated maps of a run plus uncorrelated counterparts."""
    logger = logger or RunLogger(quiet=True)
    context = prepare_run(config)
    config = context.config
    assert config.rng_seed is not None
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"failed to create {out_dir}: {exc}") from exc

    files = _map_files(context.maps, config)
    rng = stream_rng(config.rng_seed, "uncorrelated")
    scenario = resolve_scenario(config.scenario)
    if context.maps.los is not None:
        los = context.maps.los
        extent = _grid_extent(los.grid)
        raw = build_uncorrelated_map(extent, los.resolution, rng, center=_grid_center(los.grid))
        files["los_state_uncorrelated.csv"] = build_los_state_map(
            raw, BS_POSITION, scenario=scenario, ut_height=config.ut_height
        ).underlying
    for n, grid_map in enumerate(context.maps.sf.cluster):
        files[f"sf_cluster_{n}_uncorrelated.csv"] = build_uncorrelated_map(
            _grid_extent(grid_map.grid), grid_map.resolution, rng, center=_grid_center(grid_map.grid)
        )

    written: dict[str, Path] = {}
    for name, grid_map in files.items():
        path = out_dir / name
        write_map_csv(grid_map, path)
        written[name] = path
    logger.event("maps_written", out_dir=str(out_dir), files=sorted(written))
    logger.info(f"Wrote {len(written)} maps to {out_dir}.")
    return written


def _grid_extent(grid: GridSpec) -> tuple[float, float]:
    return ((grid.width - 1) * grid.resolution, (grid.height - 1) * grid.resolution)


def _grid_center(grid: GridSpec) -> tuple[float, float]:
    upper = grid.upper
    return ((grid.origin[0] + upper[0]) / 2, (grid.origin[1] + upper[1]) / 2)


def run_to_directory(
    config: SimulationConfig,
    out_dir: Path,
    *,
    include_maps: bool = False,
    verbose: bool = False,
    quiet: bool = False,
) -> dict[str, Any]:
    """One complete run written to ``out_dir``; safe to call from a worker process."""
    logger = RunLogger(verbose=verbose, quiet=quiet)
    snapshots, manifest = run_simulation(config, logger=logger)
    written = write_outputs(snapshots, manifest, out_dir, include_maps=include_maps, logger=logger)
    return {
        "seed": manifest.rng_seed,
        "steps": len(snapshots),
        "out_dir": str(out_dir),
        "manifest": str(written[MANIFEST_NAME]),
        "warnings": manifest.warnings,
        "files": sorted(written),
    }


__all__ = [
    "MANIFEST_NAME",
    "RunContext",
    "RunLogger",
    "RunManifest",
    "STREAM_IDS",
    "SimulationError",
    "file_digest",
    "iter_steps",
    "make_maps",
    "prepare_run",
    "run_simulation",
    "run_to_directory",
    "stream_rng",
    "write_outputs",
]
