from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .scenarios import SCENARIO_NAMES, resolve_scenario, resolve_scenario_alias

TRACK_SHAPES = ("linear", "half_hexagon")
TURN_DIRECTIONS = ("left", "right")
LOS_MODES = ("map", "los", "nlos")
REFLECTION_MODES = ("subpath", "cluster")

MIN_CARRIER_FREQUENCY_HZ = 0.8e9
MAX_CARRIER_FREQUENCY_HZ = 100e9
MAX_UPDATE_DISTANCE_M = 1.0
MAX_SEED = 2**64

SECTION_KEYS: dict[str, tuple[str, ...]] = {
    "scenario": (
        "scenario",
        "carrier_frequency",
        "tx_power_dbm",
        "bs_height",
        "ut_height",
        "exponent_los",
        "exponent_nlos",
        "sf_sigma_los",
        "sf_sigma_nlos",
        "los_mode",
    ),
    "trajectory": (
        "tr_separation_2d",
        "ut_speed",
        "track",
        "track_heading",
        "turn_direction",
        "track_length",
        "update_distance",
    ),
    "maps": (
        "correlation_distance_los",
        "correlation_distance_sf",
        "map_extent",
        "map_resolution",
        "los_map_resolution",
        "sf_map_extent",
    ),
    "drop": (
        "min_clusters",
        "max_clusters",
        "min_subpaths",
        "max_subpaths",
        "mean_cluster_delay_los_ns",
        "mean_cluster_delay_nlos_ns",
        "cluster_void_ns",
        "subpath_spacing_ns",
        "subpath_delay_skew",
        "cluster_decay_ns",
        "subpath_decay_ns",
        "sigma_cluster_db",
        "sigma_subpath_db",
        "azimuth_lobe_spread",
        "zenith_spread",
        "reflection_angles",
    ),
    "run": ("rng_seed",),
}

EXTENT_KEYS = ("map_extent", "sf_map_extent")


@dataclass(frozen=True)
class SimulationConfig:
    # scenario
    scenario: str = "UMi"
    carrier_frequency: float = 73e9
    tx_power_dbm: float = 30.0
    bs_height: float | None = None
    ut_height: float = 1.5
    exponent_los: float = 2.0
    exponent_nlos: float = 3.2
    sf_sigma_los: float = 4.0
    sf_sigma_nlos: float = 7.0
    los_mode: str = "map"
    # trajectory
    tr_separation_2d: float = 50.0
    ut_speed: float = 1.0
    track: str = "half_hexagon"
    track_heading: float = 0.0
    turn_direction: str = "left"
    track_length: float = 20.0
    update_distance: float = 0.25
    # maps
    correlation_distance_los: float | None = None
    correlation_distance_sf: float = 15.0
    map_extent: tuple[float, float] = (200.0, 200.0)
    map_resolution: float = 1.0
    los_map_resolution: float = 2.0
    sf_map_extent: tuple[float, float] = (50.0, 50.0)
    # drop
    min_clusters: int = 1
    max_clusters: int = 6
    min_subpaths: int = 1
    max_subpaths: int = 30
    mean_cluster_delay_los_ns: float = 123.0
    mean_cluster_delay_nlos_ns: float = 83.0
    cluster_void_ns: float = 25.0
    subpath_spacing_ns: float = 1.25
    subpath_delay_skew: float = 0.43
    cluster_decay_ns: float = 49.4
    subpath_decay_ns: float = 16.9
    sigma_cluster_db: float = 3.0
    sigma_subpath_db: float = 3.0
    azimuth_lobe_spread: float = 0.15
    zenith_spread: float = 0.1
    reflection_angles: str = "subpath"
    # run
    rng_seed: int | None = None

    @property
    def update_interval(self) -> float:
        return self.update_distance / self.ut_speed

    @property
    def resolved_bs_height(self) -> float:
        if self.bs_height is not None:
            return self.bs_height
        return float(resolve_scenario(self.scenario).default_parameters()["bs_height"])

    @property
    def resolved_correlation_distance_los(self) -> float:
        if self.correlation_distance_los is not None:
            return self.correlation_distance_los
        defaults = resolve_scenario(self.scenario).default_parameters()
        return float(defaults["correlation_distance_los"])


@dataclass(frozen=True)
class Violation:
    field: str
    reason: str

    def __str__(self) -> str:
        return f"{self.field}: {self.reason}"


class ConfigError(ValueError):
    def __init__(self, violations: Iterable[Violation]) -> None:
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"Invalid simulation config:\n{lines}")

    def __reduce__(self):
        return type(self), (self.violations,)


def _load_toml() -> Any:
    try:
        import tomllib  # type: ignore[attr-defined]

        return tomllib
    except ModuleNotFoundError:
        import tomli  # type: ignore[import-not-found]

        return tomli


def known_keys() -> set[str]:
    return {key for keys in SECTION_KEYS.values() for key in keys}


def _coerce_value(key: str, value: Any) -> Any:
    if key in EXTENT_KEYS and isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return value


def config_from_mapping(values: dict[str, Any]) -> SimulationConfig:
    allowed = known_keys()
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigError(Violation(key, "unknown config key") for key in unknown)
    kwargs = {key: _coerce_value(key, value) for key, value in values.items()}
    return SimulationConfig(**kwargs)


def flatten_sections(data: dict[str, Any]) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    violations: list[Violation] = []
    for section, body in data.items():
        keys = SECTION_KEYS.get(section)
        if keys is None or not isinstance(body, dict):
            violations.append(Violation(section, "unknown config section"))
            continue
        for key, value in body.items():
            if key not in keys:
                violations.append(Violation(f"{section}.{key}", "unknown config key"))
                continue
            flat[key] = value
    if violations:
        raise ConfigError(violations)
    return flat


def load_config(path: Path) -> SimulationConfig:
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        data = json.loads(text)
        embedded = data.get("config", data)
        if not isinstance(embedded, dict):
            raise ConfigError([Violation("config", f"no config object in {path}")])
        return config_from_mapping(embedded)
    toml = _load_toml()
    return config_from_mapping(flatten_sections(toml.loads(text)))


def parse_override(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError([Violation(text, "override must look like key=value")])
    raw = raw.strip()
    toml = _load_toml()
    try:
        value = toml.loads(f"value = {raw}")["value"]
    except Exception:
        value = raw
    return key, value


def apply_overrides(config: SimulationConfig, overrides: Iterable[str]) -> SimulationConfig:
    values = config_to_dict(config)
    for item in overrides:
        key, value = parse_override(item)
        values[key] = value
    return config_from_mapping(values)


def config_to_dict(config: SimulationConfig) -> dict[str, Any]:
    data = dataclasses.asdict(config)
    for key in EXTENT_KEYS:
        data[key] = list(data[key])
    return data


def resolve_config(config: SimulationConfig) -> SimulationConfig:
    """Fill scenario-dependent defaults so the config alone reproduces a run."""
    return dataclasses.replace(
        config,
        scenario=resolve_scenario_alias(config.scenario),
        bs_height=config.resolved_bs_height,
        correlation_distance_los=config.resolved_correlation_distance_los,
    )


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _check_positive(config: SimulationConfig, names: Iterable[str]) -> list[Violation]:
    out = []
    for name in names:
        value = getattr(config, name)
        if value is None:
            continue
        if not _is_number(value):
            out.append(Violation(name, "must be a finite number"))
        elif value <= 0:
            out.append(Violation(name, "must be positive"))
    return out


def _check_non_negative(config: SimulationConfig, names: Iterable[str]) -> list[Violation]:
    out = []
    for name in names:
        value = getattr(config, name)
        if not _is_number(value):
            out.append(Violation(name, "must be a finite number"))
        elif value < 0:
            out.append(Violation(name, "must not be negative"))
    return out


def _check_choice(value: Any, name: str, choices: Iterable[str]) -> list[Violation]:
    options = list(choices)
    if not isinstance(value, str) or value not in options:
        return [Violation(name, f"must be one of {options}, got {value!r}")]
    return []


def _check_extent(value: Any, name: str) -> list[Violation]:
    if (
        not isinstance(value, tuple)
        or len(value) != 2
        or not all(_is_number(v) and v > 0 for v in value)
    ):
        return [Violation(name, "must be two positive lengths in meters")]
    return []


def _check_los_extent(
    config: SimulationConfig, positions: list[tuple[float, float]]
) -> list[Violation]:
    from .fields import GridSpec, los_map_center
    from .trajectory import BS_POSITION

    margin = config.resolved_correlation_distance_los
    grid = GridSpec.from_center(
        los_map_center(BS_POSITION, positions), config.map_extent, config.los_map_resolution
    )
    out = []
    if not grid.contains(BS_POSITION, margin=margin):
        out.append(Violation("map_extent", f"must contain the BS with a {margin:g} m margin"))
    if not all(grid.contains(p, margin=margin) for p in positions):
        out.append(
            Violation(
                "map_extent",
                f"must contain every trajectory point with a {margin:g} m margin",
            )
        )
    return out


def _check_geometry(config: SimulationConfig) -> list[Violation]:
    from .fields import GridSpec, sf_map_center
    from .trajectory import BS_POSITION, generate_trajectory

    trajectory = generate_trajectory(config)
    positions = trajectory.positions
    out: list[Violation] = []

    if config.los_mode == "map":
        out += _check_los_extent(config, positions)

    sf_grid = GridSpec.from_center(
        sf_map_center(trajectory), config.sf_map_extent, config.map_resolution
    )
    if not all(sf_grid.contains(p) for p in positions):
        out.append(Violation("sf_map_extent", "must contain every trajectory point"))

    height_gap = config.resolved_bs_height - config.ut_height
    d_2d = [math.hypot(p[0] - BS_POSITION[0], p[1] - BS_POSITION[1]) for p in positions]
    if min(math.hypot(d, height_gap) for d in d_2d) < 1.0:
        out.append(Violation("tr_separation_2d", "every track point needs d_3D >= 1 m"))
    if min(d_2d) <= 0.0:
        out.append(Violation("tr_separation_2d", "track passes through the BS position"))
    return out


def check_config(config: SimulationConfig) -> list[Violation]:
    out: list[Violation] = []
    if not isinstance(config.scenario, str) or resolve_scenario_alias(config.scenario) not in SCENARIO_NAMES:
        out.append(Violation("scenario", f"must be one of {list(SCENARIO_NAMES)}"))
    out += _check_choice(config.track, "track", TRACK_SHAPES)
    out += _check_choice(config.turn_direction, "turn_direction", TURN_DIRECTIONS)
    out += _check_choice(config.los_mode, "los_mode", LOS_MODES)
    out += _check_choice(config.reflection_angles, "reflection_angles", REFLECTION_MODES)

    if not _is_number(config.carrier_frequency) or not (
        MIN_CARRIER_FREQUENCY_HZ <= config.carrier_frequency <= MAX_CARRIER_FREQUENCY_HZ
    ):
        out.append(Violation("carrier_frequency", "must be within 0.8-100 GHz"))

    out += _check_positive(
        config,
        (
            "tr_separation_2d",
            "bs_height",
            "ut_height",
            "ut_speed",
            "track_length",
            "update_distance",
            "correlation_distance_los",
            "correlation_distance_sf",
            "map_resolution",
            "los_map_resolution",
            "exponent_los",
            "exponent_nlos",
            "mean_cluster_delay_los_ns",
            "mean_cluster_delay_nlos_ns",
            "subpath_spacing_ns",
            "cluster_decay_ns",
            "subpath_decay_ns",
        ),
    )
    out += _check_non_negative(
        config,
        (
            "sf_sigma_los",
            "sf_sigma_nlos",
            "cluster_void_ns",
            "subpath_delay_skew",
            "sigma_cluster_db",
            "sigma_subpath_db",
            "azimuth_lobe_spread",
            "zenith_spread",
        ),
    )
    if not _is_number(config.track_heading):
        out.append(Violation("track_heading", "must be a finite number"))
    if not _is_number(config.tx_power_dbm):
        out.append(Violation("tx_power_dbm", "must be a finite number"))
    if _is_number(config.update_distance) and config.update_distance > MAX_UPDATE_DISTANCE_M:
        out.append(Violation("update_distance", "exceeds 1 m"))
    if (
        _is_number(config.update_distance)
        and _is_number(config.track_length)
        and 0 < config.track_length < config.update_distance
    ):
        out.append(Violation("track_length", "must be at least one update_distance"))
    if (
        config.track == "half_hexagon"
        and _is_number(config.track_length)
        and _is_number(config.tr_separation_2d)
        and config.tr_separation_2d <= config.track_length / 3
    ):
        out.append(
            Violation("tr_separation_2d", "must exceed one hexagon side (track_length / 3)")
        )
    out += _check_extent(config.map_extent, "map_extent")
    out += _check_extent(config.sf_map_extent, "sf_map_extent")

    for low, high in (("min_clusters", "max_clusters"), ("min_subpaths", "max_subpaths")):
        lo, hi = getattr(config, low), getattr(config, high)
        if not isinstance(lo, int) or isinstance(lo, bool) or lo < 1:
            out.append(Violation(low, "must be an integer >= 1"))
        elif not isinstance(hi, int) or isinstance(hi, bool) or hi < lo:
            out.append(Violation(high, f"must be an integer >= {low}"))

    seed = config.rng_seed
    if seed is None:
        out.append(Violation("rng_seed", "is required (config [run] section or --seed)"))
    elif not isinstance(seed, int) or isinstance(seed, bool) or not (0 <= seed < MAX_SEED):
        out.append(Violation("rng_seed", "must be an integer in [0, 2**64)"))

    if not out:
        out += _check_geometry(config)
    return out


def validate_config(config: SimulationConfig) -> SimulationConfig:
    violations = check_config(config)
    if violations:
        raise ConfigError(violations)
    return config


__all__ = [
    "ConfigError",
    "LOS_MODES",
    "REFLECTION_MODES",
    "SECTION_KEYS",
    "SimulationConfig",
    "TRACK_SHAPES",
    "TURN_DIRECTIONS",
    "Violation",
    "apply_overrides",
    "check_config",
    "config_from_mapping",
    "config_to_dict",
    "load_config",
    "parse_override",
    "resolve_config",
    "validate_config",
]
