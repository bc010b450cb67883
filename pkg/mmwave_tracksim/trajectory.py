from __future__ import annotations

import math
from dataclasses import dataclass

from .config import SimulationConfig

BS_POSITION: tuple[float, float] = (0.0, 0.0)
HEXAGON_SEGMENTS = 3
HEXAGON_TURN = math.pi / 3
# Guards floor(track_length / update_distance) against 0.3 / 0.1 = 2.999...
COUNT_EPS = 1e-9


@dataclass(frozen=True)
class TrackSegment:
    start: tuple[float, float]
    heading: float
    length: float

    def point_at(self, offset: float) -> tuple[float, float]:
        return (
            self.start[0] + offset * math.cos(self.heading),
            self.start[1] + offset * math.sin(self.heading),
        )

    @property
    def end(self) -> tuple[float, float]:
        return self.point_at(self.length)


@dataclass(frozen=True)
class TrackPoint:
    time: float
    position: tuple[float, float]
    heading: float
    arc_length: float


@dataclass(frozen=True)
class Trajectory:
    points: tuple[TrackPoint, ...]
    update_interval: float
    segments: tuple[TrackSegment, ...]

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, index: int) -> TrackPoint:
        return self.points[index]

    @property
    def positions(self) -> list[tuple[float, float]]:
        return [p.position for p in self.points]

    @property
    def times(self) -> list[float]:
        return [p.time for p in self.points]

    @property
    def track_length(self) -> float:
        return sum(seg.length for seg in self.segments)

    def locate(self, arc_length: float) -> tuple[tuple[float, float], float]:
        return locate_on_track(self.segments, arc_length)


def point_count(track_length: float, update_distance: float) -> int:
    return int(math.floor(track_length / update_distance + COUNT_EPS))


def build_segments(config: SimulationConfig) -> tuple[TrackSegment, ...]:
    distance = config.tr_separation_2d
    if config.track == "linear":
        start = (BS_POSITION[0] + distance, BS_POSITION[1])
        return (TrackSegment(start, config.track_heading, config.track_length),)

    # Three sides of a regular hexagon whose middle side is perpendicular to the
    # BS axis, so the BS sits on the route's mirror line.
    side = config.track_length / HEXAGON_SEGMENTS
    sign = 1.0 if config.turn_direction == "left" else -1.0
    x0 = math.sqrt(max(distance * distance - side * side, 0.0))
    start = (BS_POSITION[0] + x0, BS_POSITION[1] - sign * side)
    segments = []
    heading = sign * math.pi / 6
    for _ in range(HEXAGON_SEGMENTS):
        segment = TrackSegment(start, heading, side)
        segments.append(segment)
        start = segment.end
        heading += sign * HEXAGON_TURN
    return tuple(segments)


def locate_on_track(
    segments: tuple[TrackSegment, ...], arc_length: float
) -> tuple[tuple[float, float], float]:
    remaining = arc_length
    for index, segment in enumerate(segments):
        last = index == len(segments) - 1
        if remaining < segment.length or last:
            return segment.point_at(remaining), segment.heading
        remaining -= segment.length
    raise ValueError("track has no segments")


def generate_trajectory(config: SimulationConfig) -> Trajectory:
    segments = build_segments(config)
    count = point_count(config.track_length, config.update_distance)
    interval = config.update_interval
    points = []
    for k in range(count):
        arc = k * config.update_distance
        position, heading = locate_on_track(segments, arc)
        points.append(TrackPoint(time=k * interval, position=position, heading=heading, arc_length=arc))
    return Trajectory(points=tuple(points), update_interval=interval, segments=segments)


def distance_2d(position: tuple[float, float], bs_position: tuple[float, float] = BS_POSITION) -> float:
    return math.hypot(position[0] - bs_position[0], position[1] - bs_position[1])


def distance_3d(d_2d: float, bs_height: float, ut_height: float) -> float:
    return math.hypot(d_2d, bs_height - ut_height)


__all__ = [
    "BS_POSITION",
    "TrackPoint",
    "TrackSegment",
    "Trajectory",
    "build_segments",
    "distance_2d",
    "distance_3d",
    "generate_trajectory",
    "locate_on_track",
    "point_count",
]
