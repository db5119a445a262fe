"""
Trajectory Ingestion

This module parses raw GPS trajectory files into journeys, turns journeys
into distance-time pairs and builds the uniform segment grid of a route.
"""

import io
import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from ..errors import ConfigurationError, DataError, TrajectoryParseError
from ..utils import digest

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_TAU = 300.0
DEFAULT_SPACING = 100.0
TRAJECTORY_COLUMNS = ("trip_id", "lat", "lon", "timestamp")

_NON_FINITE_LITERALS = {
    "nan", "+nan", "-nan", "inf", "+inf", "-inf",
    "infinity", "+infinity", "-infinity",
}


@dataclass(frozen=True)
class GeoPoint:
    """A WGS-84 coordinate in degrees."""
    lat: float
    lon: float

    def __post_init__(self):
        if not (np.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
            raise DataError(f"latitude {self.lat} outside [-90, 90]")
        if not (np.isfinite(self.lon) and -180.0 <= self.lon <= 180.0):
            raise DataError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class GpsFix:
    """A single GPS sample."""
    point: GeoPoint
    timestamp: float

    def __post_init__(self):
        if not np.isfinite(self.timestamp) or self.timestamp < 0:
            raise DataError(f"timestamp {self.timestamp} must be finite and non-negative")


@dataclass(frozen=True)
class Journey:
    """A maximal run of fixes of one trip whose sampling gaps stay within tau."""
    trip_id: str
    fixes: Tuple[GpsFix, ...]
    tau: float
    part: int = 0

    def __post_init__(self):
        stamps = [fix.timestamp for fix in self.fixes]
        for previous, current in zip(stamps, stamps[1:]):
            gap = current - previous
            if not 0 < gap <= self.tau:
                raise DataError(
                    f"journey {self.trip_id}: gap {gap} s outside (0, {self.tau}]"
                )

    @property
    def label(self) -> str:
        """Row label: the trip id for the first run, trip_id.part afterwards."""
        return self.trip_id if self.part == 0 else f"{self.trip_id}.{self.part}"

    @property
    def start_time(self) -> float:
        return self.fixes[0].timestamp

    def __len__(self) -> int:
        return len(self.fixes)


class SegmentKind(Enum):
    """Position type of a grid element."""
    STOP = "stop"
    INTERSECTION = "intersection"
    INTERPOLATED = "interpolated"


@dataclass(frozen=True)
class RoadSegment:
    """One element of the discretized route."""
    id: int
    start: GeoPoint
    end: GeoPoint
    kind: SegmentKind
    cum_distance: float
    line_count: int = 1

    @property
    def is_landmark(self) -> bool:
        return self.kind is not SegmentKind.INTERPOLATED


@dataclass(frozen=True)
class SegmentGrid:
    """Ordered discretization of one route."""
    route_id: str
    segments: Tuple[RoadSegment, ...]
    spacing: float = DEFAULT_SPACING
    route_length: Optional[float] = None

    def __post_init__(self):
        if not self.segments:
            raise ConfigurationError("segment grid is empty")
        distances = [s.cum_distance for s in self.segments]
        if distances[0] != 0:
            raise ConfigurationError("first segment must sit at cum_distance 0")
        if any(b <= a for a, b in zip(distances, distances[1:])):
            raise ConfigurationError("segment cum_distance must be strictly increasing")
        if self.route_length is None:
            object.__setattr__(self, "route_length", distances[-1])

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def distances(self) -> np.ndarray:
        return np.array([s.cum_distance for s in self.segments], dtype=float)

    @property
    def last_index(self) -> int:
        return len(self.segments) - 1

    def indices_of(self, *kinds: SegmentKind) -> List[int]:
        return [i for i, s in enumerate(self.segments) if s.kind in kinds]

    @property
    def stop_indices(self) -> List[int]:
        return self.indices_of(SegmentKind.STOP)

    @property
    def landmark_indices(self) -> List[int]:
        return self.indices_of(SegmentKind.STOP, SegmentKind.INTERSECTION)

    @property
    def interpolation_indices(self) -> List[int]:
        return self.indices_of(SegmentKind.INTERPOLATED)

    def landmarks(self) -> Tuple[list, list]:
        """Stops and intersections as (cum_distance, GeoPoint, line_count) triples."""
        stops, intersections = [], []
        for s in self.segments:
            if s.kind is SegmentKind.STOP:
                stops.append((s.cum_distance, s.start, s.line_count))
            elif s.kind is SegmentKind.INTERSECTION:
                intersections.append((s.cum_distance, s.start, s.line_count))
        return stops, intersections

    @property
    def digest(self) -> str:
        """Identity of the grid used to tie arrival matrices to it."""
        return digest({
            "route_id": self.route_id,
            "distances": [float(d) for d in self.distances],
            "kinds": [s.kind.value for s in self.segments],
        })


class TrajectoryParser:
    """Parser for delimited trajectory text with columns trip_id,lat,lon,timestamp."""

    def __init__(self, content: str):
        """
        Initialize the parser with the raw file content.

        Args:
            content: Delimited text including the header row
        """
        self.content = content
        self.rejected_fixes = 0

    def read_frame(self) -> pd.DataFrame:
        """
        Read and validate the rows.

        Returns:
            DataFrame with typed columns plus the 1-based source line number

        Raises:
            TrajectoryParseError: On a malformed row
        """
        empty = pd.DataFrame(columns=list(TRAJECTORY_COLUMNS) + ["line"])
        if not self.content.strip():
            return empty
        try:
            frame = pd.read_csv(
                io.StringIO(self.content),
                dtype=str,
                keep_default_na=False,
                skip_blank_lines=False,
                skipinitialspace=True,
            )
        except pd.errors.EmptyDataError:
            return empty
        except pd.errors.ParserError as exc:
            match = re.search(r"line (\d+)", str(exc))
            line = int(match.group(1)) if match else 0
            raise TrajectoryParseError(line, "unexpected number of fields") from exc

        frame.columns = [str(c).strip() for c in frame.columns]
        missing = [c for c in TRAJECTORY_COLUMNS if c not in frame.columns]
        if missing:
            raise TrajectoryParseError(1, f"header lacks column(s) {', '.join(missing)}")

        frame = frame[list(TRAJECTORY_COLUMNS)].fillna("").astype(str)
        frame = frame.apply(lambda col: col.str.strip())
        frame["line"] = np.arange(len(frame)) + 2
        blank = (frame[list(TRAJECTORY_COLUMNS)] == "").all(axis=1)
        frame = frame[~blank]
        if frame.empty:
            return empty

        no_trip = frame["trip_id"] == ""
        if no_trip.any():
            raise TrajectoryParseError(int(frame.loc[no_trip, "line"].iloc[0]), "empty trip_id")

        for column in ("lat", "lon", "timestamp"):
            raw = frame[column]
            values = pd.to_numeric(raw, errors="coerce")
            bad = values.isna() & ~raw.str.lower().isin(_NON_FINITE_LITERALS)
            if bad.any():
                row = frame[bad].iloc[0]
                raise TrajectoryParseError(
                    int(row["line"]), f"{column} value {row[column]!r} is not a number"
                )
            frame[column] = values.astype(float)

        stamps = frame["timestamp"].to_numpy()
        bad_time = ~np.isfinite(stamps) | (stamps < 0)
        if bad_time.any():
            line = int(frame["line"].to_numpy()[bad_time][0])
            raise TrajectoryParseError(line, "timestamp must be finite and non-negative")

        lat = frame["lat"].to_numpy()
        lon = frame["lon"].to_numpy()
        non_finite = ~(np.isfinite(lat) & np.isfinite(lon))
        self.rejected_fixes = int(non_finite.sum())
        if self.rejected_fixes:
            logger.warning("Rejected %d fixes with non-finite coordinates", self.rejected_fixes)
        frame = frame[~non_finite]

        out_of_range = (frame["lat"].abs() > 90) | (frame["lon"].abs() > 180)
        if out_of_range.any():
            line = int(frame.loc[out_of_range, "line"].iloc[0])
            raise TrajectoryParseError(line, "coordinate outside WGS-84 range")

        return frame

    def journeys(self, tau: float) -> List[Journey]:
        """
        Group fixes into journeys.

        Args:
            tau: Maximum sampling gap in seconds

        Returns:
            Journeys ordered by first appearance of their trip, then by part
        """
        frame = self.read_frame()
        result: List[Journey] = []
        if frame.empty:
            return result

        duplicates = 0
        for trip_id, group in frame.groupby("trip_id", sort=False):
            group = group.sort_values("timestamp", kind="stable")
            deduped = group.drop_duplicates(subset="timestamp", keep="first")
            duplicates += len(group) - len(deduped)

            stamps = deduped["timestamp"].to_numpy()
            breaks = np.flatnonzero(np.diff(stamps) > tau) + 1
            bounds = [0, *breaks.tolist(), len(deduped)]
            for part, (lo, hi) in enumerate(zip(bounds, bounds[1:])):
                chunk = deduped.iloc[lo:hi]
                fixes = tuple(
                    GpsFix(GeoPoint(float(r.lat), float(r.lon)), float(r.timestamp))
                    for r in chunk.itertuples(index=False)
                )
                result.append(Journey(str(trip_id), fixes, float(tau), part))

        if duplicates:
            logger.info("Collapsed %d fixes with duplicate timestamps", duplicates)
        return result


def parse_trajectories(raw: Union[TextIO, str], tau: float = DEFAULT_TAU) -> List[Journey]:
    """
    Parse a trajectory stream into journeys.

    Args:
        raw: Text stream (or its content) with header trip_id,lat,lon,timestamp
        tau: Sampling-gap threshold in seconds

    Returns:
        List of Journey objects

    Raises:
        ConfigurationError: If tau is not positive
        TrajectoryParseError: On a malformed row
    """
    if not tau > 0:
        raise ConfigurationError(f"tau must be positive, got {tau}")
    content = raw if isinstance(raw, str) else raw.read()
    return TrajectoryParser(content).journeys(tau)


def parse_trajectory_file(filepath: Union[str, Path], tau: float = DEFAULT_TAU) -> List[Journey]:
    """Parse a trajectory file from disk."""
    with open(filepath, "r", encoding="utf-8") as f:
        return parse_trajectories(f, tau)


def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters; accepts scalars or numpy arrays."""
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def cumulative_distance(journey: Journey) -> List[Tuple[float, float]]:
    """
    Convert a journey into distance-time pairs.

    Args:
        journey: Non-empty journey

    Returns:
        (meters travelled, seconds since the first fix) per fix
    """
    if len(journey) == 0:
        raise DataError(f"journey {journey.trip_id} has no fixes")
    lat = np.array([f.point.lat for f in journey.fixes])
    lon = np.array([f.point.lon for f in journey.fixes])
    stamps = np.array([f.timestamp for f in journey.fixes])
    hops = haversine(lat[:-1], lon[:-1], lat[1:], lon[1:])
    distances = np.concatenate([[0.0], np.cumsum(hops)])
    elapsed = stamps - stamps[0]
    return [(float(d), float(t)) for d, t in zip(distances, elapsed)]


def _unpack_landmark(entry) -> Tuple[float, GeoPoint, Optional[int]]:
    if len(entry) == 3:
        position, point, line_count = entry
        return float(position), point, None if line_count is None else int(line_count)
    position, point = entry
    return float(position), point, None


def build_segment_grid(
    route_length: float,
    stops: Sequence[tuple],
    intersections: Sequence[tuple] = (),
    spacing: float = DEFAULT_SPACING,
    route_id: str = "route",
    default_line_count: int = 1,
) -> SegmentGrid:
    """
    Discretize a route into stops, intersections and interpolated points.

    Interpolated points sit on multiples of `spacing`. One closer than
    spacing/2 to a landmark or to a route endpoint is dropped. The origin and
    the terminus are always present.

    Args:
        route_length: Route length in meters
        stops: (cum_distance, GeoPoint[, line_count]) entries
        intersections: Same layout as stops
        spacing: Interpolation spacing in meters
        route_id: Route identifier
        default_line_count: Line count for points without their own value

    Returns:
        SegmentGrid sorted by cum_distance

    Raises:
        ConfigurationError: On bad lengths or two landmarks at one position
    """
    if not route_length > 0:
        raise ConfigurationError(f"route_length must be positive, got {route_length}")
    if not spacing > 0:
        raise ConfigurationError(f"spacing must be positive, got {spacing}")

    landmarks: Dict[float, Tuple[GeoPoint, SegmentKind, int]] = {}
    for kind, entries in ((SegmentKind.STOP, stops), (SegmentKind.INTERSECTION, intersections)):
        for entry in entries:
            position, point, line_count = _unpack_landmark(entry)
            if not 0 <= position <= route_length:
                raise ConfigurationError(
                    f"{kind.value} at {position} m lies outside [0, {route_length}]"
                )
            if position in landmarks:
                raise ConfigurationError(f"two landmarks at cum_distance {position} m")
            landmarks[position] = (point, kind, default_line_count if line_count is None else line_count)

    anchors = sorted(set(landmarks) | {0.0, float(route_length)})
    anchor_array = np.array(anchors)
    points = set(anchors)
    for k in range(1, int(np.floor(route_length / spacing)) + 1):
        candidate = k * spacing
        if candidate >= route_length:
            break
        if np.min(np.abs(anchor_array - candidate)) < spacing / 2:
            continue
        points.add(float(candidate))
    positions = sorted(points)

    known = sorted(landmarks)
    if known:
        lats = np.interp(positions, known, [landmarks[p][0].lat for p in known])
        lons = np.interp(positions, known, [landmarks[p][0].lon for p in known])
    else:
        logger.debug("Route %s has no landmarks; interpolated points get (0, 0)", route_id)
        lats = np.zeros(len(positions))
        lons = np.zeros(len(positions))

    coords = []
    for position, lat, lon in zip(positions, lats, lons):
        coords.append(landmarks[position][0] if position in landmarks else GeoPoint(float(lat), float(lon)))

    segments = []
    for i, position in enumerate(positions):
        kind, line_count = SegmentKind.INTERPOLATED, default_line_count
        if position in landmarks:
            _, kind, line_count = landmarks[position]
        end = coords[i + 1] if i + 1 < len(coords) else coords[i]
        segments.append(RoadSegment(i, coords[i], end, kind, float(position), int(line_count)))

    return SegmentGrid(route_id, tuple(segments), float(spacing), float(route_length))


def load_route(filepath: Union[str, Path]) -> SegmentGrid:
    """
    Load a route description document and build its grid.

    Args:
        filepath: YAML file with route_id, route_length, spacing, line_count,
            stops and intersections (cum_distance, lat, lon, optional line_count)

    Returns:
        SegmentGrid
    """
    with open(filepath, "r", encoding="utf-8") as f:
        doc = yaml.safe_load(f) or {}
    try:
        def entries(key):
            return [
                (float(e["cum_distance"]), GeoPoint(float(e["lat"]), float(e["lon"])), e.get("line_count"))
                for e in doc.get(key) or []
            ]

        return build_segment_grid(
            float(doc["route_length"]),
            entries("stops"),
            entries("intersections"),
            spacing=float(doc.get("spacing", DEFAULT_SPACING)),
            route_id=str(doc.get("route_id", Path(filepath).stem)),
            default_line_count=int(doc.get("line_count", 1)),
        )
    except KeyError as exc:
        raise ConfigurationError(f"route file {filepath} lacks key {exc}") from exc


def save_route(grid: SegmentGrid, filepath: Union[str, Path]) -> None:
    """Write the route description that rebuilds `grid`."""
    stops, intersections = grid.landmarks()
    interpolated = [s.line_count for s in grid.segments if not s.is_landmark]
    default_line_count = interpolated[0] if interpolated else 1

    def entries(items):
        return [
            {"cum_distance": float(d), "lat": p.lat, "lon": p.lon, "line_count": int(c)}
            for d, p, c in items
        ]

    doc = {
        "route_id": grid.route_id,
        "route_length": float(grid.route_length),
        "spacing": float(grid.spacing),
        "line_count": int(default_line_count),
        "stops": entries(stops),
        "intersections": entries(intersections),
    }
    with open(filepath, "w", encoding="utf-8") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


if __name__ == '__main__':
    # Example usage
    sample = """trip_id,lat,lon,timestamp
A,0.0,0.0000,0
A,0.0,0.0009,60
A,0.0,0.0018,120
A,0.0,0.0027,520
A,0.0,0.0036,580
"""
    journeys = parse_trajectories(sample, tau=300)
    print("Journeys:", [(j.label, len(j)) for j in journeys])
    print("Pairs:", cumulative_distance(journeys[0]))
    grid = build_segment_grid(500, [(240, GeoPoint(0.0, 0.0022))], spacing=100)
    print("Grid:", [s.cum_distance for s in grid.segments])
