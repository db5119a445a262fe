"""
Synthetic heterogeneous bus route.

Segments share a base traversal time; a few hotspot segments add a
truncated-Gaussian delay driven partly by a per-trip congestion level, and
a time-of-day wave shifts every segment of a trip.
"""

import logging
from typing import Tuple

import numpy as np

from ..config import SyntheticRouteConfig
from ..errors import ConfigurationError
from ..preprocessing.ingest import EARTH_RADIUS_M, GeoPoint, SegmentGrid, build_segment_grid
from ..preprocessing.interp import ArrivalMatrix
from ..utils import rng_stream

logger = logging.getLogger(__name__)

DAY_START = 6 * 3600.0
DAY_END = 22 * 3600.0
RUSH_PERIOD = 8 * 3600.0


def _equator_point(meters: float) -> GeoPoint:
    return GeoPoint(0.0, float(np.degrees(meters / EARTH_RADIUS_M)))


def _check(cfg: SyntheticRouteConfig) -> None:
    if cfg.seed is None:
        raise ConfigurationError("synthetic route needs a seed")
    if cfg.n_segments < 2 or cfg.spacing <= 0 or cfg.base_speed <= 0:
        raise ConfigurationError("n_segments >= 2, spacing > 0 and base_speed > 0 are required")
    if cfg.trips_train < 2 or cfg.trips_test < 2:
        raise ConfigurationError("trips_train and trips_test must both be at least 2")
    if min(cfg.hotspot_delay_std, cfg.base_noise_std) < 0:
        raise ConfigurationError("standard deviations must be non-negative")
    if any(not 0 <= h < cfg.n_segments for h in cfg.hotspot_indices):
        raise ConfigurationError(f"hotspot indices must lie in [0, {cfg.n_segments})")
    if cfg.stop_every < 1 or not 0 <= cfg.congestion_coupling <= 1:
        raise ConfigurationError("stop_every >= 1 and congestion_coupling in [0, 1] are required")


def synthetic_grid(cfg: SyntheticRouteConfig) -> SegmentGrid:
    """Straight equatorial route with a stop every `stop_every` points and at both ends."""
    n = cfg.n_segments
    stop_points = sorted(set(range(0, n + 1, cfg.stop_every)) | {n})
    clash = sorted(set(cfg.intersection_indices) & set(stop_points))
    if clash:
        raise ConfigurationError(f"intersection indices {clash} coincide with stops")
    stops = [(k * cfg.spacing, _equator_point(k * cfg.spacing)) for k in stop_points]
    intersections = [(k * cfg.spacing, _equator_point(k * cfg.spacing)) for k in sorted(cfg.intersection_indices)]
    return build_segment_grid(
        n * cfg.spacing, stops, intersections,
        spacing=cfg.spacing, route_id=cfg.route_id, default_line_count=cfg.line_count,
    )


def segment_increments(cfg: SyntheticRouteConfig, n_trips: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw per-segment traversal times.

    Returns:
        (departures in seconds of day, increments of shape (n_trips, n_segments))
    """
    n = cfg.n_segments
    hotspots = np.array(sorted(set(cfg.hotspot_indices)), dtype=int)
    departures = rng.uniform(DAY_START, DAY_END, size=n_trips)
    congestion = rng.standard_normal(n_trips)
    noise = cfg.base_noise_std * rng.standard_normal((n_trips, n))
    own = rng.standard_normal((n_trips, hotspots.size))

    base = cfg.spacing / cfg.base_speed
    wave = cfg.time_of_day_effect * np.sin(2 * np.pi * (departures - DAY_START) / RUSH_PERIOD)
    increments = base + noise + wave[:, None]

    if hotspots.size:
        coupling = cfg.congestion_coupling
        shock = coupling * congestion[:, None] + np.sqrt(1.0 - coupling ** 2) * own
        delay = np.maximum(cfg.hotspot_delay_mean + cfg.hotspot_delay_std * shock, 0.0)
        increments[:, hotspots] += delay
    return departures, np.maximum(increments, 0.0)


def generate_synthetic_route(cfg: SyntheticRouteConfig) -> Tuple[SegmentGrid, ArrivalMatrix, ArrivalMatrix]:
    """
    Build the route and draw train and test trips.

    Args:
        cfg: Generator parameters; cfg.seed is required

    Returns:
        (grid, train, test)

    Raises:
        ConfigurationError: On invalid parameters
    """
    _check(cfg)
    grid = synthetic_grid(cfg)
    total = cfg.trips_train + cfg.trips_test
    departures, increments = segment_increments(cfg, total, rng_stream(int(cfg.seed), "generator"))
    times = np.concatenate([np.zeros((total, 1)), np.cumsum(increments, axis=1)], axis=1)
    trip_ids = tuple(f"syn-{v:04d}" for v in range(total))

    def part(lo, hi):
        return ArrivalMatrix(times[lo:hi], trip_ids[lo:hi], grid.digest, tuple(grid.distances), departures[lo:hi])

    logger.info("Generated %d train / %d test trips on %s", cfg.trips_train, cfg.trips_test, grid.route_id)
    return grid, part(0, cfg.trips_train), part(cfg.trips_train, total)
