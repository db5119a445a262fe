"""
Trajectory preprocessing.

This module provides:
- Trajectory parsing and the segment grid
- Kriging interpolation onto the grid
"""

from .ingest import (
    GeoPoint, GpsFix, Journey, RoadSegment, SegmentGrid, SegmentKind,
    build_segment_grid, cumulative_distance, load_route, parse_trajectories, save_route,
)
from .interp import (
    ArrivalMatrix, VariogramModel, build_arrival_matrix, enforce_monotone, fit_variogram,
    interpolate_linear, krige_arrival_times, load_arrival_matrix, save_arrival_matrix,
)

__all__ = [
    "GeoPoint",
    "GpsFix",
    "Journey",
    "RoadSegment",
    "SegmentGrid",
    "SegmentKind",
    "build_segment_grid",
    "cumulative_distance",
    "load_route",
    "parse_trajectories",
    "save_route",
    "ArrivalMatrix",
    "VariogramModel",
    "build_arrival_matrix",
    "enforce_monotone",
    "fit_variogram",
    "interpolate_linear",
    "krige_arrival_times",
    "load_arrival_matrix",
    "save_arrival_matrix",
]
