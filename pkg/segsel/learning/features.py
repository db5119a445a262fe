"""
Segment Feature Coding

Encodes every grid point into an 8-dimensional feature vector and assembles
the selection state the policy network consumes.
"""

from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigurationError
from ..preprocessing.ingest import SegmentGrid, SegmentKind
from ..preprocessing.interp import ArrivalMatrix

FEATURE_DIM = 8
NUMERIC_DIMS = 5
FEATURE_NAMES = (
    "depart_time", "travel_time", "dist_from_start", "dist_next", "line_count",
    "is_stop", "is_intersection", "is_interpolated",
)

ONE_HOT = {
    SegmentKind.STOP: (1, 0, 0),
    SegmentKind.INTERSECTION: (0, 1, 0),
    SegmentKind.INTERPOLATED: (0, 0, 1),
}


@dataclass(frozen=True)
class SegmentFeature:
    """Feature vector of one grid point for one trip."""
    depart_time: float
    travel_time: float
    dist_from_start: float
    dist_next: float
    line_count: float
    ohc: Tuple[int, int, int]

    def __post_init__(self):
        if sorted(self.ohc) != [0, 0, 1]:
            raise ConfigurationError(f"one-hot code must have exactly one 1, got {self.ohc}")
        if self.dist_next < self.dist_from_start:
            raise ConfigurationError("dist_next must not be smaller than dist_from_start")
        if not np.all(np.isfinite(self.as_array())):
            raise ConfigurationError("segment features must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([
            self.depart_time, self.travel_time, self.dist_from_start,
            self.dist_next, self.line_count, *self.ohc,
        ], dtype=float)


def encode_segment(
    grid: SegmentGrid,
    i: int,
    context: Optional[Tuple[float, float]],
    line_count: Optional[int] = None,
) -> SegmentFeature:
    """
    Encode grid point i.

    Args:
        grid: Segment grid
        i: Grid index
        context: (departure seconds of day, travel time to point i in seconds)
        line_count: Overrides the line count stored on the segment

    Returns:
        SegmentFeature

    Raises:
        ConfigurationError: On a missing context or an invalid index
    """
    if context is None:
        raise ConfigurationError(f"segment {i}: trip context (t0, t_i) is required")
    if not 0 <= i < len(grid):
        raise ConfigurationError(f"segment index {i} outside [0, {len(grid)})")
    segment = grid.segments[i]
    dist_next = grid.segments[i + 1].cum_distance if i + 1 < len(grid) else grid.route_length
    t0, travel = context
    return SegmentFeature(
        depart_time=float(t0),
        travel_time=float(travel),
        dist_from_start=segment.cum_distance,
        dist_next=float(dist_next),
        line_count=float(segment.line_count if line_count is None else line_count),
        ohc=ONE_HOT[segment.kind],
    )


def encode_route(grid: SegmentGrid, departure: float, travel_times: Sequence[float]) -> np.ndarray:
    """Feature matrix F (len(grid) × 8) for one trip; row i equals encode_segment(grid, i, ...)."""
    travel = np.asarray(travel_times, dtype=float)
    if travel.shape != (len(grid),):
        raise ConfigurationError(f"expected {len(grid)} travel times, got {travel.shape}")
    distances = grid.distances
    dist_next = np.append(distances[1:], grid.route_length)
    line_counts = np.array([s.line_count for s in grid.segments], dtype=float)
    ohc = np.array([ONE_HOT[s.kind] for s in grid.segments], dtype=float)
    return np.column_stack([np.full(len(grid), float(departure)), travel, distances, dist_next, line_counts, ohc])


def route_features(grid: SegmentGrid, arrivals: ArrivalMatrix, rows: Optional[Sequence[int]] = None) -> np.ndarray:
    """Stacked feature matrices (V × len(grid) × 8) for the chosen trips."""
    rows = range(arrivals.n_trips) if rows is None else rows
    return np.stack([encode_route(grid, arrivals.departures[r], arrivals.times[r]) for r in rows])


class FeatureScaler:
    """Z-score of the numeric feature columns; the one-hot columns pass through."""

    def __init__(self, mean: Optional[np.ndarray] = None, std: Optional[np.ndarray] = None):
        self.mean = np.zeros(NUMERIC_DIMS) if mean is None else np.asarray(mean, dtype=float)
        self.std = np.ones(NUMERIC_DIMS) if std is None else np.asarray(std, dtype=float)

    @classmethod
    def fit(cls, features: np.ndarray) -> "FeatureScaler":
        """Fit on training rows of shape (..., 8)."""
        flat = np.asarray(features, dtype=float).reshape(-1, FEATURE_DIM)[:, :NUMERIC_DIMS]
        std = flat.std(axis=0)
        return cls(flat.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, features: np.ndarray) -> np.ndarray:
        out = np.array(features, dtype=float)
        out[..., :NUMERIC_DIMS] = (out[..., :NUMERIC_DIMS] - self.mean) / self.std
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "FeatureScaler":
        return cls(np.array(doc["mean"]), np.array(doc["std"]))


@dataclass(frozen=True, eq=False)
class SelectionState:
    """Mask over the interpolation points plus the selected grid indices."""
    mask: np.ndarray
    indices: Tuple[int, ...]
    interp_indices: Tuple[int, ...]

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=np.int8)
        indices = tuple(int(i) for i in self.indices)
        interp = tuple(int(i) for i in self.interp_indices)
        if mask.shape != (len(interp),):
            raise ConfigurationError(f"mask length {mask.size} != {len(interp)} interpolation points")
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ConfigurationError(f"selected indices must be strictly increasing: {indices}")
        expected = np.isin(np.array(interp), np.array(indices, dtype=int)).astype(np.int8)
        if len(indices) != int(mask.sum()) or not np.array_equal(mask, expected):
            raise ConfigurationError("mask and selected indices disagree")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "interp_indices", interp)

    @property
    def m(self) -> int:
        return len(self.indices)

    @classmethod
    def from_indices(cls, interp_indices: Sequence[int], indices: Sequence[int]) -> "SelectionState":
        """Build a state from selected grid indices; all must be interpolation points."""
        interp = tuple(int(i) for i in interp_indices)
        chosen = sorted(int(i) for i in indices)
        stray = sorted(set(chosen) - set(interp))
        if stray:
            raise ConfigurationError(f"indices {stray} are not interpolation points")
        mask = np.isin(np.array(interp), np.array(chosen, dtype=int)).astype(np.int8)
        return cls(mask, tuple(chosen), interp)

    @classmethod
    def from_mask(cls, interp_indices: Sequence[int], mask: Sequence[int]) -> "SelectionState":
        interp = tuple(int(i) for i in interp_indices)
        mask = np.asarray(mask, dtype=np.int8)
        return cls(mask, tuple(i for i, bit in zip(interp, mask) if bit), interp)

    @classmethod
    def random(cls, grid: SegmentGrid, m: int, rng: np.random.Generator) -> "SelectionState":
        """Uniformly random M-subset of the grid's interpolation points."""
        interp = grid.interpolation_indices
        if not 1 <= m <= len(interp):
            raise ConfigurationError(f"M = {m} outside [1, {len(interp)}]")
        chosen = rng.choice(np.array(interp), size=m, replace=False)
        return cls.from_indices(interp, chosen)

    def with_indices(self, indices: Sequence[int]) -> "SelectionState":
        return SelectionState.from_indices(self.interp_indices, indices)


@dataclass(frozen=True, eq=False)
class RlState:
    """Policy input: features of all points over those of the selected ones, plus the mask."""
    s_a: np.ndarray
    s_b: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.s_a.shape[0]


def assemble_state(features: np.ndarray, sel: SelectionState) -> RlState:
    """
    Stack the selected rows of F below F.

    Args:
        features: (len(grid), 8) feature matrix
        sel: Current selection

    Returns:
        RlState with len(grid) + M rows

    Raises:
        ConfigurationError: If nothing is selected or shapes disagree
    """
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != FEATURE_DIM:
        raise ConfigurationError(f"feature matrix must be (N, {FEATURE_DIM}), got {features.shape}")
    if sel.m == 0:
        raise ConfigurationError("selection is empty; the policy needs at least one movable point")
    if sel.interp_indices and max(sel.interp_indices) >= features.shape[0]:
        raise ConfigurationError("selection refers to rows beyond the feature matrix")
    s_a = np.vstack([features, features[list(sel.indices)]])
    return RlState(s_a, sel.mask.astype(float))
