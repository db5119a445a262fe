"""
Trajectory Interpolation

Ordinary Kriging of per-trip distance-time pairs onto a segment grid, the
monotone clean-up that follows it, and the ArrivalMatrix container that the
predictor trains on.
"""

import io
import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg, optimize

from ..errors import DataError, ExtrapolationError, InsufficientDataError
from .ingest import DEFAULT_SPACING, Journey, SegmentGrid, cumulative_distance

logger = logging.getLogger(__name__)

SNAP_TOLERANCE_M = 1e-6
KRIGING_JITTER = 1e-8
SECONDS_PER_DAY = 86400.0

Pairs = Sequence[Tuple[float, float]]


class VariogramFamily(Enum):
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class VariogramModel:
    """Exponential semivariogram; nugget and sill in s², range in meters."""
    nugget: float
    sill: float
    range_param: float
    family: VariogramFamily = VariogramFamily.EXPONENTIAL

    def __post_init__(self):
        if self.nugget < 0:
            raise DataError(f"nugget must be non-negative, got {self.nugget}")
        if self.sill < self.nugget:
            raise DataError(f"sill {self.sill} below nugget {self.nugget}")
        if not self.range_param > 0:
            raise DataError(f"range_param must be positive, got {self.range_param}")

    @property
    def partial_sill(self) -> float:
        return self.sill - self.nugget

    def semivariance(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        gamma = self.nugget + self.partial_sill * (1.0 - np.exp(-h / self.range_param))
        return np.where(h == 0, 0.0, gamma)

    def covariance(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        return np.where(h == 0, self.sill, self.partial_sill * np.exp(-h / self.range_param))


def _as_arrays(pairs: Pairs) -> Tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def _grid_distances(grid: Union[SegmentGrid, Sequence[float]]) -> np.ndarray:
    if isinstance(grid, SegmentGrid):
        return grid.distances
    return np.asarray(grid, dtype=float)


def prepare_pairs(pairs: Pairs) -> List[Tuple[float, float]]:
    """Collapse repeated distances to their first timestamp."""
    d, t = _as_arrays(pairs)
    if d.size == 0:
        return []
    order = np.argsort(d, kind="stable")
    d, t = d[order], t[order]
    _, first = np.unique(d, return_index=True)
    return [(float(d[i]), float(t[i])) for i in first]


def empirical_semivariogram(pairs: Pairs, spacing: float = DEFAULT_SPACING) -> Tuple[np.ndarray, np.ndarray]:
    """
    Binned empirical semivariogram.

    Args:
        pairs: (meters, seconds) observations
        spacing: Bin width in meters

    Returns:
        (mean lag, mean semivariance) per non-empty bin. Falls back to the raw
        lag cloud when fewer than three bins are populated.
    """
    d, t = _as_arrays(pairs)
    i, j = np.triu_indices(len(d), k=1)
    lags = np.abs(d[i] - d[j])
    gamma = 0.5 * (t[i] - t[j]) ** 2
    keep = lags > 0
    lags, gamma = lags[keep], gamma[keep]

    frame = pd.DataFrame({"bin": np.floor(lags / spacing), "lag": lags, "gamma": gamma})
    binned = frame.groupby("bin", sort=True)[["lag", "gamma"]].mean()
    if len(binned) < 3:
        order = np.argsort(lags, kind="stable")
        return lags[order], gamma[order]
    return binned["lag"].to_numpy(), binned["gamma"].to_numpy()


def fit_variogram(pairs: Pairs, spacing: float = DEFAULT_SPACING) -> VariogramModel:
    """
    Fit an exponential variogram by least squares.

    The range is searched on a log scale; for each candidate the nugget and
    partial sill come from a non-negative least-squares solve.

    Args:
        pairs: At least 4 (meters, seconds) pairs with 3 distinct distances
        spacing: Binning resolution in meters

    Returns:
        VariogramModel

    Raises:
        InsufficientDataError: On too few pairs or distinct distances
    """
    d, t = _as_arrays(pairs)
    if len(d) < 4 or len(np.unique(d)) < 3:
        raise InsufficientDataError(
            f"variogram fit needs >= 4 pairs with >= 3 distinct distances, "
            f"got {len(d)} pairs with {len(np.unique(d))} distinct distances"
        )
    if np.ptp(t) == 0:
        return VariogramModel(nugget=0.0, sill=0.0, range_param=float(spacing))

    lags, gamma = empirical_semivariogram(pairs, spacing)
    max_lag = float(lags.max())
    lower = np.log(spacing)
    upper = max(np.log(10.0 * max_lag), lower + 1.0)

    def solve(log_range: float):
        design = np.column_stack([np.ones_like(lags), 1.0 - np.exp(-lags / np.exp(log_range))])
        coef, residual = optimize.nnls(design, gamma)
        return coef, residual

    search = optimize.minimize_scalar(lambda a: solve(a)[1], bounds=(lower, upper), method="bounded")
    coef, _ = solve(search.x)
    nugget, partial_sill = float(coef[0]), float(coef[1])
    return VariogramModel(nugget=nugget, sill=nugget + partial_sill, range_param=float(np.exp(search.x)))


def interpolate_linear(pairs: Pairs, grid: Union[SegmentGrid, Sequence[float]]) -> List[float]:
    """Piecewise-linear arrival times at the grid distances (flat beyond the data)."""
    d, t = _as_arrays(pairs)
    if d.size == 0:
        raise InsufficientDataError("no pairs to interpolate")
    return [float(x) for x in np.interp(_grid_distances(grid), d, t)]


def krige_arrival_times(
    pairs: Pairs,
    model: VariogramModel,
    grid: Union[SegmentGrid, Sequence[float]],
    spacing: Optional[float] = None,
) -> List[float]:
    """
    Ordinary-Kriging arrival time at every grid distance.

    Grid points that coincide with an observation return it exactly. A
    numerically singular system, or a model without spatial structure, falls
    back to interpolate_linear.

    Args:
        pairs: (meters, seconds) with strictly increasing distances
        model: Fitted variogram
        grid: SegmentGrid or explicit distances
        spacing: Extrapolation allowance; defaults to the grid spacing

    Returns:
        Seconds per grid point

    Raises:
        DataError: If distances are not strictly increasing
        ExtrapolationError: If a grid point lies more than one spacing outside the data
    """
    d, t = _as_arrays(pairs)
    if d.size == 0:
        raise InsufficientDataError("no pairs to interpolate")
    if np.any(np.diff(d) <= 0):
        raise DataError("pair distances must be strictly increasing")
    targets = _grid_distances(grid)
    if spacing is None:
        spacing = grid.spacing if isinstance(grid, SegmentGrid) else DEFAULT_SPACING

    outside = (targets < d[0] - spacing) | (targets > d[-1] + spacing)
    if outside.any():
        raise ExtrapolationError(
            f"grid point at {targets[outside][0]:.1f} m lies outside the observed span "
            f"[{d[0]:.1f}, {d[-1]:.1f}] m by more than {spacing} m"
        )
    if model.partial_sill <= 0 or d.size < 2:
        return interpolate_linear(pairs, targets)

    n = d.size
    system = np.zeros((n + 1, n + 1))
    system[:n, :n] = model.covariance(np.abs(d[:, None] - d[None, :]))
    system[:n, :n] += KRIGING_JITTER * model.sill * np.eye(n)
    system[n, :n] = 1.0
    system[:n, n] = 1.0
    rhs = np.ones((n + 1, targets.size))
    rhs[:n] = model.covariance(np.abs(d[:, None] - targets[None, :]))

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            weights = linalg.solve(system, rhs, assume_a="sym")
    except (linalg.LinAlgError, linalg.LinAlgWarning):
        logger.debug("Singular Kriging system with %d observations; using linear fallback", n)
        return interpolate_linear(pairs, targets)

    estimates = weights[:n].T @ t
    if not np.all(np.isfinite(estimates)):
        return interpolate_linear(pairs, targets)

    nearest = np.abs(d[:, None] - targets[None, :]).argmin(axis=0)
    snapped = np.abs(d[nearest] - targets) <= SNAP_TOLERANCE_M
    estimates[snapped] = t[nearest[snapped]]
    return [float(x) for x in estimates]


def enforce_monotone(times: Sequence[float]) -> List[float]:
    """Least-squares non-decreasing projection (pool adjacent violators)."""
    y = np.asarray(times, dtype=float)
    if y.size == 0:
        return []
    if np.all(np.diff(y) >= 0):
        return [float(x) for x in y]
    return [float(x) for x in optimize.isotonic_regression(y, increasing=True).x]


@dataclass(frozen=True, eq=False)
class ArrivalMatrix:
    """
    Per-trip elapsed arrival times on a segment grid.

    times[v, i] is seconds since departure of trip v at grid point i, so the
    first column is zero for ingested data. departures are seconds of day.
    """
    times: np.ndarray
    trip_ids: Tuple[str, ...]
    grid_ref: str
    distances: Tuple[float, ...]
    departures: np.ndarray = field(default=None)

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        if times.ndim != 2 or times.shape[0] < 1:
            raise DataError("arrival matrix needs shape (V >= 1, G)")
        if len(self.trip_ids) != times.shape[0]:
            raise DataError(f"{len(self.trip_ids)} trip ids for {times.shape[0]} rows")
        if len(self.distances) != times.shape[1]:
            raise DataError(f"{len(self.distances)} distances for {times.shape[1]} columns")
        decreasing = np.diff(times, axis=1) < 0
        if decreasing.any():
            row, col = np.argwhere(decreasing)[0]
            raise DataError(
                f"trip {self.trip_ids[row]}: arrival time decreases at segment {col + 1}"
            )
        departures = np.zeros(times.shape[0]) if self.departures is None else np.array(self.departures, dtype=float)
        if departures.shape != (times.shape[0],):
            raise DataError("departures must hold one value per trip")
        times.setflags(write=False)
        departures.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "departures", departures)
        object.__setattr__(self, "trip_ids", tuple(str(x) for x in self.trip_ids))
        object.__setattr__(self, "distances", tuple(float(x) for x in self.distances))

    @property
    def n_trips(self) -> int:
        return self.times.shape[0]

    @property
    def n_points(self) -> int:
        return self.times.shape[1]

    def __len__(self) -> int:
        return self.n_trips

    def subset(self, rows: Sequence[int]) -> "ArrivalMatrix":
        rows = np.asarray(rows, dtype=int)
        return ArrivalMatrix(
            self.times[rows], tuple(self.trip_ids[r] for r in rows),
            self.grid_ref, self.distances, self.departures[rows],
        )

    def split(self, train_fraction: float, rng: np.random.Generator) -> Tuple["ArrivalMatrix", "ArrivalMatrix"]:
        """Random train/test split; both parts keep at least one trip."""
        if not 0 < train_fraction < 1:
            raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
        if self.n_trips < 2:
            raise InsufficientDataError("cannot split fewer than two trips")
        order = rng.permutation(self.n_trips)
        cut = int(np.clip(round(train_fraction * self.n_trips), 1, self.n_trips - 1))
        return self.subset(np.sort(order[:cut])), self.subset(np.sort(order[cut:]))


def build_arrival_matrix(
    journeys: Sequence[Journey],
    grid: SegmentGrid,
    utc_offset_hours: float = 0.0,
) -> ArrivalMatrix:
    """
    Interpolate every journey onto the grid.

    Journeys with too few pairs or that do not cover the route are skipped
    with one counted warning.

    Raises:
        InsufficientDataError: If no journey survives
    """
    rows, trip_ids, departures = [], [], []
    skipped = 0
    for journey in journeys:
        pairs = prepare_pairs(cumulative_distance(journey))
        try:
            model = fit_variogram(pairs, grid.spacing)
            times = krige_arrival_times(pairs, model, grid)
        except (InsufficientDataError, ExtrapolationError) as exc:
            logger.debug("Skipping journey %s: %s", journey.label, exc)
            skipped += 1
            continue
        times = np.asarray(enforce_monotone(times))
        start = journey.start_time + times[0]
        rows.append(times - times[0])
        trip_ids.append(journey.label)
        departures.append((start + utc_offset_hours * 3600.0) % SECONDS_PER_DAY)

    if skipped:
        logger.warning("Skipped %d of %d journeys that could not be interpolated", skipped, len(journeys))
    if not rows:
        raise InsufficientDataError("no journey could be interpolated onto the grid")
    return ArrivalMatrix(np.vstack(rows), tuple(trip_ids), grid.digest, tuple(grid.distances), np.array(departures))


def save_arrival_matrix(matrix: ArrivalMatrix, filepath: Union[str, Path]) -> None:
    """Write the matrix as CSV: a grid_ref comment line, then trip_id, departure, one column per distance."""
    columns = [repr(d) for d in matrix.distances]
    frame = pd.DataFrame(matrix.times, columns=columns)
    frame.insert(0, "departure", matrix.departures)
    frame.insert(0, "trip_id", list(matrix.trip_ids))
    with open(filepath, "w", encoding="utf-8", newline="") as f:
        f.write(f"# grid_ref: {matrix.grid_ref}\n")
        frame.to_csv(f, index=False, lineterminator="\n")


def load_arrival_matrix(filepath: Union[str, Path]) -> ArrivalMatrix:
    """Read a matrix written by save_arrival_matrix."""
    with open(filepath, "r", encoding="utf-8") as f:
        content = f.read()
    first, _, rest = content.partition("\n")
    if not first.startswith("# grid_ref:"):
        raise DataError(f"{filepath}: missing grid_ref line")
    frame = pd.read_csv(io.StringIO(rest), dtype={"trip_id": str}, float_precision="round_trip")
    if list(frame.columns[:2]) != ["trip_id", "departure"]:
        raise DataError(f"{filepath}: expected columns trip_id, departure, <distances>")
    distances = tuple(float(c) for c in frame.columns[2:])
    return ArrivalMatrix(
        frame.iloc[:, 2:].to_numpy(dtype=float),
        tuple(frame["trip_id"]),
        first.split(":", 1)[1].strip(),
        distances,
        frame["departure"].to_numpy(dtype=float),
    )


if __name__ == '__main__':
    # Example usage
    pairs = [(float(d), 0.06 * d) for d in range(0, 1001, 125)]
    model = fit_variogram(pairs)
    print("Variogram:", model)
    print("Kriged:", krige_arrival_times(pairs, model, [0, 100, 500, 1000]))
    print("Monotone:", enforce_monotone([0, 5, 3, 8]))
