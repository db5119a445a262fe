"""
Prediction Metrics

MAE over (trip, origin stop, target stop) evaluation triples, held-out
evaluation of a segment selection, and the EvalReport container.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ConfigurationError, DataError
from ..learning.lrm import GaussianEtaModel, estimate_moments, predict_batch
from ..preprocessing.ingest import SegmentGrid
from ..preprocessing.interp import ArrivalMatrix
from ..utils import write_json

logger = logging.getLogger(__name__)

SECONDS_PER_MINUTE = 60.0
ROUTE_CLASSES = (("short", 10_000.0), ("medium", 15_000.0), ("long", float("inf")))


def mae(predicted: Sequence[float], truth: Sequence[float]) -> float:
    """Mean absolute deviation between two equally long, non-empty sequences."""
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape or predicted.size == 0:
        raise DataError(f"mae needs equal non-empty inputs, got {predicted.shape} and {truth.shape}")
    return float(np.mean(np.abs(predicted - truth)))


def evaluation_triples(grid: SegmentGrid) -> List[Tuple[int, int]]:
    """Every (origin stop, later target stop) pair of grid indices."""
    stops = grid.stop_indices
    if len(stops) < 2:
        raise ConfigurationError(f"route {grid.route_id} needs at least two stops to evaluate")
    return [(o, t) for k, o in enumerate(stops) for t in stops[k + 1:]]


def predict_triples(
    model: GaussianEtaModel,
    arrivals: ArrivalMatrix,
    grid: SegmentGrid,
    rows: Optional[Sequence[int]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Predicted and true seconds for every evaluation triple.

    Each trip is observed at the model's segments up to and including the
    origin stop.

    Returns:
        (predicted, truth), both (trips, triples) in seconds, triples ordered
        as evaluation_triples(grid)
    """
    times = arrivals.times if rows is None else arrivals.times[np.asarray(rows, dtype=int)]
    triples = evaluation_triples(grid)
    predicted = np.empty((times.shape[0], len(triples)))
    truth = np.empty_like(predicted)
    col = 0
    for origin in grid.stop_indices[:-1]:
        targets = [t for o, t in triples if o == origin]
        observed = [i for i in model.indices if i <= origin]
        block = slice(col, col + len(targets))
        predicted[:, block] = predict_batch(model, times[:, observed], observed, targets)
        truth[:, block] = times[:, targets]
        col += len(targets)
    return predicted, truth


def prediction_errors(
    model: GaussianEtaModel,
    arrivals: ArrivalMatrix,
    grid: SegmentGrid,
    rows: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Absolute errors in minutes, shape (trips, triples)."""
    predicted, truth = predict_triples(model, arrivals, grid, rows)
    return np.abs(predicted - truth) / SECONDS_PER_MINUTE


def triple_keys(
    arrivals: ArrivalMatrix,
    grid: SegmentGrid,
    rows: Optional[Sequence[int]] = None,
) -> List[Tuple[str, int, int]]:
    """(trip_id, origin_index, horizon) keys in the row-major order of prediction_errors."""
    rows = range(arrivals.n_trips) if rows is None else rows
    triples = evaluation_triples(grid)
    return [(arrivals.trip_ids[r], o, t - o) for r in rows for o, t in triples]


def lrm_indices(grid: SegmentGrid, selected: Iterable[int]) -> List[int]:
    """Segments the predictor consumes: the selection plus every landmark."""
    return sorted(set(int(i) for i in selected) | set(grid.landmark_indices))


def evaluate_selection(
    train: ArrivalMatrix,
    test: ArrivalMatrix,
    grid: SegmentGrid,
    selected: Iterable[int],
) -> Tuple[float, GaussianEtaModel]:
    """Fit the predictor on train over the selection and return its held-out MAE."""
    model = estimate_moments(train, lrm_indices(grid, selected))
    return float(prediction_errors(model, test, grid).mean()), model


def route_class(grid: SegmentGrid) -> str:
    """Length class of a route: short up to 10 km, medium up to 15 km, long beyond."""
    for label, limit in ROUTE_CLASSES:
        if grid.route_length <= limit:
            return label
    return ROUTE_CLASSES[-1][0]


@dataclass
class EvalReport:
    """Held-out MAE of one strategy or variant over several seeds."""
    strategy: str
    seeds: List[int]
    per_seed_mae: List[float]
    config_digest: str
    route_id: str = ""
    route_class: str = ""
    feature_count: int = 0
    variant: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.per_seed_mae) != len(self.seeds):
            raise DataError(f"{len(self.per_seed_mae)} MAEs for {len(self.seeds)} seeds")
        if any(not np.isfinite(x) or x < 0 for x in self.per_seed_mae):
            raise DataError(f"invalid MAE in report {self.strategy}: {self.per_seed_mae}")

    @property
    def mae(self) -> float:
        """Median over seeds."""
        return float(np.median(self.per_seed_mae))

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc["mae"] = self.mae
        doc["mean_mae"] = float(np.mean(self.per_seed_mae))
        return doc


def write_report(reports: Sequence[EvalReport], filepath: Union[str, Path], **extra: Any) -> None:
    """Write a sweep's reports as one JSON document."""
    doc = dict(extra)
    doc["reports"] = [r.to_dict() for r in reports]
    write_json(filepath, doc)
    logger.info("Wrote %d reports to %s", len(reports), filepath)
