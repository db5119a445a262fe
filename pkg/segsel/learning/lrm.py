"""
Linear ETA Predictor

Estimates mean arrival times and their covariance over a set of segment
indices, and predicts downstream arrival times as the Gaussian conditional
mean given the arrival times observed so far.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from ..errors import ConfigurationError, DataError, InsufficientDataError, SingularModelError
from ..preprocessing.interp import ArrivalMatrix
from ..utils import read_json, write_json

logger = logging.getLogger(__name__)

MODEL_VERSION = 1
JITTER_SCALE = 1e-6
JITTER_FLOOR = 1e-9
JITTER_ESCALATIONS = 3


def default_jitter(sigma: np.ndarray) -> float:
    """1e-6 times the mean diagonal, never below 1e-9 s²."""
    k = sigma.shape[0]
    return max(JITTER_SCALE * float(np.trace(sigma)) / k, JITTER_FLOOR) if k else JITTER_FLOOR


@dataclass(frozen=True, eq=False)
class GaussianEtaModel:
    """Mean vector and covariance of arrival times over `indices`."""
    indices: Tuple[int, ...]
    mu: np.ndarray
    sigma: np.ndarray
    jitter: float

    def __post_init__(self):
        indices = tuple(int(i) for i in self.indices)
        mu = np.array(self.mu, dtype=float)
        sigma = np.array(self.sigma, dtype=float)
        k = len(indices)
        if k == 0:
            raise ConfigurationError("model needs at least one index")
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ConfigurationError("model indices must be strictly increasing")
        if mu.shape != (k,) or sigma.shape != (k, k):
            raise ConfigurationError(f"mu {mu.shape} / sigma {sigma.shape} do not match {k} indices")
        if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-9 * max(1.0, np.abs(sigma).max())):
            raise DataError("sigma must be symmetric")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "jitter", float(self.jitter))

    def __len__(self) -> int:
        return len(self.indices)

    def positions(self, segment_indices: Iterable[int]) -> np.ndarray:
        """Positions of segment indices within the model, in the given order."""
        lookup = {idx: pos for pos, idx in enumerate(self.indices)}
        try:
            return np.array([lookup[int(i)] for i in segment_indices], dtype=int)
        except KeyError as exc:
            raise ConfigurationError(f"segment {exc.args[0]} is not covered by the model") from exc


def estimate_moments(arrivals: ArrivalMatrix, indices: Iterable[int]) -> GaussianEtaModel:
    """
    Estimate per-segment means and the population covariance.

    Rows are put in a canonical order first, so shuffling trips changes no
    output bit.

    Args:
        arrivals: Training arrival matrix with V >= 2 trips
        indices: Segment indices to cover

    Returns:
        GaussianEtaModel with default jitter

    Raises:
        InsufficientDataError: If V < 2
        DataError: On a non-finite entry, naming trip and segment
    """
    if arrivals.n_trips < 2:
        raise InsufficientDataError(f"moment estimation needs >= 2 trips, got {arrivals.n_trips}")
    idx = sorted(set(int(i) for i in indices))
    if not idx:
        raise ConfigurationError("no segment indices given")
    if idx[0] < 0 or idx[-1] >= arrivals.n_points:
        raise ConfigurationError(f"segment indices must lie in [0, {arrivals.n_points})")

    x = arrivals.times[:, idx]
    bad = ~np.isfinite(x)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(f"non-finite arrival time for trip {arrivals.trip_ids[row]} at segment {idx[col]}")

    x = x[np.lexsort(x.T[::-1])]
    v = x.shape[0]
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = centered.T @ centered / v
    sigma = 0.5 * (sigma + sigma.T)
    return GaussianEtaModel(tuple(idx), mu, sigma, default_jitter(sigma))


def restrict_model(model: GaussianEtaModel, keep: Iterable[int]) -> GaussianEtaModel:
    """Principal sub-model over `keep`, with jitter recomputed for the smaller matrix."""
    keep = sorted(set(int(i) for i in keep))
    if not keep:
        raise ConfigurationError("cannot restrict a model to an empty index set")
    pos = model.positions(keep)
    sigma = model.sigma[np.ix_(pos, pos)]
    return GaussianEtaModel(tuple(keep), model.mu[pos], sigma, default_jitter(sigma))


def _block_jitter(model: GaussianEtaModel, block: np.ndarray) -> float:
    """Jitter scaled to the observed block; a model built without jitter stays exact."""
    return default_jitter(block) if model.jitter > 0 else 0.0


def _factor(block: np.ndarray, jitter: float):
    """Cholesky factor of block + jitter·I, escalating the jitter on failure."""
    eye = np.eye(block.shape[0])
    current = jitter
    for attempt in range(JITTER_ESCALATIONS + 1):
        try:
            factor = linalg.cho_factor(block + current * eye, lower=True, check_finite=True)
            if attempt:
                logger.debug("Factorized after raising jitter to %.3g", current)
            return factor
        except (linalg.LinAlgError, ValueError):
            current = max(current, JITTER_FLOOR) * 10.0
    raise SingularModelError(
        f"covariance of size {block.shape[0]} is not positive definite after {JITTER_ESCALATIONS} jitter escalations"
    )


def _conditioning(model: GaussianEtaModel, observed_indices: Sequence[int], targets: Sequence[int]):
    obs_pos = model.positions(observed_indices)
    tgt_pos = model.positions(targets)
    if obs_pos.size and tgt_pos.size and min(targets) <= max(observed_indices):
        raise ConfigurationError("targets must lie strictly after the last observed segment")
    return obs_pos, tgt_pos


def predict_eta(
    model: GaussianEtaModel,
    observed: Sequence[float],
    target: int,
    observed_indices: Optional[Sequence[int]] = None,
) -> float:
    """
    Conditional-mean arrival time at `target`.

    Args:
        model: Estimated model
        observed: Seconds at the observed segments
        target: Segment index after the last observed one
        observed_indices: Segments the values belong to; defaults to the
            first len(observed) model indices

    Returns:
        Predicted seconds at target

    Raises:
        SingularModelError: If the jittered covariance cannot be factorized
    """
    observed = np.asarray(observed, dtype=float)
    if observed_indices is None:
        observed_indices = model.indices[: observed.size]
    if len(observed_indices) != observed.size:
        raise ConfigurationError("observed values and indices differ in length")
    obs_pos, tgt_pos = _conditioning(model, observed_indices, [target])
    q = tgt_pos[0]
    if obs_pos.size == 0:
        return float(model.mu[q])
    block = model.sigma[np.ix_(obs_pos, obs_pos)]
    factor = _factor(block, _block_jitter(model, block))
    weights = linalg.cho_solve(factor, observed - model.mu[obs_pos])
    return float(model.mu[q] + model.sigma[obs_pos, q] @ weights)


def predict_batch(
    model: GaussianEtaModel,
    observed_rows: np.ndarray,
    observed_indices: Sequence[int],
    targets: Sequence[int],
) -> np.ndarray:
    """
    Conditional means for many trips sharing one observed prefix.

    Args:
        model: Estimated model
        observed_rows: (V, len(observed_indices)) seconds
        observed_indices: Conditioning segments
        targets: Target segments, all after the last observed one

    Returns:
        (V, len(targets)) predicted seconds
    """
    rows = np.atleast_2d(np.asarray(observed_rows, dtype=float))
    obs_pos, tgt_pos = _conditioning(model, observed_indices, targets)
    if rows.shape[1] != obs_pos.size:
        raise ConfigurationError(f"observed rows have {rows.shape[1]} columns, expected {obs_pos.size}")
    base = np.broadcast_to(model.mu[tgt_pos], (rows.shape[0], tgt_pos.size))
    if obs_pos.size == 0:
        return np.array(base)
    block = model.sigma[np.ix_(obs_pos, obs_pos)]
    factor = _factor(block, _block_jitter(model, block))
    gain = linalg.cho_solve(factor, model.sigma[np.ix_(obs_pos, tgt_pos)])
    return base + (rows - model.mu[obs_pos]) @ gain


def model_to_dict(model: GaussianEtaModel) -> Dict[str, Any]:
    return {
        "version": MODEL_VERSION,
        "indices": list(model.indices),
        "mu": model.mu.tolist(),
        "sigma": model.sigma.ravel().tolist(),
        "jitter": model.jitter,
    }


def model_from_dict(doc: Dict[str, Any]) -> GaussianEtaModel:
    if doc.get("version") != MODEL_VERSION:
        raise ConfigurationError(f"unsupported model version {doc.get('version')!r}")
    k = len(doc["indices"])
    return GaussianEtaModel(
        tuple(doc["indices"]), np.array(doc["mu"]), np.array(doc["sigma"]).reshape(k, k), doc["jitter"]
    )


def save_model(model: GaussianEtaModel, filepath: Union[str, Path]) -> None:
    write_json(filepath, model_to_dict(model))


def load_model(filepath: Union[str, Path]) -> GaussianEtaModel:
    return model_from_dict(read_json(filepath))


if __name__ == '__main__':
    # Example usage
    model = GaussianEtaModel((0, 1), np.array([10.0, 20.0]), np.array([[4.0, 2.0], [2.0, 3.0]]), 0.0)
    print("ETA at segment 1 given t_0 = 12:", predict_eta(model, [12.0], 1))
