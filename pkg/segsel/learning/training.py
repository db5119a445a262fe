"""
Selection Training

Rewards, the momentum SGD optimizer and the progressive training loop that
alternates policy updates on the segment selection with refits of the
linear predictor.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..config import RewardConfig, RewardStrategy, TrainConfig, config_digest
from ..errors import ConfigurationError, DataError, InsufficientDataError, NumericalError
from ..evaluation.metrics import lrm_indices, prediction_errors, triple_keys
from ..preprocessing.ingest import SegmentGrid
from ..preprocessing.interp import ArrivalMatrix
from ..utils import digest, read_json, rng_stream, write_json
from .features import FeatureScaler, SelectionState, assemble_state, route_features
from .lrm import GaussianEtaModel, estimate_moments, model_from_dict, model_to_dict, restrict_model
from .policy import (
    EpisodeStep, PolicyParams, apply_actions, backward, compute_bounds, forward,
    greedy_actions, init_params, params_from_dict, params_to_dict, sample_actions,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("epoch", "reward_mean", "train_mae", "selected_indices_digest")
BENCHMARK_COLUMNS = ("trip_id", "origin_index", "horizon", "error_minutes")

BenchmarkTable = Dict[Tuple[str, int, int], float]


def reward_bcr(errors: Sequence[float], benchmark: Sequence[float]) -> float:
    """Fraction of evaluation points where the error beats the benchmark."""
    errors = np.asarray(errors, dtype=float)
    benchmark = np.asarray(benchmark, dtype=float)
    if errors.shape != benchmark.shape or errors.size == 0:
        raise DataError(f"BCR needs equal non-empty inputs, got {errors.size} and {benchmark.size}")
    return float(np.mean(errors < benchmark))


def reward_ier(errors: Sequence[float], epsilon: float = 0.1) -> float:
    """Mean inverse error with an additive floor (minutes)."""
    errors = np.asarray(errors, dtype=float)
    if np.any(errors < 0):
        raise DataError("IER needs non-negative errors")
    return float(np.mean(1.0 / (errors + epsilon)))


def reward_atr(errors: Sequence[float]) -> float:
    """Negated mean absolute error."""
    return -float(np.mean(np.abs(np.asarray(errors, dtype=float))))


def compute_reward(errors: np.ndarray, cfg: RewardConfig, benchmark: Optional[np.ndarray] = None) -> float:
    if cfg.strategy is RewardStrategy.ATR:
        return reward_atr(errors)
    if cfg.strategy is RewardStrategy.IER:
        return reward_ier(errors, cfg.epsilon)
    if benchmark is None:
        raise ConfigurationError("BCR reward requires a benchmark error table")
    return reward_bcr(errors, benchmark)


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Base rate until the milestone, then one decay per elapsed step."""
    if epoch < config.lr_milestone:
        return config.lr
    return config.lr * config.lr_gamma ** (1 + (epoch - config.lr_milestone) // config.lr_step)


@dataclass
class SgdState:
    velocity: PolicyParams


def sgd_step(
    params: PolicyParams,
    grads: PolicyParams,
    state: SgdState,
    config: TrainConfig,
    epoch: int,
) -> PolicyParams:
    """
    Momentum SGD with weight decay folded into the gradient.

    Updates state.velocity in place and returns new parameters.

    Raises:
        NumericalError: On a non-finite gradient
    """
    lr = lr_at(config, epoch)
    updated = {}
    for name, value in params.items():
        grad = getattr(grads, name)
        if grad.shape != value.shape:
            raise ConfigurationError(f"gradient {name} has shape {grad.shape}, expected {value.shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite gradient", layer=name, epoch=epoch)
        grad = grad + config.weight_decay * value
        velocity = config.momentum * getattr(state.velocity, name) + grad
        setattr(state.velocity, name, velocity)
        updated[name] = value - lr * velocity
    return PolicyParams(**updated)


@dataclass
class ConvergenceRecord:
    epoch: int
    reward_mean: float
    train_mae: float
    selected_indices_digest: str


@dataclass
class TrainingResult:
    """Everything a training run produces."""
    params: PolicyParams
    model: GaussianEtaModel
    selection: SelectionState
    log: List[ConvergenceRecord]
    scaler: FeatureScaler
    config_digest: str
    route_id: str
    seed: int
    use_mask: bool = True


def build_benchmark_table(train: ArrivalMatrix, grid: SegmentGrid) -> BenchmarkTable:
    """Training errors of the all-segments predictor keyed by (trip_id, origin_index, horizon)."""
    model = estimate_moments(train, range(len(grid)))
    errors = prediction_errors(model, train, grid).ravel()
    return dict(zip(triple_keys(train, grid), (float(e) for e in errors)))


def save_benchmark_table(table: BenchmarkTable, filepath: Union[str, Path]) -> None:
    frame = pd.DataFrame(
        [(t, o, h, e) for (t, o, h), e in table.items()], columns=list(BENCHMARK_COLUMNS)
    )
    frame.to_csv(filepath, index=False, lineterminator="\n")


def load_benchmark_table(filepath: Union[str, Path]) -> BenchmarkTable:
    frame = pd.read_csv(filepath, dtype={"trip_id": str}, float_precision="round_trip")
    missing = [c for c in BENCHMARK_COLUMNS if c not in frame.columns]
    if missing:
        raise ConfigurationError(f"{filepath}: benchmark table lacks {', '.join(missing)}")
    return {
        (str(r.trip_id), int(r.origin_index), int(r.horizon)): float(r.error_minutes)
        for r in frame.itertuples(index=False)
    }


def _benchmark_values(table: BenchmarkTable, keys: List[Tuple[str, int, int]]) -> np.ndarray:
    try:
        return np.array([table[k] for k in keys])
    except KeyError as exc:
        raise ConfigurationError(f"benchmark table has no entry for {exc.args[0]}") from exc


def selection_size(grid: SegmentGrid, fraction: float) -> int:
    """M = floor(fraction × number of interpolation points)."""
    n_interp = len(grid.interpolation_indices)
    m = int(math.floor(fraction * n_interp + 1e-9))
    if m < 1:
        raise ConfigurationError(
            f"selection_fraction {fraction} of {n_interp} interpolation points selects nothing"
        )
    return m


def epoch_gradient(
    params: PolicyParams,
    inner_steps: Sequence[EpisodeStep],
    final_step: EpisodeStep,
    use_mask: bool = True,
) -> PolicyParams:
    """Policy gradient of one epoch: the sampled steps followed by the post-loop step."""
    return backward(params, list(inner_steps) + [final_step], use_mask)


class _RewardOracle:
    """Scores candidate selections on a batch of training trips."""

    def __init__(self, full: GaussianEtaModel, train: ArrivalMatrix, grid: SegmentGrid,
                 cfg: RewardConfig, benchmark: Optional[BenchmarkTable]):
        self.full = full
        self.train = train
        self.grid = grid
        self.cfg = cfg
        self.benchmark = benchmark

    def model_for(self, sel: SelectionState) -> GaussianEtaModel:
        return restrict_model(self.full, lrm_indices(self.grid, sel.indices))

    def __call__(self, sel: SelectionState, rows: np.ndarray) -> float:
        errors = prediction_errors(self.model_for(sel), self.train, self.grid, rows).ravel()
        bench = None
        if self.cfg.strategy is RewardStrategy.BCR:
            bench = _benchmark_values(self.benchmark, triple_keys(self.train, self.grid, rows))
        return compute_reward(errors, self.cfg, bench)


def dprl_train(
    train: ArrivalMatrix,
    grid: SegmentGrid,
    config: TrainConfig,
    reward: RewardConfig,
    benchmark: Optional[BenchmarkTable] = None,
) -> TrainingResult:
    """
    Train the selection policy and the predictor together.

    Each epoch draws a batch of training trips, runs the configured number of
    sampled action iterations from the committed selection and takes one
    greedy step after them. Under the default "last" rule the chained result
    of those steps is committed; "best" commits the highest-reward candidate
    seen in the epoch instead. The policy update credits every inner step
    with its own reward and the greedy step with the post-loop reward. The
    predictor is then refit on the committed segments plus all landmarks.

    Args:
        train: Training arrival matrix (V >= 2)
        grid: Segment grid of the route
        config: Training hyperparameters; config.seed is required
        reward: Reward strategy
        benchmark: Error table, required for BCR

    Returns:
        TrainingResult

    Raises:
        ConfigurationError: On a missing seed, benchmark or an empty selection
        NumericalError: If training diverges
    """
    if config.seed is None:
        raise ConfigurationError("training needs a seed")
    if train.n_trips < 2:
        raise InsufficientDataError(f"training needs >= 2 trips, got {train.n_trips}")
    if train.n_points != len(grid):
        raise ConfigurationError(f"arrival matrix has {train.n_points} columns, grid has {len(grid)} points")
    if reward.strategy is RewardStrategy.BCR and benchmark is None:
        raise ConfigurationError("BCR reward requires a benchmark error table")
    if config.commit not in ("best", "last"):
        raise ConfigurationError(f"unknown commit rule {config.commit!r}")

    seed = int(config.seed)
    m = selection_size(grid, config.selection_fraction)
    landmarks = set(grid.landmark_indices)
    run_digest = config_digest({"train": config, "reward": reward, "route": grid.digest})

    full = estimate_moments(train, range(len(grid)))
    scaler = FeatureScaler.fit(route_features(grid, train))
    oracle = _RewardOracle(full, train, grid, reward, benchmark)

    selection = SelectionState.random(grid, m, rng_stream(seed, "selection-init"))
    params = init_params(len(grid.interpolation_indices), m, rng_stream(seed, "params"))
    sgd = SgdState(params.zeros_like())
    sampling = rng_stream(seed, "sampling")
    batching = rng_stream(seed, "batch")
    model = oracle.model_for(selection)
    log: List[ConvergenceRecord] = []

    logger.info("Training %s: M=%d of %d interpolation points, %d epochs",
                grid.route_id, m, len(grid.interpolation_indices), config.epochs)

    for epoch in range(config.epochs):
        rows = np.sort(batching.choice(train.n_trips, size=min(config.batch_size, train.n_trips), replace=False))
        features = scaler.transform(route_features(grid, train, rows).mean(axis=0))

        candidates = [(oracle(selection, rows), selection)]
        episode: List[EpisodeStep] = []
        current = selection
        for _ in range(config.action_iterations):
            state = assemble_state(features, current)
            actions = sample_actions(forward(params, state, config.use_mask), sampling)
            bounds = compute_bounds(current.indices, grid.last_index)
            current = current.with_indices(apply_actions(current.indices, actions, bounds, landmarks))
            r = oracle(current, rows)
            episode.append(EpisodeStep(state, actions, r))
            candidates.append((r, current))

        state = assemble_state(features, current)
        greedy = greedy_actions(forward(params, state, config.use_mask))
        bounds = compute_bounds(current.indices, grid.last_index)
        proposal = current.with_indices(apply_actions(current.indices, greedy, bounds, landmarks))
        post_reward = oracle(proposal, rows)
        candidates.append((post_reward, proposal))
        final_step = EpisodeStep(state, greedy, post_reward)

        if config.commit == "best":
            selection = max(candidates, key=lambda c: c[0])[1]
        else:
            selection = proposal

        try:
            grads = epoch_gradient(params, episode, final_step, config.use_mask)
        except NumericalError as exc:
            raise NumericalError(str(exc), epoch=epoch) from exc
        params = sgd_step(params, grads, sgd, config, epoch)
        params.check_finite(epoch)

        model = oracle.model_for(selection)
        reward_mean = float(np.mean([step.reward for step in episode] + [post_reward]))
        train_mae = float(prediction_errors(model, train, grid).mean())
        if not (np.isfinite(reward_mean) and np.isfinite(train_mae)):
            raise NumericalError("training diverged", epoch=epoch)
        log.append(ConvergenceRecord(epoch, reward_mean, train_mae, digest(list(selection.indices))))
        logger.debug("epoch %d reward %.5f train_mae %.5f", epoch, reward_mean, train_mae)

    return TrainingResult(params, model, selection, log, scaler, run_digest, grid.route_id, seed, config.use_mask)


def write_convergence_log(records: Sequence[ConvergenceRecord], filepath: Union[str, Path],
                          run_digest: str = "") -> None:
    """CSV with columns epoch, reward_mean, train_mae, selected_indices_digest."""
    frame = pd.DataFrame(
        [(r.epoch, r.reward_mean, r.train_mae, r.selected_indices_digest) for r in records],
        columns=list(LOG_COLUMNS),
    )
    with open(filepath, "w", encoding="utf-8", newline="") as f:
        f.write(f"# config_digest: {run_digest}\n")
        frame.to_csv(f, index=False, lineterminator="\n")


def read_convergence_log(filepath: Union[str, Path]) -> List[ConvergenceRecord]:
    frame = pd.read_csv(filepath, comment="#", dtype={"selected_indices_digest": str}, float_precision="round_trip")
    return [
        ConvergenceRecord(int(r.epoch), float(r.reward_mean), float(r.train_mae), str(r.selected_indices_digest))
        for r in frame.itertuples(index=False)
    ]


def save_checkpoint(result: TrainingResult, filepath: Union[str, Path]) -> None:
    write_json(filepath, {
        "version": CHECKPOINT_VERSION,
        "route_id": result.route_id,
        "m": result.selection.m,
        "seed": result.seed,
        "use_mask": result.use_mask,
        "config_digest": result.config_digest,
        "selection": list(result.selection.indices),
        "interp_indices": list(result.selection.interp_indices),
        "policy": params_to_dict(result.params),
        "scaler": result.scaler.to_dict(),
        "model": model_to_dict(result.model),
    })


def load_checkpoint(filepath: Union[str, Path]) -> TrainingResult:
    """Restore a checkpoint; the convergence log is not part of it."""
    doc: Dict[str, Any] = read_json(filepath)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{filepath}: unsupported checkpoint version {doc.get('version')!r}")
    return TrainingResult(
        params=params_from_dict(doc["policy"]),
        model=model_from_dict(doc["model"]),
        selection=SelectionState.from_indices(doc["interp_indices"], doc["selection"]),
        log=[],
        scaler=FeatureScaler.from_dict(doc["scaler"]),
        config_digest=doc["config_digest"],
        route_id=doc["route_id"],
        seed=int(doc["seed"]),
        use_mask=bool(doc["use_mask"]),
    )
