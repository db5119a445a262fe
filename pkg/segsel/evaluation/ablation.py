"""
Ablation Runners

Strategy comparisons and parameter sweeps over several seeds, evaluated on
one shared set of held-out evaluation triples, plus their plots.
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from ..config import RewardConfig, RewardStrategy, SWEEPS, TrainConfig, config_digest
from ..errors import ConfigurationError
from ..learning.training import (
    BenchmarkTable, ConvergenceRecord, dprl_train, selection_size,
)
from ..preprocessing.ingest import SegmentGrid
from ..preprocessing.interp import ArrivalMatrix
from ..utils import rng_stream
from .metrics import EvalReport, evaluate_selection, lrm_indices, prediction_errors, route_class

logger = logging.getLogger(__name__)


class AblationRunner:
    """Runs every strategy of a comparison on the same data and seeds."""

    def __init__(
        self,
        train: ArrivalMatrix,
        test: ArrivalMatrix,
        grid: SegmentGrid,
        train_cfg: TrainConfig,
        reward_cfg: RewardConfig,
        seeds: Sequence[int],
        benchmark: Optional[BenchmarkTable] = None,
    ):
        """
        Initialize runner.

        Args:
            train: Training split
            test: Held-out split
            grid: Route grid
            train_cfg: Base training configuration; seeds override its seed
            reward_cfg: Base reward configuration
            seeds: Seeds every strategy runs under
            benchmark: Error table for BCR
        """
        if not seeds:
            raise ConfigurationError("ablation needs at least one seed")
        self.train = train
        self.test = test
        self.grid = grid
        self.train_cfg = train_cfg
        self.reward_cfg = reward_cfg
        self.seeds = [int(s) for s in seeds]
        self.benchmark = benchmark
        self.logs: Dict[str, List[List[ConvergenceRecord]]] = {}

    def _report(self, strategy: str, maes: List[float], feature_count: int, digest_of, variant=None) -> EvalReport:
        return EvalReport(
            strategy=strategy,
            seeds=list(self.seeds),
            per_seed_mae=maes,
            config_digest=config_digest(digest_of),
            route_id=self.grid.route_id,
            route_class=route_class(self.grid),
            feature_count=feature_count,
            variant=dict(variant or {}),
        )

    def run_all(self) -> EvalReport:
        """Every grid point feeds the predictor."""
        mae, model = evaluate_selection(self.train, self.test, self.grid, self.grid.interpolation_indices)
        return self._report("ALL", [mae] * len(self.seeds), len(model), {"strategy": "ALL", "seeds": self.seeds})

    def run_random(self, fraction: Optional[float] = None) -> EvalReport:
        """Seeded uniformly random M-subset of the interpolation points."""
        fraction = self.train_cfg.selection_fraction if fraction is None else fraction
        m = selection_size(self.grid, fraction)
        interp = np.array(self.grid.interpolation_indices)
        maes = []
        for seed in self.seeds:
            chosen = rng_stream(seed, "random-selection").choice(interp, size=m, replace=False)
            maes.append(evaluate_selection(self.train, self.test, self.grid, chosen)[0])
        feature_count = len(lrm_indices(self.grid, interp[:m]))
        return self._report("RS", maes, feature_count,
                            {"strategy": "RS", "fraction": fraction, "seeds": self.seeds}, {"fraction": fraction})

    def run_rl(self, label: str = "RL", train_cfg: Optional[TrainConfig] = None,
               reward_cfg: Optional[RewardConfig] = None, variant=None) -> EvalReport:
        """Train the selection policy once per seed and score its predictor on the test split."""
        train_cfg = train_cfg or self.train_cfg
        reward_cfg = reward_cfg or self.reward_cfg
        maes, logs, feature_count = [], [], 0
        for seed in self.seeds:
            result = dprl_train(self.train, self.grid, replace(train_cfg, seed=seed), reward_cfg, self.benchmark)
            maes.append(float(prediction_errors(result.model, self.test, self.grid).mean()))
            logs.append(result.log)
            feature_count = len(result.model)
        self.logs[label] = logs
        digest_of = {"train": replace(train_cfg, seed=None), "reward": reward_cfg, "seeds": self.seeds}
        return self._report(label, maes, feature_count, digest_of, variant)


def run_selection_ablation(runner: AblationRunner) -> List[EvalReport]:
    """ALL, RS and RL on identical evaluation triples."""
    return [runner.run_all(), runner.run_random(), runner.run_rl()]


def sweep_proportion(runner: AblationRunner, fractions: Sequence[float] = (1 / 3, 2 / 3, 1.0)) -> List[EvalReport]:
    reports = []
    for fraction in fractions:
        selection_size(runner.grid, fraction)
        cfg = replace(runner.train_cfg, selection_fraction=float(fraction))
        reports.append(runner.run_rl(f"RL@{fraction:.3f}", cfg, variant={"fraction": float(fraction)}))
    return reports


def sweep_action_iterations(runner: AblationRunner, iterations: Sequence[int] = (2, 4, 6, 8)) -> List[EvalReport]:
    reports = []
    for b in iterations:
        cfg = replace(runner.train_cfg, action_iterations=int(b))
        reports.append(runner.run_rl(f"RL-B{b}", cfg, variant={"action_iterations": int(b)}))
    return reports


def sweep_reward_strategy(runner: AblationRunner, strategies: Sequence[str] = ("bcr", "ier", "atr")) -> List[EvalReport]:
    """
    One RL run per reward strategy; only the reward differs between them.

    Raises:
        ConfigurationError: If BCR is requested and the runner has no benchmark
    """
    parsed = [RewardStrategy(str(s).lower()) for s in strategies]
    if RewardStrategy.BCR in parsed and runner.benchmark is None:
        raise ConfigurationError("BCR reward requires a benchmark error table")
    reports = []
    for strategy in parsed:
        cfg = replace(runner.reward_cfg, strategy=strategy)
        reports.append(runner.run_rl(strategy.name, reward_cfg=cfg, variant={"reward": strategy.value}))
    return reports


def sweep_mask(runner: AblationRunner) -> List[EvalReport]:
    """The same training with and without the mask branch input."""
    return [
        runner.run_rl("with-mask", replace(runner.train_cfg, use_mask=True), variant={"use_mask": True}),
        runner.run_rl("without-mask", replace(runner.train_cfg, use_mask=False), variant={"use_mask": False}),
    ]


SWEEP_RUNNERS: Dict[str, Callable[..., List[EvalReport]]] = {
    "selection": lambda runner, sweep: run_selection_ablation(runner),
    "proportion": lambda runner, sweep: sweep_proportion(runner, sweep.fractions),
    "reward": lambda runner, sweep: sweep_reward_strategy(runner, sweep.strategies),
    "mask": lambda runner, sweep: sweep_mask(runner),
    "iterations": lambda runner, sweep: sweep_action_iterations(runner, sweep.iterations),
}


def expand_sweeps(kinds: Sequence[str]) -> List[str]:
    """Resolve 'all' and reject unknown sweep names."""
    expanded: List[str] = []
    for kind in kinds:
        names = SWEEPS if kind == "all" else (kind,)
        for name in names:
            if name not in SWEEP_RUNNERS:
                raise ConfigurationError(f"unknown sweep {name!r}")
            if name not in expanded:
                expanded.append(name)
    return expanded


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams.update({"font.family": "DejaVu Sans", "svg.hashsalt": "segsel"})
    import matplotlib.pyplot as plt

    return plt


def plot_sweep(reports: Sequence[EvalReport], filepath: Union[str, Path], title: str = "") -> None:
    """Median MAE per strategy with the per-seed values overlaid."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [r.strategy for r in reports]
    x = np.arange(len(reports))
    ax.bar(x, [r.mae for r in reports], color="#8fb3d9", label="median")
    for pos, report in zip(x, reports):
        ax.scatter(np.full(len(report.per_seed_mae), pos), report.per_seed_mae, color="#1f3b5c", s=12, zorder=3)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20)
    ax.set_ylabel("MAE (min)")
    ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(filepath, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_convergence(records: Sequence[ConvergenceRecord], filepath: Union[str, Path], title: str = "") -> None:
    """Training MAE and mean reward per epoch."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [r.epoch for r in records]
    ax.plot(epochs, [r.train_mae for r in records], color="#1f3b5c", label="train MAE (min)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MAE (min)")
    twin = ax.twinx()
    twin.plot(epochs, [r.reward_mean for r in records], color="#c0504d", alpha=0.6, label="reward")
    twin.set_ylabel("mean reward")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(filepath, format="svg", metadata={"Date": None})
    plt.close(fig)
