"""
Run Configuration

This module defines the configuration tree of a segsel run, loads it from
YAML documents and validates it per command before anything is computed.
"""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .errors import ConfigurationError
from .utils import digest

logger = logging.getLogger(__name__)

COMMANDS = ("ingest", "synth", "train", "evaluate", "ablate")
SEEDED_COMMANDS = ("synth", "train", "ablate")
SWEEPS = ("selection", "proportion", "reward", "mask", "iterations")


class IssueLevel(Enum):
    """Severity levels for configuration issues."""
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"
    CRITICAL = "critical"


@dataclass
class ValidationIssue:
    """A problem found in a run configuration."""
    level: IssueLevel
    category: str
    message: str
    field: str = ""
    suggestion: str = ""


class RewardStrategy(Enum):
    """Reward used for the policy update."""
    BCR = "bcr"
    IER = "ier"
    ATR = "atr"


@dataclass
class IngestConfig:
    tau: float = 300.0
    spacing: float = 100.0
    utc_offset_hours: float = 0.0


@dataclass
class RewardConfig:
    """
    Reward settings.

    `benchmark` is the path of a benchmark error table, or "all" to derive one
    from the all-segments predictor on the training split. BCR needs one.
    """
    strategy: RewardStrategy = RewardStrategy.ATR
    epsilon: float = 0.1
    benchmark: Optional[str] = None


@dataclass
class TrainConfig:
    """Hyperparameters of the selection training loop."""
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_milestone: int = 40
    lr_step: int = 20
    lr_gamma: float = 0.1
    action_iterations: int = 2
    selection_fraction: float = 2 / 3
    use_mask: bool = True
    commit: str = "last"
    seed: Optional[int] = None


@dataclass
class SyntheticRouteConfig:
    """Parameters of the synthetic heterogeneous route."""
    n_segments: int = 50
    spacing: float = 100.0
    hotspot_indices: Tuple[int, ...] = (7, 16, 23, 34, 42)
    hotspot_delay_mean: float = 60.0
    hotspot_delay_std: float = 30.0
    base_speed: float = 8.0
    base_noise_std: float = 4.0
    trips_train: int = 300
    trips_test: int = 50
    time_of_day_effect: float = 2.0
    congestion_coupling: float = 0.8
    stop_every: int = 5
    intersection_indices: Tuple[int, ...] = ()
    line_count: int = 1
    route_id: str = "synthetic"
    seed: Optional[int] = None


@dataclass
class SweepConfig:
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    fractions: Tuple[float, ...] = (1 / 3, 2 / 3, 1.0)
    iterations: Tuple[int, ...] = (2, 4, 6, 8)
    strategies: Tuple[str, ...] = ("bcr", "ier", "atr")
    kinds: Tuple[str, ...] = ("selection",)


@dataclass
class PathsConfig:
    trajectories: Optional[str] = None
    route: Optional[str] = None
    data: Optional[str] = None
    checkpoint: Optional[str] = None
    out: str = "out"


@dataclass
class RunConfig:
    """Complete, command-scoped parameter tree."""
    seed: Optional[int] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    synthetic: SyntheticRouteConfig = field(default_factory=SyntheticRouteConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> Dict[str, Any]:
        tree = asdict(self)
        tree["reward"]["strategy"] = self.reward.strategy.value
        return tree

    @property
    def digest(self) -> str:
        """Digest of every section except paths; moving inputs or outputs keeps it."""
        return config_digest(self)


_SECTIONS = {
    "train": TrainConfig,
    "reward": RewardConfig,
    "synthetic": SyntheticRouteConfig,
    "ingest": IngestConfig,
    "sweep": SweepConfig,
    "paths": PathsConfig,
}


def _build_section(name: str, cls, values: Any):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigurationError(f"section '{name}' must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in '{name}': {', '.join(unknown)}")
    kwargs = {}
    for key, value in values.items():
        default = getattr(cls(), key)
        if isinstance(default, tuple) and value is not None:
            value = tuple(value) if isinstance(value, (list, tuple)) else (value,)
        if key == "strategy":
            try:
                value = RewardStrategy(str(value).lower())
            except ValueError as exc:
                raise ConfigurationError(f"unknown reward strategy {value!r}") from exc
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(doc: Optional[Dict[str, Any]]) -> RunConfig:
    """
    Build a RunConfig from a parsed document.

    The master seed is copied into the train and synthetic sections when they
    carry none of their own.

    Raises:
        ConfigurationError: On unknown sections or keys
    """
    doc = dict(doc or {})
    unknown = sorted(set(doc) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigurationError(f"unknown config section(s): {', '.join(unknown)}")
    seed = doc.get("seed")
    sections = {name: _build_section(name, cls, doc.get(name)) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(seed=None if seed is None else int(seed), **sections)
    return resolve_seeds(cfg)


def resolve_seeds(cfg: RunConfig) -> RunConfig:
    """Propagate the master seed into sections that have none."""
    if cfg.seed is None:
        return cfg
    train = cfg.train if cfg.train.seed is not None else replace(cfg.train, seed=cfg.seed)
    synthetic = cfg.synthetic if cfg.synthetic.seed is not None else replace(cfg.synthetic, seed=cfg.seed)
    return replace(cfg, train=train, synthetic=synthetic)


def load_config(filepath: Optional[str]) -> RunConfig:
    """Load a YAML run configuration; None yields the defaults."""
    if filepath is None:
        return RunConfig()
    with open(filepath, "r", encoding="utf-8") as f:
        try:
            doc = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{filepath}: {exc}") from exc
    if doc is not None and not isinstance(doc, dict):
        raise ConfigurationError(f"{filepath}: top level must be a mapping")
    logger.debug("Loaded config from %s", filepath)
    return config_from_dict(doc)


def config_digest(cfg: Any) -> str:
    """SHA-256 digest (16 hex chars) of the canonical JSON form of a config."""
    if isinstance(cfg, RunConfig):
        tree = cfg.to_dict()
        tree.pop("paths")
        return digest(tree)
    if hasattr(cfg, "__dataclass_fields__"):
        return digest(asdict(cfg))
    return digest(cfg)


class RunConfigValidator:
    """Validates a RunConfig for one CLI command."""

    def __init__(self, cfg: RunConfig, command: str):
        """
        Initialize validator.

        Args:
            cfg: Resolved configuration (flags already applied)
            command: One of COMMANDS
        """
        if command not in COMMANDS:
            raise ConfigurationError(f"unknown command {command!r}")
        self.cfg = cfg
        self.command = command

    def _error(self, category, message, name, suggestion=""):
        return ValidationIssue(IssueLevel.ERROR, category, message, name, suggestion)

    def validate_seed(self) -> List[ValidationIssue]:
        if self.command not in SEEDED_COMMANDS:
            return []
        seed = self.cfg.synthetic.seed if self.command == "synth" else self.cfg.train.seed
        if seed is None:
            return [self._error(
                "Determinism", f"a seed is mandatory for '{self.command}'", "seed",
                "Set 'seed:' in the config file or pass --seed",
            )]
        return []

    def validate_paths(self) -> List[ValidationIssue]:
        paths = self.cfg.paths
        required = {
            "ingest": ("trajectories", "route"),
            "train": ("data",),
            "evaluate": ("data", "checkpoint"),
            "ablate": ("data",),
        }.get(self.command, ())
        issues = []
        for name in required:
            value = getattr(paths, name)
            if value is None:
                issues.append(self._error("Paths", f"no {name} path given", f"paths.{name}",
                                          f"Pass --{name} or set paths.{name}"))
            elif not Path(value).exists():
                issues.append(self._error("Paths", f"path does not exist: {value}", f"paths.{name}"))
        benchmark = self.cfg.reward.benchmark
        if benchmark not in (None, "all") and not Path(benchmark).exists():
            issues.append(self._error("Paths", f"path does not exist: {benchmark}", "reward.benchmark"))
        return issues

    def validate_training(self) -> List[ValidationIssue]:
        if self.command not in ("train", "ablate"):
            return []
        t = self.cfg.train
        checks = [
            (t.epochs >= 0, "epochs must be non-negative", "train.epochs"),
            (t.batch_size >= 1, "batch_size must be positive", "train.batch_size"),
            (t.lr > 0, "lr must be positive", "train.lr"),
            (0 <= t.momentum < 1, "momentum must lie in [0, 1)", "train.momentum"),
            (t.weight_decay >= 0, "weight_decay must be non-negative", "train.weight_decay"),
            (t.lr_step >= 1 and t.lr_milestone >= 0, "lr schedule steps must be positive", "train.lr_step"),
            (0 < t.lr_gamma <= 1, "lr_gamma must lie in (0, 1]", "train.lr_gamma"),
            (t.action_iterations >= 1, "action_iterations must be positive", "train.action_iterations"),
            (0 < t.selection_fraction <= 1, "selection_fraction must lie in (0, 1]", "train.selection_fraction"),
            (t.commit in ("best", "last"), "commit must be 'best' or 'last'", "train.commit"),
            (self.cfg.reward.epsilon > 0, "reward epsilon must be positive", "reward.epsilon"),
        ]
        issues = [self._error("Training", message, name) for ok, message, name in checks if not ok]
        if self.cfg.reward.strategy is RewardStrategy.BCR and self.cfg.reward.benchmark is None:
            issues.append(self._error(
                "Reward", "BCR reward requires a benchmark error table", "reward.benchmark",
                "Set reward.benchmark to a table path or to 'all'",
            ))
        if t.epochs == 0:
            issues.append(ValidationIssue(
                IssueLevel.WARNING, "Training", "epochs = 0 keeps the random initial selection", "train.epochs",
            ))
        if t.commit == "best":
            issues.append(ValidationIssue(
                IssueLevel.INFO, "Training", "commit = best keeps the highest-reward candidate of each epoch",
                "train.commit", "Leave commit at 'last' to commit the chained selection",
            ))
        if self.command == "ablate":
            unknown = [k for k in self.cfg.sweep.kinds if k not in SWEEPS]
            if unknown:
                issues.append(self._error("Sweep", f"unknown sweep(s): {', '.join(unknown)}", "sweep.kinds"))
            if not self.cfg.sweep.seeds:
                issues.append(self._error("Sweep", "sweep needs at least one seed", "sweep.seeds"))
            if ("reward" in self.cfg.sweep.kinds and "bcr" in self.cfg.sweep.strategies
                    and self.cfg.reward.benchmark is None):
                issues.append(self._error(
                    "Reward", "the reward sweep includes BCR but no benchmark table is configured",
                    "reward.benchmark", "Set reward.benchmark to a table path or to 'all'",
                ))
        return issues

    def validate_synthetic(self) -> List[ValidationIssue]:
        if self.command != "synth":
            return []
        s = self.cfg.synthetic
        issues = []
        checks = [
            (s.n_segments >= 2, "n_segments must be at least 2", "synthetic.n_segments"),
            (s.spacing > 0, "spacing must be positive", "synthetic.spacing"),
            (s.base_speed > 0, "base_speed must be positive", "synthetic.base_speed"),
            (s.hotspot_delay_std >= 0 and s.base_noise_std >= 0, "standard deviations must be non-negative",
             "synthetic.base_noise_std"),
            (s.trips_train >= 2, "trips_train must be at least 2 (the predictor needs V >= 2)",
             "synthetic.trips_train"),
            (s.trips_test >= 2, "trips_test must be at least 2", "synthetic.trips_test"),
            (s.stop_every >= 1, "stop_every must be positive", "synthetic.stop_every"),
            (s.line_count >= 1, "line_count must be positive", "synthetic.line_count"),
            (0 <= s.congestion_coupling <= 1, "congestion_coupling must lie in [0, 1]",
             "synthetic.congestion_coupling"),
        ]
        issues.extend(self._error("Synthetic", message, name) for ok, message, name in checks if not ok)
        out_of_range = [i for i in s.hotspot_indices if not 0 <= i < s.n_segments]
        if out_of_range:
            issues.append(self._error(
                "Synthetic", f"hotspot indices {out_of_range} outside [0, {s.n_segments})",
                "synthetic.hotspot_indices",
            ))
        bad_intersections = [i for i in s.intersection_indices if not 0 < i < s.n_segments]
        if bad_intersections:
            issues.append(self._error(
                "Synthetic", f"intersection indices {bad_intersections} outside (0, {s.n_segments})",
                "synthetic.intersection_indices",
            ))
        return issues

    def validate_all(self) -> List[ValidationIssue]:
        """Run every check that applies to the command."""
        issues: List[ValidationIssue] = []
        issues.extend(self.validate_seed())
        issues.extend(self.validate_paths())
        issues.extend(self.validate_training())
        issues.extend(self.validate_synthetic())
        return issues


def format_issues(issues: List[ValidationIssue]) -> str:
    """Human-readable listing of validation issues."""
    if not issues:
        return "No issues found."
    lines = []
    for issue in issues:
        where = f" ({issue.field})" if issue.field else ""
        lines.append(f"{issue.level.value.upper()} [{issue.category}]{where}: {issue.message}")
        if issue.suggestion:
            lines.append(f"  Suggestion: {issue.suggestion}")
    return "\n".join(lines)


def validate_run_config(cfg: RunConfig, command: str) -> List[ValidationIssue]:
    """
    Validate a run configuration for a command.

    Args:
        cfg: Resolved RunConfig
        command: CLI command name

    Returns:
        List of ValidationIssue objects (possibly empty)
    """
    return RunConfigValidator(cfg, command).validate_all()


def require_valid(cfg: RunConfig, command: str) -> List[ValidationIssue]:
    """
    Validate and abort on blocking issues.

    Returns:
        The non-blocking issues

    Raises:
        ConfigurationError: Listing every issue when any is ERROR or CRITICAL
    """
    issues = validate_run_config(cfg, command)
    blocking = [i for i in issues if i.level in (IssueLevel.ERROR, IssueLevel.CRITICAL)]
    if blocking:
        raise ConfigurationError("invalid configuration:\n" + format_issues(issues))
    for issue in issues:
        level = logging.INFO if issue.level is IssueLevel.INFO else logging.WARNING
        logger.log(level, "%s", format_issues([issue]))
    return issues


if __name__ == '__main__':
    # Example usage
    sample = yaml.safe_load("""
seed: 7
train: {epochs: 2}
synthetic: {trips_train: 1}
""")
    cfg = config_from_dict(sample)
    print(format_issues(validate_run_config(cfg, "synth")))
    print("digest:", cfg.digest)
