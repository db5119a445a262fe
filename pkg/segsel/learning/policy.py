"""
Selection Policy Network

A small convolutional network that reads the selection state and emits, for
every selected interpolation point, the probability of moving it one grid
step left (action 0) or right (action 1). Includes conflict-free index
updates and analytic gradients of the policy-gradient loss.
"""

import logging
from dataclasses import dataclass, fields
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, NumericalError
from .features import FEATURE_DIM, RlState

logger = logging.getLogger(__name__)

PARAMS_VERSION = 1
CONV_CHANNELS = 16
CONV_WIDTH = 3
HIDDEN = 32
OUTPUT_INIT_SCALE = 0.01


@dataclass
class PolicyParams:
    """Weights of the selection network; also used as the gradient container."""
    conv_w: np.ndarray  # (16, 8, 3): out channels, in channels, taps
    conv_b: np.ndarray
    fc1_w: np.ndarray   # (32, 16)
    fc1_b: np.ndarray
    fc2_w: np.ndarray   # (32, n_interp)
    fc2_b: np.ndarray
    fc3_w: np.ndarray   # (2M, 64)
    fc3_b: np.ndarray

    @classmethod
    def names(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def items(self) -> Iterable[Tuple[str, np.ndarray]]:
        return ((name, getattr(self, name)) for name in self.names())

    @property
    def n_interp(self) -> int:
        return self.fc2_w.shape[1]

    @property
    def m(self) -> int:
        return self.fc3_w.shape[0] // 2

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams(**{name: np.zeros_like(value) for name, value in self.items()})

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{name: value.copy() for name, value in self.items()})

    def check_finite(self, epoch=None) -> None:
        for name, value in self.items():
            if not np.all(np.isfinite(value)):
                raise NumericalError("non-finite weights", layer=name, epoch=epoch)


@dataclass(frozen=True, eq=False)
class ActionMatrix:
    """M × 2 action probabilities; column 0 moves left, column 1 moves right."""
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[1] != 2:
            raise ConfigurationError(f"action matrix must be (M, 2), got {probs.shape}")
        if np.any(probs < 0) or np.any(probs > 1) or np.any(np.abs(probs.sum(axis=1) - 1) > 1e-9):
            raise NumericalError("action probabilities are not row-stochastic", layer="softmax")
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True)
class ActionBounds:
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class EpisodeStep:
    """One executed action iteration."""
    state: RlState
    actions: np.ndarray
    reward: float


def init_params(n_interp: int, m: int, rng: np.random.Generator) -> PolicyParams:
    """Gaussian weights scaled by 1/sqrt(fan_in); the output layer starts near uniform."""
    if n_interp < 1 or m < 1:
        raise ConfigurationError(f"need n_interp >= 1 and M >= 1, got {n_interp}, {m}")

    def dense(out_dim, in_dim, scale=1.0):
        return scale * rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)

    conv_fan_in = FEATURE_DIM * CONV_WIDTH
    return PolicyParams(
        conv_w=rng.standard_normal((CONV_CHANNELS, FEATURE_DIM, CONV_WIDTH)) / np.sqrt(conv_fan_in),
        conv_b=np.zeros(CONV_CHANNELS),
        fc1_w=dense(HIDDEN, CONV_CHANNELS),
        fc1_b=np.zeros(HIDDEN),
        fc2_w=dense(HIDDEN, n_interp),
        fc2_b=np.zeros(HIDDEN),
        fc3_w=dense(2 * m, 2 * HIDDEN, OUTPUT_INIT_SCALE),
        fc3_b=np.zeros(2 * m),
    )


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _require_finite(value: np.ndarray, layer: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NumericalError("non-finite activation", layer=layer)
    return value


def _forward_cache(params: PolicyParams, state: RlState, use_mask: bool) -> Dict[str, np.ndarray]:
    s_a = np.asarray(state.s_a, dtype=float)
    s_b = np.asarray(state.s_b, dtype=float)
    if s_a.ndim != 2 or s_a.shape[1] != FEATURE_DIM:
        raise ConfigurationError(f"S_a must be (rows, {FEATURE_DIM}), got {s_a.shape}")
    if s_b.shape != (params.n_interp,):
        raise ConfigurationError(f"S_b has length {s_b.size}, network expects {params.n_interp}")
    if int(round(s_b.sum())) != params.m:
        raise ConfigurationError(f"state selects {int(s_b.sum())} points, network expects M = {params.m}")

    pad = CONV_WIDTH // 2
    padded = np.pad(s_a, ((pad, pad), (0, 0)))
    windows = sliding_window_view(padded, CONV_WIDTH, axis=0)  # (rows, channels, taps)
    h1 = np.tanh(_require_finite(np.einsum("rck,ock->ro", windows, params.conv_w) + params.conv_b, "conv"))
    pooled = h1.mean(axis=0)
    h2 = np.tanh(_require_finite(params.fc1_w @ pooled + params.fc1_b, "fc1"))
    mask_in = s_b if use_mask else np.zeros_like(s_b)
    h3 = np.tanh(_require_finite(params.fc2_w @ mask_in + params.fc2_b, "fc2"))
    joined = np.concatenate([h2, h3])
    logits = _require_finite(params.fc3_w @ joined + params.fc3_b, "fc3").reshape(params.m, 2)
    return {
        "windows": windows, "h1": h1, "pooled": pooled, "h2": h2,
        "mask_in": mask_in, "h3": h3, "joined": joined, "probs": _softmax_rows(logits),
    }


def forward(params: PolicyParams, state: RlState, use_mask: bool = True) -> ActionMatrix:
    """
    Action probabilities for a state.

    Args:
        params: Network weights
        state: Assembled RL state
        use_mask: False feeds zeros to the mask branch

    Returns:
        ActionMatrix of shape (M, 2)

    Raises:
        ConfigurationError: On shape mismatch
    """
    return ActionMatrix(_forward_cache(params, state, use_mask)["probs"])


def compute_bounds(indices: Sequence[int], last_index: int) -> ActionBounds:
    """
    Adjustment range of each selected point.

    upper_i is the rounded-up midpoint to the next point (last_index for the
    final point); lower_i the rounded-up midpoint to the previous one (0 for
    the first point).
    """
    idx = np.asarray(indices, dtype=int)
    mid = (idx[:-1] + idx[1:] + 1) // 2
    upper = np.append(mid, int(last_index))
    lower = np.insert(mid, 0, 0)
    return ActionBounds(lower=lower, upper=upper)


def apply_actions(
    indices: Sequence[int],
    actions: Sequence[int],
    bounds: ActionBounds,
    blocked: Iterable[int] = (),
) -> Tuple[int, ...]:
    """
    Move every selected point at most one step.

    Action 0 moves left unless the point sits on its lower bound; action 1
    moves right unless that would reach the upper bound. A move onto a
    blocked (landmark) index becomes a null move.
    """
    idx = np.asarray(indices, dtype=int)
    act = np.asarray(actions, dtype=int)
    if act.shape != idx.shape or np.any((act != 0) & (act != 1)):
        raise ConfigurationError(f"actions must be {idx.size} values in {{0, 1}}")
    left = -np.clip(idx - bounds.lower, 0, 1)
    right = np.clip(bounds.upper - idx - 1, 0, 1)
    step = np.where(act == 0, left, right)
    moved = idx + step
    step[np.isin(moved, np.fromiter(blocked, dtype=int))] = 0
    return tuple(int(i) for i in idx + step)


def sample_actions(A: ActionMatrix, rng: np.random.Generator) -> np.ndarray:
    """Row-wise categorical draw; 1 with probability A[i, 1]."""
    u = rng.random(A.probs.shape[0])
    return (u < A.probs[:, 1]).astype(int)


def greedy_actions(A: ActionMatrix) -> np.ndarray:
    return (A.probs[:, 1] > A.probs[:, 0]).astype(int)


def _check_episode(episode: Sequence[EpisodeStep]) -> None:
    if not episode:
        raise ConfigurationError("episode is empty")
    rewards = np.array([step.reward for step in episode], dtype=float)
    if not np.all(np.isfinite(rewards)):
        raise NumericalError("non-finite reward in episode", layer="reward")


def policy_loss(params: PolicyParams, episode: Sequence[EpisodeStep], use_mask: bool = True) -> float:
    """Mean over steps and points of -log pi(a) * r."""
    _check_episode(episode)
    total = 0.0
    for step in episode:
        probs = _forward_cache(params, step.state, use_mask)["probs"]
        chosen = probs[np.arange(params.m), np.asarray(step.actions, dtype=int)]
        total -= float(step.reward) * float(np.log(chosen).sum())
    return total / (len(episode) * params.m)


def backward(params: PolicyParams, episode: Sequence[EpisodeStep], use_mask: bool = True) -> PolicyParams:
    """
    Gradient of policy_loss with respect to every parameter.

    Args:
        params: Network weights
        episode: Executed steps with their broadcast rewards
        use_mask: Must match the forward passes that produced the episode

    Returns:
        PolicyParams holding the gradients

    Raises:
        NumericalError: On a non-finite reward or gradient, naming the layer
    """
    _check_episode(episode)
    grads = params.zeros_like()
    scale = 1.0 / (len(episode) * params.m)
    rows = np.arange(params.m)

    for step in episode:
        cache = _forward_cache(params, step.state, use_mask)
        onehot = np.zeros_like(cache["probs"])
        onehot[rows, np.asarray(step.actions, dtype=int)] = 1.0
        d_logits = (-float(step.reward) * scale * (onehot - cache["probs"])).ravel()

        grads.fc3_w += np.outer(d_logits, cache["joined"])
        grads.fc3_b += d_logits
        d_joined = params.fc3_w.T @ d_logits

        d_z2 = d_joined[:HIDDEN] * (1.0 - cache["h2"] ** 2)
        grads.fc1_w += np.outer(d_z2, cache["pooled"])
        grads.fc1_b += d_z2
        d_pooled = params.fc1_w.T @ d_z2

        d_z3 = d_joined[HIDDEN:] * (1.0 - cache["h3"] ** 2)
        grads.fc2_w += np.outer(d_z3, cache["mask_in"])
        grads.fc2_b += d_z3

        h1 = cache["h1"]
        d_z1 = (d_pooled / h1.shape[0])[None, :] * (1.0 - h1 ** 2)
        grads.conv_w += np.einsum("ro,rck->ock", d_z1, cache["windows"])
        grads.conv_b += d_z1.sum(axis=0)

    for name, value in grads.items():
        if not np.all(np.isfinite(value)):
            raise NumericalError("non-finite gradient", layer=name)
    return grads


def params_to_dict(params: PolicyParams) -> Dict[str, Any]:
    return {
        "version": PARAMS_VERSION,
        "shapes": {name: list(value.shape) for name, value in params.items()},
        "weights": {name: value.ravel().tolist() for name, value in params.items()},
    }


def params_from_dict(doc: Dict[str, Any]) -> PolicyParams:
    if doc.get("version") != PARAMS_VERSION:
        raise ConfigurationError(f"unsupported policy version {doc.get('version')!r}")
    missing = [n for n in PolicyParams.names() if n not in doc["weights"]]
    if missing:
        raise ConfigurationError(f"policy checkpoint lacks {', '.join(missing)}")
    return PolicyParams(**{
        name: np.array(doc["weights"][name], dtype=float).reshape(doc["shapes"][name])
        for name in PolicyParams.names()
    })


def flatten(params: PolicyParams) -> np.ndarray:
    return np.concatenate([value.ravel() for _, value in params.items()])


def layer_summary(params: PolicyParams) -> List[str]:
    return [f"{name}: {tuple(value.shape)}" for name, value in params.items()]


if __name__ == '__main__':
    # Example usage
    rng = np.random.default_rng(0)
    params = init_params(n_interp=6, m=3, rng=rng)
    print("\n".join(layer_summary(params)))
    bounds = compute_bounds([2, 5, 9], 12)
    print("Bounds:", bounds.lower.tolist(), bounds.upper.tolist())
    print("Moved:", apply_actions([2, 5, 9], [0, 1, 1], bounds, blocked={6}))
