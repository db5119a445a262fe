"""
Predictor, features and selection policy.

The training loop lives in segsel.learning.training and is imported from
there directly.
"""

from .lrm import GaussianEtaModel, estimate_moments, predict_batch, predict_eta, restrict_model
from .features import FeatureScaler, RlState, SelectionState, assemble_state, encode_segment
from .policy import ActionBounds, ActionMatrix, PolicyParams, apply_actions, compute_bounds, forward

__all__ = [
    "GaussianEtaModel",
    "estimate_moments",
    "predict_batch",
    "predict_eta",
    "restrict_model",
    "FeatureScaler",
    "RlState",
    "SelectionState",
    "assemble_state",
    "encode_segment",
    "ActionBounds",
    "ActionMatrix",
    "PolicyParams",
    "apply_actions",
    "compute_bounds",
    "forward",
]
