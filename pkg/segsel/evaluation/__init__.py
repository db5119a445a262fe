"""
Evaluation: metrics and the synthetic route generator.

Ablation runners live in segsel.evaluation.ablation.
"""

from .metrics import EvalReport, evaluate_selection, evaluation_triples, mae, prediction_errors
from .synthetic import generate_synthetic_route

__all__ = [
    "EvalReport",
    "evaluate_selection",
    "evaluation_triples",
    "mae",
    "prediction_errors",
    "generate_synthetic_route",
]
