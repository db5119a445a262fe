"""
segsel - non-uniform road-segment selection for bus arrival-time prediction.

This package learns which interpolation points of a bus route should feed a
Gaussian linear arrival-time predictor.
"""

__version__ = "0.1.0"
__all__ = ["preprocessing", "learning", "evaluation", "config", "errors", "utils"]
