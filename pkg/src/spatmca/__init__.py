"""Regularized spatial maximum covariance analysis.

Smooth, sparse, orthonormal coupled patterns between two spatial fields,
estimated by ADMM, with cross-validated tuning and rank selection.
"""

__version__ = "0.1.0"

from .admm import CoupledPatterns, PenaltyConfig, SolverState, solve  # noqa: E402
from .crosscov import PairedSample, center_columns, max_singular_value, sample_cross_cov  # noqa: E402
from .model import (  # noqa: E402
    CoupledPatternModel,
    estimate_d,
    fit,
    predict_cross_cov,
    predict_patterns,
    reconstruct_cross_cov,
)
from .tps import LocationSet, roughness_matrix  # noqa: E402
from .tuning import CVConfig, CVResult, cv_score, make_folds, select_rank  # noqa: E402

__all__ = [
    "CVConfig",
    "CVResult",
    "CoupledPatternModel",
    "CoupledPatterns",
    "LocationSet",
    "PairedSample",
    "PenaltyConfig",
    "SolverState",
    "center_columns",
    "cv_score",
    "estimate_d",
    "fit",
    "make_folds",
    "max_singular_value",
    "predict_cross_cov",
    "predict_patterns",
    "reconstruct_cross_cov",
    "roughness_matrix",
    "sample_cross_cov",
    "select_rank",
    "solve",
]
