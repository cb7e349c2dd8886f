"""Conformal prediction sets for classification with adaptive (generalized
inverse quantile) conformity scores, calibrated by split conformal, CV+ or the
jackknife+ around any probabilistic classifier."""

from .calibrate import (
    CVPlusClassifier,
    HomogeneousConformalClassifier,
    JackknifePlusClassifier,
    SplitConformalClassifier,
    conformal_quantile,
)
from .core import LabeledDataset, RandomSource, split_indices
from .metrics import EvaluationReport, evaluate, marginal_coverage, size_metrics, worst_slice_coverage
from .models import KNNProbaClassifier, LogisticRegressionGD, OracleClassifier
from .scores import conformity_score, conformity_scores, score_matrix
from .synthdata import generate_multinomial_inhomogeneous

__version__ = "0.1.0"

__all__ = [
    "CVPlusClassifier",
    "EvaluationReport",
    "HomogeneousConformalClassifier",
    "JackknifePlusClassifier",
    "KNNProbaClassifier",
    "LabeledDataset",
    "LogisticRegressionGD",
    "OracleClassifier",
    "RandomSource",
    "SplitConformalClassifier",
    "conformal_quantile",
    "conformity_score",
    "conformity_scores",
    "evaluate",
    "generate_multinomial_inhomogeneous",
    "marginal_coverage",
    "score_matrix",
    "size_metrics",
    "split_indices",
    "worst_slice_coverage",
]
