"""Conformal calibrators wrapping any ``fit``/``predict_proba`` classifier.

* :class:`SplitConformalClassifier`: one train/calibration split; the set at a
  test point holds every label whose conformity score is at most the
  calibrated threshold.
* :class:`CVPlusClassifier` / :class:`JackknifePlusClassifier`: K-fold (or
  leave-one-out) hold-out scores compared label by label against the test
  point's scores under the same fold model.
* :class:`HomogeneousConformalClassifier`: the baseline that thresholds
  ``1 - p_hat(y | x)`` with one cut-off for every ``x``.

``predict`` returns an ``(n_samples, n_classes)`` boolean membership mask;
``predict_sets`` returns the same sets as ``frozenset`` objects.
"""

from __future__ import annotations

import math

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from .core import (
    LabeledDataset,
    RandomSource,
    as_random_source,
    check_alpha,
    mask_to_sets,
    split_indices,
)
from .models import LogisticRegressionGD, _check_X, _check_Xy, full_proba
from .scores import conformity_scores, score_matrix


def _ceil_level(x: float) -> int:
    # (1 - alpha) * (m + 1) lands a few ulps above an integer for many alphas
    return math.ceil(round(x, 9))


def conformal_quantile(scores, alpha: float) -> float:
    """The ``ceil((1 - alpha)(m + 1))``-th smallest of ``m`` scores, or 1.0 past the end."""
    alpha = check_alpha(alpha)
    scores = np.asarray(scores, dtype=float).ravel()
    m = scores.size
    if m == 0:
        raise ValueError("need at least one calibration score")
    k = _ceil_level((1.0 - alpha) * (m + 1))
    if k > m:
        return 1.0
    return float(np.partition(scores, k - 1)[k - 1])


def _resolve_estimator(estimator):
    if estimator is None:
        return LogisticRegressionGD()
    if callable(estimator) and not hasattr(estimator, "fit"):
        return estimator()
    return clone(estimator)


def _n_classes(y, n_classes):
    C = int(y.max()) + 1 if n_classes is None else int(n_classes)
    if y.max() >= C:
        raise ValueError(f"label {int(y.max())} out of range for {C} classes")
    return max(C, 2)


class _SetPredictorMixin:
    """Shared plumbing: randomness, uniforms and set formatting."""

    def _init_streams(self):
        rng = as_random_source(self.random_state)
        self._split_rng, self._calib_rng, self._predict_rng = rng.split(3)

    def _draw_u(self, n, u):
        if u is None:
            return self._predict_rng.uniform(n)
        u = np.broadcast_to(np.asarray(u, dtype=float), (n,))
        if np.any((u < 0) | (u > 1)):
            raise ValueError("u must lie in [0, 1]")
        return u

    def predict_sets(self, X, u=None, **kwargs) -> list[frozenset[int]]:
        return mask_to_sets(self.predict(X, u=u, **kwargs))


class SplitConformalClassifier(_SetPredictorMixin, BaseEstimator):
    """Adaptive prediction sets calibrated on a held-out split.

    Parameters
    ----------
    estimator : classifier, default=None
        Anything with ``fit`` and ``predict_proba``; cloned before fitting.
        ``None`` uses :class:`LogisticRegressionGD`.
    alpha : float, default=0.1
        Target miscoverage level.
    train_size : float, default=0.5
        Fraction of rows used to train the estimator; the rest calibrate.
    n_classes : int, optional
        Number of classes; inferred as ``max(y) + 1`` when omitted.
    random_state : int, RandomSource or None
    """

    def __init__(self, estimator=None, alpha=0.1, train_size=0.5, n_classes=None,
                 random_state=None):
        self.estimator = estimator
        self.alpha = alpha
        self.train_size = train_size
        self.n_classes = n_classes
        self.random_state = random_state

    def _calibration_scores(self, P, y, u):
        return conformity_scores(P, y, u, self._calib_rng)

    def fit(self, X, y, u=None):
        """Train on one part and calibrate on the other.

        ``u`` optionally supplies the calibration uniforms, one per row of
        ``X`` (only the calibration rows are used).
        """
        X, y = _check_Xy(X, y)
        check_alpha(self.alpha)
        if X.shape[0] < 2:
            raise ValueError("split calibration needs at least 2 samples")
        if not 0.0 < self.train_size < 1.0:
            raise ValueError(f"train_size must lie in (0, 1), got {self.train_size}")
        self._init_streams()
        self.n_classes_ = _n_classes(y, self.n_classes)
        self.classes_ = np.arange(self.n_classes_)
        train, calib = split_indices(
            X.shape[0], (self.train_size, 1.0 - self.train_size), self._split_rng
        )
        self.train_index_, self.calib_index_ = train, calib
        self.estimator_ = _resolve_estimator(self.estimator).fit(X[train], y[train])
        P = full_proba(self.estimator_, X[calib], self.n_classes_)
        if u is None:
            u_cal = self._calib_rng.uniform(calib.size)
        else:
            u_cal = np.broadcast_to(np.asarray(u, dtype=float), (X.shape[0],))[calib]
        self.calib_u_ = u_cal
        self.calib_scores_ = self._calibration_scores(P, y[calib], u_cal)
        self.threshold_ = conformal_quantile(self.calib_scores_, self.alpha)
        return self

    def threshold_for(self, alpha) -> float:
        check_is_fitted(self, "calib_scores_")
        return conformal_quantile(self.calib_scores_, alpha)

    def predict(self, X, u=None, alpha=None) -> np.ndarray:
        """Membership mask of the prediction sets at ``X``.

        Label ``y`` is included when its score is at most the threshold and its
        estimated probability is positive. ``alpha`` re-thresholds the stored
        calibration scores without refitting.
        """
        check_is_fitted(self, "calib_scores_")
        X = _check_X(X)
        tau = self.threshold_ if alpha is None else self.threshold_for(alpha)
        P = full_proba(self.estimator_, X, self.n_classes_)
        E = score_matrix(P, self._draw_u(X.shape[0], u), self._predict_rng)
        return (E <= tau) & (P > 0.0)


class HomogeneousConformalClassifier(SplitConformalClassifier):
    """Split calibration of the plain score ``1 - p_hat(y | x)``; no randomization.

    The set is ``{y : p_hat(y | x) >= 1 - threshold}``, one probability cut-off
    shared by easy and hard inputs alike.
    """

    def _calibration_scores(self, P, y, u):
        return 1.0 - P[np.arange(P.shape[0]), y]

    def predict(self, X, u=None, alpha=None) -> np.ndarray:
        check_is_fitted(self, "calib_scores_")
        X = _check_X(X)
        tau = self.threshold_ if alpha is None else self.threshold_for(alpha)
        P = full_proba(self.estimator_, X, self.n_classes_)
        if tau >= 1.0:
            return np.ones_like(P, dtype=bool)
        return 1.0 - P <= tau


def _fit_one(estimator, X, y):
    return _resolve_estimator(estimator).fit(X, y)


class CVPlusClassifier(_SetPredictorMixin, BaseEstimator):
    """Adaptive prediction sets calibrated by K-fold hold-out scores.

    Label ``y`` enters the set at ``x`` when fewer than ``(1 - alpha)(n + 1)``
    hold-out scores are strictly below the score of ``(x, y)`` computed with
    the same fold's model.

    Parameters
    ----------
    estimator : classifier, default=None
    alpha : float, default=0.1
    n_folds : int or None, default=10
        ``None`` means one fold per sample (jackknife+).
    n_classes : int, optional
    random_state : int, RandomSource or None
    n_jobs : int or None
        Width for fitting fold models in parallel. Estimators exposing
        ``fit_many`` fit all folds in one call instead.
    """

    def __init__(self, estimator=None, alpha=0.1, n_folds=10, n_classes=None,
                 random_state=None, n_jobs=None):
        self.estimator = estimator
        self.alpha = alpha
        self.n_folds = n_folds
        self.n_classes = n_classes
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _fit_fold_models(self, X, y, train_sets):
        est = _resolve_estimator(self.estimator)
        if hasattr(est, "fit_many"):
            return est.fit_many(X, y, train_sets)
        return Parallel(n_jobs=self.n_jobs)(
            delayed(_fit_one)(self.estimator, X[tr], y[tr]) for tr in train_sets
        )

    def fit(self, X, y, u=None):
        X, y = _check_Xy(X, y)
        check_alpha(self.alpha)
        n = X.shape[0]
        K = n if self.n_folds is None else int(self.n_folds)
        if not 2 <= K <= n:
            raise ValueError(f"need 2 <= n_folds <= n_samples={n}, got {K}")
        self._init_streams()
        self.n_classes_ = _n_classes(y, self.n_classes)
        self.classes_ = np.arange(self.n_classes_)
        self.n_folds_ = K
        folds = split_indices(n, K, self._split_rng)
        fold_of = np.empty(n, dtype=np.int64)
        for k, idx in enumerate(folds):
            fold_of[idx] = k
        all_rows = np.arange(n)
        train_sets = [np.setdiff1d(all_rows, idx, assume_unique=True) for idx in folds]
        self.estimators_ = self._fit_fold_models(X, y, train_sets)
        u = self._calib_rng.uniform(n) if u is None else np.broadcast_to(
            np.asarray(u, dtype=float), (n,)).copy()
        scores = np.empty(n)
        for k, idx in enumerate(folds):
            P = full_proba(self.estimators_[k], X[idx], self.n_classes_)
            scores[idx] = conformity_scores(P, y[idx], u[idx], self._calib_rng)
        self.folds_ = folds
        self.fold_of_ = fold_of
        self.calib_u_ = u
        self.holdout_scores_ = scores
        self._sorted_fold_scores = [np.sort(scores[idx]) for idx in folds]
        return self

    def test_scores(self, X, u=None) -> np.ndarray:
        """Scores of every label at ``X`` under every fold model: ``(K, n, C)``."""
        check_is_fitted(self, "holdout_scores_")
        X = _check_X(X)
        u = self._draw_u(X.shape[0], u)
        return np.stack([
            score_matrix(full_proba(m, X, self.n_classes_), u, self._predict_rng)
            for m in self.estimators_
        ])

    def count_below(self, E_test) -> np.ndarray:
        """For each (test row, label): hold-out scores strictly below the test score."""
        count = np.zeros(E_test.shape[1:], dtype=np.int64)
        for k, srt in enumerate(self._sorted_fold_scores):
            count += np.searchsorted(srt, E_test[k], side="left")
        return count

    def predict(self, X, u=None, alpha=None) -> np.ndarray:
        alpha = check_alpha(self.alpha if alpha is None else alpha)
        E = self.test_scores(X, u)
        n = self.holdout_scores_.size
        return self.count_below(E) < round((1.0 - alpha) * (n + 1), 9)


class JackknifePlusClassifier(CVPlusClassifier):
    """CV+ with one fold per training sample."""

    def __init__(self, estimator=None, alpha=0.1, n_classes=None, random_state=None,
                 n_jobs=None):
        super().__init__(estimator=estimator, alpha=alpha, n_folds=None,
                         n_classes=n_classes, random_state=random_state, n_jobs=n_jobs)


# Functional entry points -------------------------------------------------------

def split_calibrate(data: LabeledDataset, model_factory=None, alpha=0.1, rng=None,
                    train_size=0.5) -> SplitConformalClassifier:
    return SplitConformalClassifier(
        model_factory, alpha=alpha, train_size=train_size,
        n_classes=data.num_classes, random_state=rng,
    ).fit(data.features, data.labels)


def predict_split(cal: SplitConformalClassifier, x, u: float) -> frozenset[int]:
    return cal.predict_sets(np.atleast_2d(x), u=[u])[0]


def cv_calibrate(data: LabeledDataset, model_factory=None, K=10, alpha=0.1, rng=None,
                 n_jobs=None) -> CVPlusClassifier:
    return CVPlusClassifier(
        model_factory, alpha=alpha, n_folds=K, n_classes=data.num_classes,
        random_state=rng, n_jobs=n_jobs,
    ).fit(data.features, data.labels)


def predict_cvplus(cal: CVPlusClassifier, x, u: float) -> frozenset[int]:
    return cal.predict_sets(np.atleast_2d(x), u=[u])[0]


def hcc_calibrate(data: LabeledDataset, model_factory=None, alpha=0.1, rng=None,
                  train_size=0.5) -> HomogeneousConformalClassifier:
    return HomogeneousConformalClassifier(
        model_factory, alpha=alpha, train_size=train_size,
        n_classes=data.num_classes, random_state=rng,
    ).fit(data.features, data.labels)


def predict_hcc(cal: HomogeneousConformalClassifier, x) -> frozenset[int]:
    return cal.predict_sets(np.atleast_2d(x))[0]
