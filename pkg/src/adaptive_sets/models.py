"""Class-probability estimators with the scikit-learn ``fit``/``predict_proba`` API.

Every estimator here is invariant to the order of its training rows: fitters
first put the rows in a canonical (lexicographic) order, so a shuffled copy of
the data gives the same model bit for bit.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._gd import OK, descend
from .core import LabeledDataset, RandomSource, as_random_source, check_labels
from .synthdata import SyntheticModelSpec, softmax


class NumericalFailureError(ArithmeticError):
    """Raised when an optimizer produces a non-finite objective."""


def _check_X(X, n_features=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def _check_Xy(X, y):
    X = _check_X(X)
    y = check_labels(y)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
    return X, y


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row permutation sorting ``(X, y)`` lexicographically, first column primary."""
    keys = np.column_stack([X, y]).T[::-1]
    return np.lexsort(keys)


class OracleClassifier(ClassifierMixin, BaseEstimator):
    """Returns the true softmax probabilities of a synthetic model; ``fit`` learns nothing.

    Parameters
    ----------
    beta : array of shape (n_classes, n_features)
        Class coefficient rows of the data-generating model.
    """

    def __init__(self, beta=None):
        self.beta = beta

    @classmethod
    def from_spec(cls, spec: SyntheticModelSpec) -> OracleClassifier:
        return cls(beta=spec.beta)

    def fit(self, X=None, y=None):
        if self.beta is None:
            raise ValueError("OracleClassifier needs beta")
        self.spec_ = SyntheticModelSpec(self.beta)
        self.classes_ = np.arange(self.spec_.n_classes)
        self.n_features_in_ = self.spec_.n_features
        return self

    def predict_proba(self, X):
        if not hasattr(self, "spec_"):
            self.fit()
        X = _check_X(X, self.n_features_in_)
        return self.spec_.class_probabilities(X)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class LogisticRegressionGD(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression fit by full-batch gradient descent.

    Minimizes mean cross-entropy plus ``l2 / 2 * ||W||^2`` (intercepts are not
    penalized) on internally standardized features, starting from zero, with an
    Armijo backtracking line search. Stops when the largest gradient entry
    falls below ``tol`` or after ``max_iter`` steps.

    Parameters
    ----------
    l2 : float, default=1e-4
    max_iter : int, default=5000
    tol : float, default=1e-8
    """

    def __init__(self, l2=1e-4, max_iter=5000, tol=1e-8):
        self.l2 = l2
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X, y = _check_Xy(X, y)
        if self.l2 < 0:
            raise ValueError(f"l2 must be non-negative, got {self.l2}")
        return self._fit_rows(X, y)

    def fit_many(self, X, y, train_indices) -> list[LogisticRegressionGD]:
        """Fit one independent model per index set in ``train_indices``.

        Model ``f`` depends only on the rows ``train_indices[f]``, not on their
        order. Cross-validation calibrators call this in place of repeated
        ``clone(...).fit(...)``.
        """
        X, y = _check_Xy(X, y)
        if self.l2 < 0:
            raise ValueError(f"l2 must be non-negative, got {self.l2}")
        models = []
        for idx in train_indices:
            idx = np.asarray(idx)
            if idx.size == 0:
                raise ValueError("cannot fit on an empty training set")
            m = LogisticRegressionGD(l2=self.l2, max_iter=self.max_iter, tol=self.tol)
            models.append(m._fit_rows(X[idx], y[idx]))
        return models

    def _fit_rows(self, X, y):
        idx = canonical_order(X, y)
        X, y = X[idx], y[idx]
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        with np.errstate(over="ignore", invalid="ignore"):
            self.mean_ = X.mean(axis=0)
            sd = X.std(axis=0)
        self.scale_ = np.where(sd > 0, sd, 1.0)
        with np.errstate(over="ignore", invalid="ignore"):
            Xs = np.ascontiguousarray((X - self.mean_) / self.scale_)
        if not (np.isfinite(self.scale_).all() and np.isfinite(Xs).all()):
            raise NumericalFailureError("non-finite loss at iteration 0: feature scale overflows")
        W, b, loss, n_iter, status = descend(
            Xs, y_enc.astype(np.int64), self.classes_.size, float(self.l2),
            int(self.max_iter), float(self.tol),
        )
        if status != OK:
            raise NumericalFailureError(f"non-finite loss at iteration {n_iter}")
        self.theta_ = np.vstack([W, b])
        self.coef_ = W.T / self.scale_
        self.intercept_ = b - self.coef_ @ self.mean_
        self.loss_ = float(loss)
        self.n_iter_ = int(n_iter)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = _check_X(X, self.n_features_in_)
        Xs = (X - self.mean_) / self.scale_
        return Xs @ self.theta_[:-1] + self.theta_[-1]

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class KNNProbaClassifier(ClassifierMixin, BaseEstimator):
    """Smoothed class frequencies among the ``n_neighbors`` nearest training rows.

    Distance ties go to the earlier row of a seeded shuffle of the canonically
    ordered training data. Counts get ``1/C`` added per class before
    normalizing, so no class probability is exactly zero.

    Parameters
    ----------
    n_neighbors : int or None, default=None
        ``None`` means ``ceil(sqrt(n_train))``.
    random_state : int, RandomSource or None, default=0
    """

    def __init__(self, n_neighbors=None, random_state=0):
        self.n_neighbors = n_neighbors
        self.random_state = random_state

    def fit(self, X, y):
        X, y = _check_Xy(X, y)
        n = X.shape[0]
        k = math.ceil(math.sqrt(n)) if self.n_neighbors is None else int(self.n_neighbors)
        if not 1 <= k <= n:
            raise ValueError(f"n_neighbors must lie in [1, {n}], got {k}")
        idx = canonical_order(X, y)
        idx = idx[as_random_source(self.random_state).permutation(n)]
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.X_train_ = X[idx]
        self.y_train_ = y_enc[idx]
        self.k_ = k
        self.n_features_in_ = X.shape[1]
        return self

    def neighbors(self, X) -> np.ndarray:
        check_is_fitted(self, "X_train_")
        X = _check_X(X, self.n_features_in_)
        d2 = (
            np.sum(X * X, axis=1)[:, None]
            - 2.0 * X @ self.X_train_.T
            + np.sum(self.X_train_ ** 2, axis=1)[None, :]
        )
        np.maximum(d2, 0.0, out=d2)
        return np.argsort(d2, axis=1, kind="stable")[:, : self.k_]

    def predict_proba(self, X, smooth=True):
        nb = self.neighbors(X)
        C = self.classes_.size
        labels = self.y_train_[nb]
        counts = np.zeros((nb.shape[0], C))
        np.add.at(counts, (np.arange(nb.shape[0])[:, None], labels), 1.0)
        if not smooth:
            return counts / self.k_
        return (counts + 1.0 / C) / (self.k_ + 1.0)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


def oracle_model(spec: SyntheticModelSpec) -> OracleClassifier:
    return OracleClassifier.from_spec(spec).fit()


def fit_multinomial_logistic(
    data: LabeledDataset, l2: float = 1e-4, max_iter: int = 5000, tol: float = 1e-8
) -> LogisticRegressionGD:
    return LogisticRegressionGD(l2=l2, max_iter=max_iter, tol=tol).fit(data.features, data.labels)


def fit_knn(data: LabeledDataset, k: int | None = None, rng: RandomSource | int | None = 0):
    if k is not None and k > data.n:
        raise ValueError(f"k={k} exceeds the {data.n} training rows")
    return KNNProbaClassifier(n_neighbors=k, random_state=rng).fit(data.features, data.labels)


def full_proba(model, X, n_classes: int) -> np.ndarray:
    """``predict_proba`` spread over all ``n_classes`` columns.

    Classes the model never saw in training get probability zero.
    """
    P = np.asarray(model.predict_proba(X), dtype=float)
    classes = np.asarray(getattr(model, "classes_", np.arange(P.shape[1])))
    if P.shape[1] == n_classes and np.array_equal(classes, np.arange(n_classes)):
        return P
    out = np.zeros((P.shape[0], n_classes))
    out[:, classes.astype(int)] = P
    return out
