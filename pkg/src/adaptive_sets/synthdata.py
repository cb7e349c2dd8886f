"""Multinomial-logit labels over inhomogeneous features.

The first feature is 1 with probability 1/5 and -8 otherwise; the rest are
standard normal. Labels follow a softmax of ``x @ beta.T`` with standard-normal
coefficients, so rows with ``x1 = -8`` are nearly deterministic while rows with
``x1 = 1`` are hard to classify.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabeledDataset, RandomSource, as_random_source


@dataclass(frozen=True)
class SyntheticModelSpec:
    """Coefficients ``beta`` of shape ``(C, p)``, one row per class."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        if beta.ndim != 2 or beta.shape[0] < 2 or beta.shape[1] < 1:
            raise ValueError(f"beta must be C x p with C >= 2, got shape {beta.shape}")
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta has non-finite entries")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def n_classes(self) -> int:
        return self.beta.shape[0]

    @property
    def n_features(self) -> int:
        return self.beta.shape[1]

    def class_probabilities(self, X) -> np.ndarray:
        return softmax(np.atleast_2d(np.asarray(X, dtype=float)) @ self.beta.T)


@dataclass(frozen=True)
class SyntheticDataset:
    dataset: LabeledDataset
    spec: SyntheticModelSpec
    seed: object = None


def softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    W = np.exp(Z)
    return W / W.sum(axis=1, keepdims=True)


def sample_features(n: int, p: int, rng: RandomSource) -> np.ndarray:
    X = rng.normal((n, p))
    X[:, 0] = np.where(rng.uniform(n) < 0.2, 1.0, -8.0)
    return X


def sample_labels(probs: np.ndarray, rng: RandomSource) -> np.ndarray:
    """Draw one label per row from its categorical distribution (inverse CDF)."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.uniform(probs.shape[0]) * cdf[:, -1]
    y = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(y, probs.shape[1] - 1)


def random_spec(p: int, C: int, rng: RandomSource) -> SyntheticModelSpec:
    return SyntheticModelSpec(rng.normal((C, p)))


def generate_multinomial_inhomogeneous(
    n: int,
    p: int = 10,
    C: int = 10,
    rng=None,
    spec: SyntheticModelSpec | None = None,
) -> SyntheticDataset:
    """Draw ``n`` i.i.d. rows; ``beta`` is drawn from ``rng`` unless ``spec`` is given."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    rng = as_random_source(rng)
    beta_rng, x_rng, y_rng = rng.split(3)
    if spec is None:
        spec = random_spec(p, C, beta_rng)
    elif spec.beta.shape != (C, p):
        p, C = spec.n_features, spec.n_classes
    X = sample_features(n, p, x_rng)
    y = sample_labels(spec.class_probabilities(X), y_rng)
    return SyntheticDataset(LabeledDataset(X, y, C), spec, rng.seed)
