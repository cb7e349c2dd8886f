"""Shared domain types, seeded randomness and input validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PROB_TOL = 1e-8
RENORM_TOL = 1e-6


class RandomSource:
    """Seeded uniform stream with an explicit ``split`` into independent substreams.

    Wraps a numpy ``Generator`` (PCG64) built from a ``SeedSequence``; substreams
    come from ``SeedSequence.spawn`` so they never share generator state.
    """

    def __init__(self, seed: int | np.random.SeedSequence | None = None):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    @property
    def seed(self):
        return self._seq.entropy

    def split(self, n: int) -> list[RandomSource]:
        return [RandomSource(s) for s in self._seq.spawn(n)]

    def uniform(self, size=None) -> np.ndarray | float:
        return self.generator.random(size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def __repr__(self):
        return f"RandomSource(seed={self.seed!r})"


def as_random_source(random_state) -> RandomSource:
    """Turn ``None``, an int seed, or a ``RandomSource`` into a ``RandomSource``."""
    if isinstance(random_state, RandomSource):
        return random_state
    if random_state is None or isinstance(random_state, (int, np.integer)):
        return RandomSource(None if random_state is None else int(random_state))
    raise TypeError(f"cannot build a RandomSource from {type(random_state).__name__}")


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with 0-based integer labels in ``{0, ..., num_classes-1}``."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int = field(default=0)

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        y = np.asarray(self.labels)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"features must be a non-empty 2-D matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite values")
        y = check_labels(y)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        C = self.num_classes or int(y.max()) + 1
        C = max(C, 2)
        if y.max() >= C:
            raise ValueError(f"label {int(y.max())} out of range for {C} classes")
        X.setflags(write=False)
        y = y.copy()
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "num_classes", C)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> LabeledDataset:
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)


def check_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be a 1-D vector")
    if y.size == 0:
        raise ValueError("labels are empty")
    if y.dtype.kind == "f":
        if not np.all(np.isfinite(y)) or np.any(y != np.round(y)):
            raise ValueError("labels must be integers")
    elif y.dtype.kind not in "iu":
        raise ValueError(f"labels must be integers, got dtype {y.dtype}")
    y = y.astype(np.int64)
    if y.min() < 0:
        raise ValueError("labels must be non-negative")
    return y


def check_alpha(alpha) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def check_proba(P, n_classes: int | None = None) -> np.ndarray:
    """Validate class-probability rows, renormalizing small floating-point slack.

    Rows summing to within ``RENORM_TOL`` of one are divided by their sum; any
    other row, a negative entry, or a non-finite entry is rejected.
    """
    P = np.array(P, dtype=float)
    squeeze = P.ndim == 1
    P = np.atleast_2d(P)
    if P.ndim != 2:
        raise ValueError("probabilities must be a vector or a matrix")
    if n_classes is not None and P.shape[1] != n_classes:
        raise ValueError(f"expected {n_classes} class probabilities, got {P.shape[1]}")
    if not np.all(np.isfinite(P)):
        raise ValueError("probabilities contain non-finite values")
    if np.any(P < 0):
        if P.min() < -PROB_TOL:
            raise ValueError("probabilities must be non-negative")
        P = np.clip(P, 0.0, None)
    s = P.sum(axis=1)
    if np.any(np.abs(s - 1.0) > RENORM_TOL):
        bad = int(np.argmax(np.abs(s - 1.0)))
        raise ValueError(f"probability row {bad} sums to {s[bad]!r}, not 1")
    P = P / s[:, None]
    return P[0] if squeeze else P


def prediction_set(members: Iterable[int], n_classes: int) -> frozenset[int]:
    """Build a prediction set, checking every member is a valid class index."""
    out = frozenset(int(m) for m in members)
    if any(m < 0 or m >= n_classes for m in out):
        raise ValueError(f"set {sorted(out)} has members outside 0..{n_classes - 1}")
    return out


def sets_to_mask(sets: Sequence[Iterable[int]], n_classes: int) -> np.ndarray:
    mask = np.zeros((len(sets), n_classes), dtype=bool)
    for i, s in enumerate(sets):
        mask[i, list(s)] = True
    return mask


def mask_to_sets(mask: np.ndarray) -> list[frozenset[int]]:
    return [frozenset(np.flatnonzero(row).tolist()) for row in np.asarray(mask, dtype=bool)]


def split_indices(n: int, parts, rng: RandomSource) -> list[np.ndarray]:
    """Randomly partition ``range(n)``.

    ``parts`` is either a fold count ``K`` (sizes balanced to within one) or a
    sequence of fractions summing to one (e.g. ``(0.5, 0.5)``).
    """
    n = int(n)
    if isinstance(parts, (int, np.integer)):
        K = int(parts)
        if K < 1:
            raise ValueError(f"need at least one part, got {K}")
        if K > n:
            raise ValueError(f"cannot split {n} samples into {K} nonempty parts")
        perm = rng.permutation(n)
        return [np.sort(chunk) for chunk in np.array_split(perm, K)]

    fractions = np.asarray(parts, dtype=float)
    if fractions.ndim != 1 or fractions.size < 1 or np.any(fractions <= 0):
        raise ValueError("fractions must be a non-empty sequence of positive numbers")
    if not math.isclose(fractions.sum(), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions sum to {fractions.sum()}, not 1")
    if fractions.size > n:
        raise ValueError(f"cannot split {n} samples into {fractions.size} nonempty parts")
    sizes = np.floor(fractions * n + 1e-9).astype(int)
    sizes = np.maximum(sizes, 1)
    # hand leftover rows to the last part, then take back any overshoot from the largest
    sizes[-1] += n - sizes.sum()
    while sizes[-1] < 1:
        j = int(np.argmax(sizes[:-1]))
        sizes[j] -= 1
        sizes[-1] += 1
    perm = rng.permutation(n)
    bounds = np.cumsum(sizes)[:-1]
    return [np.sort(chunk) for chunk in np.split(perm, bounds)]
