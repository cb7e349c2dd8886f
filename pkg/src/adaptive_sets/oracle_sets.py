"""Generalized conditional quantiles and the oracle prediction sets built on them.

For a probability vector sorted in decreasing order, ``generalized_quantile_L``
counts how many top labels are needed to reach mass ``tau``;
``generalized_inverse_set_S`` turns that count into a set, randomizing the
boundary label with a uniform ``u`` so the set holds mass exactly ``tau`` in
expectation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RandomSource, check_alpha, check_proba


@dataclass(frozen=True)
class SortedProbs:
    """One probability vector in decreasing order.

    Attributes
    ----------
    order : ndarray of int
        Class indices, most probable first (``probs[order] == sorted``).
    sorted : ndarray
        Probabilities in non-increasing order.
    cumsum : ndarray
        Prefix sums of ``sorted``.
    rank : ndarray of int
        Inverse of ``order``: the 1-based rank of each class.
    """

    order: np.ndarray
    sorted: np.ndarray
    cumsum: np.ndarray
    rank: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.order.shape[0]


def descending_order(P: np.ndarray, rng: RandomSource | None = None) -> np.ndarray:
    """Row-wise argsort by decreasing probability; exact ties ordered at random.

    Without ``rng`` ties keep ascending class order. The tie permutation is a
    uniform draw over each tied block, and the values themselves are untouched.
    """
    P = np.atleast_2d(P)
    if rng is None:
        return np.argsort(-P, axis=1, kind="stable")
    keys = rng.uniform(P.shape)
    # lexsort: last key is primary
    return np.lexsort((keys, -P), axis=1)


def sort_probs(p, rng: RandomSource | None = None) -> SortedProbs:
    p = check_proba(p)
    if p.ndim != 1:
        raise ValueError("sort_probs takes a single probability vector")
    order = descending_order(p[None, :], rng)[0]
    srt = p[order]
    rank = np.empty_like(order)
    rank[order] = np.arange(1, order.size + 1)
    return SortedProbs(order=order, sorted=srt, cumsum=np.cumsum(srt), rank=rank)


def _check_tau(tau) -> float:
    tau = float(tau)
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    return tau


def generalized_quantile_L(sp: SortedProbs, tau: float) -> int:
    """Smallest ``c`` (1-based) whose top-``c`` mass reaches ``tau``."""
    tau = _check_tau(tau)
    # floating-point shortfall of the total mass: clamp tau to it
    tau = min(tau, sp.cumsum[-1])
    c = int(np.searchsorted(sp.cumsum, tau, side="left")) + 1
    return min(c, sp.n_classes)


def randomization_cutoff_V(sp: SortedProbs, tau: float) -> float:
    """Probability of dropping the boundary (rank-``L``) label at level ``tau``."""
    tau = _check_tau(tau)
    L = generalized_quantile_L(sp, tau)
    top = sp.sorted[L - 1]
    if top <= 0.0:
        raise ZeroDivisionError(f"boundary label at rank {L} has zero probability")
    v = (sp.cumsum[L - 1] - min(tau, sp.cumsum[-1])) / top
    return float(min(max(v, 0.0), 1.0))


def _top_labels(sp: SortedProbs, count: int) -> frozenset[int]:
    idx = sp.order[:count]
    return frozenset(int(i) for i in idx[sp.sorted[:count] > 0.0])


def generalized_inverse_set_S(sp: SortedProbs, u: float, tau: float) -> frozenset[int]:
    """Randomized top-``L`` set: the rank-``L`` label is dropped when ``u <= V``.

    Labels with zero probability are never returned. At ``tau >= 1`` every
    label with positive probability is returned, whatever ``u`` is.
    """
    tau = _check_tau(tau)
    u = float(u)
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u must lie in [0, 1], got {u}")
    if tau >= 1.0:
        return _top_labels(sp, sp.n_classes)
    L = generalized_quantile_L(sp, tau)
    if u <= randomization_cutoff_V(sp, tau):
        return _top_labels(sp, L - 1)
    return _top_labels(sp, L)


def oracle_set_deterministic(sp: SortedProbs, alpha: float) -> frozenset[int]:
    """Smallest deterministic top-``L`` set holding mass at least ``1 - alpha``."""
    alpha = check_alpha(alpha)
    return _top_labels(sp, generalized_quantile_L(sp, 1.0 - alpha))


def oracle_set_randomized(sp: SortedProbs, u: float, alpha: float) -> frozenset[int]:
    alpha = check_alpha(alpha)
    return generalized_inverse_set_S(sp, u, 1.0 - alpha)


def oracle_sets_batch(P, u, alpha: float, rng: RandomSource | None = None) -> np.ndarray:
    """Randomized oracle sets for many rows at once, as an ``(n, C)`` boolean mask."""
    alpha = check_alpha(alpha)
    P = check_proba(np.atleast_2d(P))
    u = np.broadcast_to(np.asarray(u, dtype=float), (P.shape[0],))
    n, C = P.shape
    order = descending_order(P, rng)
    srt = np.take_along_axis(P, order, axis=1)
    cs = np.cumsum(srt, axis=1)
    tau = np.minimum(1.0 - alpha, cs[:, -1])
    L = np.minimum((cs < tau[:, None]).sum(axis=1) + 1, C)
    rows = np.arange(n)
    top = srt[rows, L - 1]
    V = np.where(top > 0, (cs[rows, L - 1] - tau) / np.where(top > 0, top, 1.0), 0.0)
    count = np.where(u <= V, L - 1, L)
    keep_sorted = (np.arange(C)[None, :] < count[:, None]) & (srt > 0.0)
    mask = np.zeros((n, C), dtype=bool)
    np.put_along_axis(mask, order, keep_sorted, axis=1)
    return mask
