"""Generalized inverse quantile conformity scores.

The score of label ``y`` is the smallest level ``tau`` at which the randomized
set ``S(x, u; pi, tau)`` contains ``y``. For a label of rank ``r`` it has the
closed form ``s_r - u * pi_(r)`` with ``s_r`` the top-``r`` mass; under the true
class probabilities it is Uniform(0, 1) given ``x``.
"""

from __future__ import annotations

import numpy as np

from .core import RandomSource, check_proba
from .oracle_sets import SortedProbs, descending_order, generalized_inverse_set_S


def _check_label(sp: SortedProbs, y) -> int:
    y = int(y)
    if not 0 <= y < sp.n_classes:
        raise ValueError(f"label {y} out of range for {sp.n_classes} classes")
    return y


def conformity_score(sp: SortedProbs, y: int, u: float) -> float:
    y = _check_label(sp, y)
    r = sp.rank[y]
    p = sp.sorted[r - 1]
    if p <= 0.0:
        return 1.0
    e = sp.cumsum[r - 1] - float(u) * p
    return float(min(max(e, 0.0), 1.0))


def conformity_score_bruteforce(
    sp: SortedProbs, y: int, u: float, grid: int = 32, tol: float = 1e-11
) -> float:
    """Locate the score by probing set membership only.

    Scans a uniform ``tau`` grid for the first level whose set contains ``y``,
    then bisects the bracketing cell down to ``tol``. Used to verify
    :func:`conformity_score`; never on a hot path.
    """
    y = _check_label(sp, y)

    def member(tau):
        return y in generalized_inverse_set_S(sp, u, tau)

    if not member(1.0):
        return 1.0
    taus = np.linspace(0.0, 1.0, grid + 1)
    hit = next(i for i, t in enumerate(taus) if member(t))
    if hit == 0:
        return 0.0
    lo, hi = taus[hit - 1], taus[hit]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if member(mid):
            hi = mid
        else:
            lo = mid
    return float(0.5 * (lo + hi))


def score_matrix(P, u, rng: RandomSource | None = None) -> np.ndarray:
    """Scores of every label for every row: an ``(n, C)`` matrix.

    ``u`` holds one uniform per row (or a scalar). Ties in ``P`` are ordered by
    ``rng`` once per row, so all labels of a row share one ordering.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n, C = P.shape
    u = np.broadcast_to(np.asarray(u, dtype=float), (n,))
    order = descending_order(P, rng)
    srt = np.take_along_axis(P, order, axis=1)
    cs = np.cumsum(srt, axis=1)
    e_sorted = np.clip(cs - u[:, None] * srt, 0.0, 1.0)
    e_sorted[srt <= 0.0] = 1.0
    E = np.empty_like(e_sorted)
    np.put_along_axis(E, order, e_sorted, axis=1)
    return E


def conformity_scores(P, y, u, rng: RandomSource | None = None) -> np.ndarray:
    """Score of the observed label ``y[i]`` for each row of ``P``."""
    P = check_proba(np.atleast_2d(P))
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (P.shape[0],):
        raise ValueError(f"{P.shape[0]} probability rows but {y.shape} labels")
    if y.min() < 0 or y.max() >= P.shape[1]:
        raise ValueError("labels out of range of the probability columns")
    E = score_matrix(P, u, rng)
    return E[np.arange(P.shape[0]), y]
