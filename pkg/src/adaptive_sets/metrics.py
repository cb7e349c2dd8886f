"""Coverage and size statistics for batches of prediction sets.

Sets may be given as an ``(n, C)`` boolean membership mask or as a sequence
of label collections.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .core import RandomSource, as_random_source, check_labels


def _as_mask(sets, labels) -> tuple[np.ndarray, np.ndarray]:
    labels = check_labels(labels)
    if isinstance(sets, np.ndarray) and sets.dtype == bool and sets.ndim == 2:
        mask = sets
    else:
        sets = list(sets)
        width = max([labels.max() + 1] + [max(s) + 1 for s in sets if len(s)])
        mask = np.zeros((len(sets), width), dtype=bool)
        for i, s in enumerate(sets):
            mask[i, list(s)] = True
    if mask.shape[0] != labels.shape[0]:
        raise ValueError(f"{mask.shape[0]} prediction sets but {labels.shape[0]} labels")
    return mask, labels


def covered(sets, labels) -> np.ndarray:
    mask, labels = _as_mask(sets, labels)
    hit = np.zeros(labels.shape[0], dtype=bool)
    ok = labels < mask.shape[1]
    hit[ok] = mask[np.flatnonzero(ok), labels[ok]]
    return hit


def marginal_coverage(sets, labels) -> float:
    return float(covered(sets, labels).mean())


def size_metrics(sets, labels) -> tuple[float, float]:
    """Mean set size, and mean size over covered points (NaN if none is covered)."""
    mask, labels = _as_mask(sets, labels)
    sizes = mask.sum(axis=1)
    hit = covered(mask, labels)
    avg_covered = float(sizes[hit].mean()) if hit.any() else math.nan
    return float(sizes.mean()), avg_covered


def conditional_coverage(sets, labels, groups) -> dict:
    """Coverage within each distinct value of ``groups`` (e.g. the true label)."""
    hit = covered(sets, labels)
    groups = np.asarray(groups)
    return {g.item(): float(hit[groups == g].mean()) for g in np.unique(groups)}


@dataclass(frozen=True)
class WorstSlab:
    coverage: float
    selection_coverage: float
    direction: np.ndarray | None
    lower: float
    upper: float
    n_eval: int
    fallback: bool


def _min_mean_windows(c: np.ndarray, L: int, iters: int = 40):
    """Per row of 0/1 values ``c``: the minimum mean over windows of length >= L.

    Bisects on the mean: a window with mean <= lam exists iff some prefix sum
    of ``c - lam`` is <= the largest prefix sum at least ``L`` entries earlier.
    Returns ``(best_mean_upper_bound, start, stop)`` per row.
    """
    D, m = c.shape
    lo = np.full(D, -1e-12)
    hi = np.full(D, 1.0 + 1e-12)
    c = c.astype(float)

    def windows(lam):
        P = np.zeros((D, m + 1))
        np.cumsum(c - lam[:, None], axis=1, out=P[:, 1:])
        prefmax = np.maximum.accumulate(P, axis=1)
        diff = P[:, L:] - prefmax[:, : m - L + 1]
        return P, diff

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        _, diff = windows(mid)
        feas = diff.min(axis=1) <= 1e-12
        hi = np.where(feas, mid, hi)
        lo = np.where(feas, lo, mid)

    P, diff = windows(hi)
    stop = np.argmin(diff, axis=1) + L  # exclusive end in sorted order
    start = np.empty(D, dtype=np.int64)
    for d in range(D):
        start[d] = int(np.argmax(P[d, : stop[d] - L + 1]))
    means = np.array([c[d, start[d]:stop[d]].mean() for d in range(D)])
    return means, start, stop


def worst_slab(features, sets, labels, delta: float = 0.1, n_directions: int = 1000,
               rng: RandomSource | int | None = None, chunk: int = 200) -> WorstSlab:
    """Lowest-coverage slab ``{x : a <= v.x <= b}`` holding at least ``delta`` of the points.

    The test points are split in half at random. Random unit directions and
    the lowest-coverage window of sorted projections are searched on the
    first half; the reported coverage is that slab's coverage on the second
    half, which removes the optimism of selecting and scoring on the same
    points. Falls back to marginal coverage (``fallback=True``) when no slab
    can meet the mass floor or the chosen slab is empty on the second half.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    X = np.asarray(features, dtype=float)
    hit = covered(sets, labels).astype(float)
    n = X.shape[0]
    if X.ndim != 2 or X.shape[0] != hit.shape[0]:
        raise ValueError("features and sets disagree in length")
    marginal = float(hit.mean())
    rng = as_random_source(rng)
    perm = rng.permutation(n)
    sel, ev = np.sort(perm[: n // 2]), np.sort(perm[n // 2:])
    m = sel.size
    L = math.ceil(delta * m - 1e-9)
    if n < 1.0 / delta or L < 1 or L > m or ev.size == 0:
        warnings.warn("too few test points for the worst-slab mass floor; "
                      "reporting marginal coverage", RuntimeWarning, stacklevel=2)
        return WorstSlab(marginal, marginal, None, -np.inf, np.inf, n, True)

    V = rng.normal((n_directions, X.shape[1]))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    Xs, hs = X[sel], hit[sel]
    best = (np.inf, None, 0.0, 0.0)
    for c0 in range(0, n_directions, chunk):
        Vc = V[c0:c0 + chunk]
        proj = Xs @ Vc.T  # (m, D)
        order = np.argsort(proj, axis=0, kind="stable")
        c_sorted = hs[order].T  # (D, m)
        means, start, stop = _min_mean_windows(c_sorted, L)
        d = int(np.argmin(means))
        if means[d] < best[0]:
            col = np.sort(proj[:, d])
            best = (float(means[d]), Vc[d].copy(), float(col[start[d]]), float(col[stop[d] - 1]))
    sel_cov, v, a, b = best
    pe = X[ev] @ v
    inside = (pe >= a) & (pe <= b)
    if not inside.any():
        warnings.warn("worst slab holds no evaluation points; reporting marginal coverage",
                      RuntimeWarning, stacklevel=2)
        return WorstSlab(marginal, sel_cov, v, a, b, 0, True)
    return WorstSlab(float(hit[ev][inside].mean()), sel_cov, v, a, b, int(inside.sum()), False)


def worst_slice_coverage(features, sets, labels, delta: float = 0.1,
                         n_directions: int = 1000, rng=None) -> float:
    return worst_slab(features, sets, labels, delta, n_directions, rng).coverage


@dataclass(frozen=True)
class EvaluationReport:
    marginal_coverage: float
    wsc_coverage: float
    avg_size: float
    avg_size_covered: float
    n_test: int
    wsc_fallback: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(features, sets, labels, delta: float = 0.1, n_directions: int = 1000,
             rng=None) -> EvaluationReport:
    mask, labels = _as_mask(sets, labels)
    avg, avg_cov = size_metrics(mask, labels)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ws = worst_slab(features, mask, labels, delta, n_directions, rng)
    return EvaluationReport(
        marginal_coverage=marginal_coverage(mask, labels),
        wsc_coverage=ws.coverage,
        avg_size=avg,
        avg_size_covered=avg_cov,
        n_test=int(labels.shape[0]),
        wsc_fallback=ws.fallback,
    )
