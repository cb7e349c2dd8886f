"""Compiled gradient-descent kernel for multinomial logistic regression."""

import math

import numpy as np
from numba import njit

OK = 0
NON_FINITE = 1


@njit(cache=True, fastmath=True, error_model="numpy")
def _loss_softmax(Z, y, W, l2, P):
    # fills P with the row softmax of Z and returns the penalized mean loss
    n, K = Z.shape
    total = 0.0
    for i in range(n):
        zmax = Z[i, 0]
        for k in range(1, K):
            zmax = max(zmax, Z[i, k])
        s = 0.0
        for k in range(K):
            e = math.exp(Z[i, k] - zmax)
            P[i, k] = e
            s += e
        inv = 1.0 / s
        for k in range(K):
            P[i, k] *= inv
        total += math.log(s) + zmax - Z[i, y[i]]
    pen = 0.0
    for j in range(W.shape[0]):
        for k in range(K):
            pen += W[j, k] * W[j, k]
    return total / n + 0.5 * l2 * pen


@njit(cache=True, error_model="numpy")
def _gradient(X, y, P, W, l2, gW, gb):
    n, p = X.shape
    K = P.shape[1]
    G = P.copy()
    for i in range(n):
        G[i, y[i]] -= 1.0
    G /= n
    gW[:, :] = X.T @ G
    for j in range(p):
        for k in range(K):
            gW[j, k] += l2 * W[j, k]
    for k in range(K):
        acc = 0.0
        for i in range(n):
            acc += G[i, k]
        gb[k] = acc


@njit(cache=True, error_model="numpy")
def descend(X, y, K, l2, max_iter, tol):
    """Gradient descent from zero with Armijo backtracking.

    Returns ``(W, b, loss, n_iter, status)``; ``status`` is ``NON_FINITE`` when
    the objective overflowed, in which case ``n_iter`` names the iteration.
    """
    n, p = X.shape
    W = np.zeros((p, K))
    b = np.zeros(K)
    Z = np.zeros((n, K))
    P = np.empty((n, K))
    Zc = np.empty((n, K))
    Pc = np.empty((n, K))
    Wc = np.empty((p, K))
    gW = np.empty((p, K))
    gb = np.empty(K)
    loss = _loss_softmax(Z, y, W, l2, P)
    _gradient(X, y, P, W, l2, gW, gb)
    step = 1.0
    streak = 0
    n_iter = 0
    for it in range(1, max_iter + 1):
        gmax = 0.0
        gg = 0.0
        for j in range(p):
            for k in range(K):
                gmax = max(gmax, abs(gW[j, k]))
                gg += gW[j, k] * gW[j, k]
        for k in range(K):
            gmax = max(gmax, abs(gb[k]))
            gg += gb[k] * gb[k]
        if gmax < tol:
            break
        Zg = X @ gW
        for i in range(n):
            for k in range(K):
                Zg[i, k] += gb[k]
        # retry a larger step only after a run of first-try acceptances
        t = min(step * 2.0, 1e6) if streak >= 10 else step
        first = True
        accepted = False
        for _ in range(60):
            for i in range(n):
                for k in range(K):
                    Zc[i, k] = Z[i, k] - t * Zg[i, k]
            for j in range(p):
                for k in range(K):
                    Wc[j, k] = W[j, k] - t * gW[j, k]
            cand = _loss_softmax(Zc, y, Wc, l2, Pc)
            if not np.isfinite(cand):
                return W, b, loss, it, NON_FINITE
            if cand <= loss - 1e-4 * t * gg:
                accepted = True
                break
            t *= 0.5
            first = False
        streak = streak + 1 if first else 0
        if not accepted:
            # no representable decrease left
            break
        W[:, :] = Wc
        for k in range(K):
            b[k] -= t * gb[k]
        Z[:, :] = Zc
        P[:, :] = Pc
        loss = cand
        step = t
        n_iter = it
        _gradient(X, y, P, W, l2, gW, gb)
    return W, b, loss, n_iter, OK
