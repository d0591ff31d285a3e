"""SMO dual solver kernels.

Solves  min_a 0.5 a'Qa - e'a  s.t.  0 <= a <= C, y'a = 0,  Q_ij = y_i y_j K_ij,
with maximal-violating-pair / second-order working-set selection. Two
implementations share the arithmetic exactly: an explicit-loop kernel compiled by
numba and a vectorized numpy one. :func:`solve` dispatches on ``_accel.USE_NUMBA``.

When ``K`` has zero rows the kernel rows are computed from ``X`` on demand
(linear kernel), which trades speed for O(n) memory.
"""
from __future__ import annotations

import numpy as np

from .. import _accel

TAU = 1e-12


# -- numba path --------------------------------------------------------------------


@_accel.njit(cache=True)
def _row_nb(K, X, i, out):
    if K.shape[0] > 0:
        for t in range(out.shape[0]):
            out[t] = K[i, t]
    else:
        n, d = X.shape
        for t in range(n):
            s = 0.0
            for k in range(d):
                s += X[t, k] * X[i, k]
            out[t] = s


@_accel.njit(cache=True)
def _smo_nb(K, X, diag, y, C, eps, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    Ki = np.empty(n)
    Kj = np.empty(n)
    it = 0
    while it < max_iter:
        # i: maximal violator in I_up
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * G[t]
                if v > gmax:
                    gmax = v
                    i = t
        if i < 0:
            break
        _row_nb(K, X, i, Ki)
        # j: second-order choice in I_low
        gmax2 = -np.inf
        j = -1
        obj_min = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                v = y[t] * G[t]
                if v > gmax2:
                    gmax2 = v
                b = gmax + v
                if b > 0:
                    a = diag[i] + diag[t] - 2.0 * Ki[t]
                    if a <= 0:
                        a = TAU
                    o = -(b * b) / a
                    if o < obj_min:
                        obj_min = o
                        j = t
        if gmax + gmax2 < eps or j < 0:
            break
        _row_nb(K, X, j, Kj)
        yi = y[i]
        yj = y[j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        ai = ai_old
        aj = aj_old
        if yi != yj:
            quad = diag[i] + diag[j] - 2.0 * Ki[j]
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > 0:
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            quad = diag[i] + diag[j] - 2.0 * Ki[j]
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            ai -= delta
            aj += delta
            if s > C:
                if ai > C:
                    ai = C
                    aj = s - C
            else:
                if aj < 0:
                    aj = 0.0
                    ai = s
            if s > C:
                if aj > C:
                    aj = C
                    ai = s - C
            else:
                if ai < 0:
                    ai = 0.0
                    aj = s
        alpha[i] = ai
        alpha[j] = aj
        dai = ai - ai_old
        daj = aj - aj_old
        for t in range(n):
            G[t] += (yi * y[t] * Ki[t]) * dai + (yj * y[t] * Kj[t]) * daj
        it += 1
    return alpha, G, it


# -- numpy path --------------------------------------------------------------------


def _row_np(K, X, i):
    if K.shape[0] > 0:
        return K[i]
    return X @ X[i]


def _smo_np(K, X, diag, y, C, eps, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    it = 0
    while it < max_iter:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        if not up.any():
            break
        score_up = np.where(up, -y * G, -np.inf)
        i = int(np.argmax(score_up))
        gmax = score_up[i]
        Ki = _row_np(K, X, i)
        v = y * G
        gmax2 = np.max(np.where(low, v, -np.inf))
        b = gmax + v
        a = diag[i] + diag - 2.0 * Ki
        a = np.where(a <= 0, TAU, a)
        cand = low & (b > 0)
        obj = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(obj)) if cand.any() else -1
        if gmax + gmax2 < eps or j < 0:
            break
        Kj = _row_np(K, X, j)
        yi, yj = y[i], y[j]
        ai_old, aj_old = alpha[i], alpha[j]
        ai, aj = ai_old, aj_old
        if yi != yj:
            quad = diag[i] + diag[j] - 2.0 * Ki[j]
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = diag[i] + diag[j] - 2.0 * Ki[j]
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            ai -= delta
            aj += delta
            if s > C:
                if ai > C:
                    ai, aj = C, s - C
            elif aj < 0:
                aj, ai = 0.0, s
            if s > C:
                if aj > C:
                    aj, ai = C, s - C
            elif ai < 0:
                ai, aj = 0.0, s
        alpha[i], alpha[j] = ai, aj
        dai, daj = ai - ai_old, aj - aj_old
        G += (yi * y * Ki) * dai + (yj * y * Kj) * daj
        it += 1
    return alpha, G, it


def solve(K, X, y, C, eps, max_iter, use_numba: bool | None = None):
    """Return ``(alpha, gradient, iterations)``. Pass an empty ``K`` to use row-on-demand mode."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    K = np.ascontiguousarray(K, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    diag = np.diag(K).copy() if K.shape[0] > 0 else np.einsum("ij,ij->i", X, X)
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    if use_numba:
        return _smo_nb(K, X, diag, y, float(C), float(eps), int(max_iter))
    return _smo_np(K, X, diag, y, float(C), float(eps), int(max_iter))


def bias(alpha, G, y, C):
    """Offset ``b`` of f(x) = sum_i a_i y_i K(x_i, x) + b from the solver state."""
    yG = y * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        rho = float(np.mean(yG[free]))
    else:
        ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
        lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        if np.isfinite(ub) and np.isfinite(lb):
            rho = (ub + lb) / 2
        else:
            rho = float(ub if np.isfinite(ub) else lb)
    return -rho
