"""Hot inner loops, each in two flavours.

The ``_nb_*`` functions are plain loops compiled with ``numba.njit``; the
``_np_*`` functions are vectorised numpy equivalents. Which set is exported is
decided once at import from ``BTF_NUMBA``; both stay importable for the
benchmark and the parity tests.
"""

import numpy as np

from .config import numba_requested

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

TAU = 1e-12


def _maybe_njit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# SMO dual solver (maximal violating pair, libsvm-style two-variable update)
# ---------------------------------------------------------------------------


def _np_smo(K, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    Q = K * np.outer(y, y)
    pos = y > 0
    it = 0
    converged = False
    while it < max_iter:
        yG = -y * G
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, yG, -np.inf)))
        j = int(np.argmin(np.where(low, yG, np.inf)))
        if yG[i] - yG[j] < tol:
            converged = True
            break
        old_i, old_j = alpha[i], alpha[j]
        ai, aj = _pair_update(Q[i, i], Q[j, j], Q[i, j], y[i], y[j], G[i], G[j], old_i, old_j, C)
        alpha[i], alpha[j] = ai, aj
        G += Q[i] * (ai - old_i) + Q[j] * (aj - old_j)
        it += 1
    return alpha, _rho(alpha, y, G, C), it, converged


def _pair_update(Qii, Qjj, Qij, yi, yj, Gi, Gj, ai, aj, C):
    if yi != yj:
        quad = Qii + Qjj + 2.0 * Qij
        if quad <= 0:
            quad = TAU
        delta = (-Gi - Gj) / quad
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
        quad = Qii + Qjj - 2.0 * Qij
        if quad <= 0:
            quad = TAU
        delta = (Gi - Gj) / quad
        total = ai + aj
        ai -= delta
        aj += delta
        if total > C:
            if ai > C:
                ai = C
                aj = total - C
        else:
            if aj < 0:
                aj = 0.0
                ai = total
        if total > C:
            if aj > C:
                aj = C
                ai = total - C
        else:
            if ai < 0:
                ai = 0.0
                aj = total
    return ai, aj


def _rho(alpha, y, G, C):
    ub = np.inf
    lb = -np.inf
    n_free = 0
    s_free = 0.0
    for t in range(y.shape[0]):
        yG = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        else:
            n_free += 1
            s_free += yG
    if n_free > 0:
        return s_free / n_free
    return (ub + lb) / 2.0


_nb_pair_update = _maybe_njit(_pair_update)
_nb_rho = _maybe_njit(_rho)


def _nb_smo_py(K, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    converged = False
    while it < max_iter:
        i = -1
        j = -1
        gmax = -np.inf
        gmin = np.inf
        for t in range(n):
            yG = -y[t] * G[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if yG > gmax:
                    gmax = yG
                    i = t
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                if yG < gmin:
                    gmin = yG
                    j = t
        if i < 0 or j < 0 or gmax - gmin < tol:
            converged = True
            break
        yi = y[i]
        yj = y[j]
        old_i = alpha[i]
        old_j = alpha[j]
        ai, aj = _nb_pair_update(
            K[i, i], K[j, j], yi * yj * K[i, j], yi, yj, G[i], G[j], old_i, old_j, C
        )
        alpha[i] = ai
        alpha[j] = aj
        di = ai - old_i
        dj = aj - old_j
        for t in range(n):
            G[t] += (y[t] * yi * K[i, t]) * di + (y[t] * yj * K[j, t]) * dj
        it += 1
    return alpha, _nb_rho(alpha, y, G, C), it, converged


_nb_smo = _maybe_njit(_nb_smo_py)


# ---------------------------------------------------------------------------
# Least-squares split search for regression trees
# ---------------------------------------------------------------------------


def _np_best_split(X, r, idx, min_leaf):
    n = idx.shape[0]
    best_gain = 0.0
    best_f = -1
    best_thr = 0.0
    if n < 2 * min_leaf:
        return best_f, best_thr, best_gain
    rs = r[idx]
    total = rs.sum()
    base = total * total / n
    for f in range(X.shape[1]):
        col = X[idx, f]
        order = np.argsort(col, kind="mergesort")
        xs = col[order]
        left = np.cumsum(rs[order])[:-1]
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        gain = left * left / nl + (total - left) ** 2 / nr - base
        ok = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not ok.any():
            continue
        gain = np.where(ok, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best_gain:
            best_gain = float(gain[k])
            best_f = f
            best_thr = _midpoint(xs[k], xs[k + 1])
    return best_f, best_thr, best_gain


def _midpoint(a, b):
    m = (a + b) / 2.0
    if m >= b:
        m = a
    return m


_nb_midpoint = _maybe_njit(_midpoint)


def _nb_best_split_py(X, r, idx, min_leaf):
    n = idx.shape[0]
    best_gain = 0.0
    best_f = -1
    best_thr = 0.0
    if n < 2 * min_leaf:
        return best_f, best_thr, best_gain
    rs = np.empty(n)
    total = 0.0
    for k in range(n):
        rs[k] = r[idx[k]]
        total += rs[k]
    base = total * total / n
    col = np.empty(n)
    for f in range(X.shape[1]):
        for k in range(n):
            col[k] = X[idx[k], f]
        order = np.argsort(col, kind="mergesort")
        left = 0.0
        fbest = -np.inf
        fk = -1
        for k in range(n - 1):
            left += rs[order[k]]
            nl = k + 1.0
            nr = n - nl
            if col[order[k]] < col[order[k + 1]] and nl >= min_leaf and nr >= min_leaf:
                g = left * left / nl + (total - left) ** 2 / nr - base
                if g > fbest:
                    fbest = g
                    fk = k
        if fk >= 0 and fbest > best_gain:
            best_gain = fbest
            best_f = f
            best_thr = _nb_midpoint(col[order[fk]], col[order[fk + 1]])
    return best_f, best_thr, best_gain


_nb_best_split = _maybe_njit(_nb_best_split_py)


# ---------------------------------------------------------------------------
# Exact t-SNE gradient and objective
# ---------------------------------------------------------------------------


def _np_tsne_grad(Y, P):
    sq = np.sum(Y * Y, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (Y @ Y.T)
    num = 1.0 / (1.0 + np.maximum(d2, 0.0))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-300)
    W = (P - Q) * num
    grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
    mask = P > 0
    kl = float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))
    return grad, kl


def _nb_tsne_grad_py(Y, P):
    n, k = Y.shape
    num = np.zeros((n, n))
    z = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            d = 0.0
            for c in range(k):
                diff = Y[i, c] - Y[j, c]
                d += diff * diff
            v = 1.0 / (1.0 + d)
            num[i, j] = v
            num[j, i] = v
            z += 2.0 * v
    grad = np.zeros((n, k))
    kl = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            q = max(num[i, j] / z, 1e-300)
            w = (P[i, j] - q) * num[i, j]
            for c in range(k):
                grad[i, c] += 4.0 * w * (Y[i, c] - Y[j, c])
            if P[i, j] > 0:
                kl += P[i, j] * np.log(P[i, j] / q)
    return grad, kl


_nb_tsne_grad = _maybe_njit(_nb_tsne_grad_py)


# ---------------------------------------------------------------------------
# Threshold grid scan: number of correct decisions for each grid point
# ---------------------------------------------------------------------------


def _np_threshold_correct(pos_sorted, neg_sorted, grid):
    pos_ge = pos_sorted.shape[0] - np.searchsorted(pos_sorted, grid, side="left")
    neg_lt = np.searchsorted(neg_sorted, grid, side="left")
    return (pos_ge + neg_lt).astype(np.int64)


def _nb_threshold_correct_py(pos_sorted, neg_sorted, grid):
    out = np.empty(grid.shape[0], dtype=np.int64)
    p = 0
    q = 0
    n_pos = pos_sorted.shape[0]
    n_neg = neg_sorted.shape[0]
    for g in range(grid.shape[0]):
        t = grid[g]
        while p < n_pos and pos_sorted[p] < t:
            p += 1
        while q < n_neg and neg_sorted[q] < t:
            q += 1
        out[g] = (n_pos - p) + q
    return out


_nb_threshold_correct = _maybe_njit(_nb_threshold_correct_py)


USE_NUMBA = HAVE_NUMBA and numba_requested()

if USE_NUMBA:
    smo_solve = _nb_smo
    best_split = _nb_best_split
    tsne_grad = _nb_tsne_grad
    threshold_correct = _nb_threshold_correct
else:
    smo_solve = _np_smo
    best_split = _np_best_split
    tsne_grad = _np_tsne_grad
    threshold_correct = _np_threshold_correct


def backend():
    return "numba" if USE_NUMBA else "numpy"
