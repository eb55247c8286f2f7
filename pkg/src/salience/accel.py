"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Set SALIENCE_NO_NUMBA=1 to force the numpy implementations (also used
automatically when numba is not importable).  Both paths compute the
same floating-point recurrences so results agree to rounding.
"""

import os

import numpy as np

_flag = os.environ.get("SALIENCE_NO_NUMBA", "")
NO_NUMBA = _flag not in ("", "0")

if not NO_NUMBA:
    try:
        from numba import njit
    except ImportError:
        NO_NUMBA = True

if NO_NUMBA:
    def njit(*args, **kwargs):
        # no-op decorator so the jit twins stay importable
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap

JIT_ENABLED = not NO_NUMBA


# ---------------------------------------------------------------------------
# 1-D correlation of each row against taps, valid region of a padded input.
# Caller handles padding and kernel flipping.

@njit(cache=True)
def _corr_rows_jit(padded, taps):
    h = padded.shape[0]
    k = taps.shape[0]
    w = padded.shape[1] - k + 1
    out = np.empty((h, w), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for t in range(k):
                acc += padded[i, j + t] * taps[t]
            out[i, j] = acc
    return out


def _corr_rows_np(padded, taps):
    win = np.lib.stride_tricks.sliding_window_view(padded, taps.shape[0], axis=1)
    return win @ taps


def corr_rows(padded, taps):
    """Valid-mode correlation of float64 rows with 1-D float64 taps."""
    if JIT_ENABLED:
        return _corr_rows_jit(padded, taps)
    return _corr_rows_np(padded, taps)


# ---------------------------------------------------------------------------
# SMO inner loop over the maximal violating pair, beta = y*alpha space.
# beta and g are updated in place; returns the sweep count used.

@njit(cache=True)
def _smo_core_jit(K, beta, g, lo, hi, tol, max_iter):
    n = beta.shape[0]
    it = 0
    while it < max_iter:
        gi = -np.inf
        gj = np.inf
        i = -1
        j = -1
        for k in range(n):
            if beta[k] < hi[k] and g[k] > gi:
                gi = g[k]
                i = k
            if beta[k] > lo[k] and g[k] < gj:
                gj = g[k]
                j = k
        if i < 0 or j < 0:
            break
        gap = gi - gj
        if gap < tol:
            break
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0.0:
            quad = 1e-12
        lam = gap / quad
        if hi[i] - beta[i] < lam:
            lam = hi[i] - beta[i]
        if beta[j] - lo[j] < lam:
            lam = beta[j] - lo[j]
        beta[i] += lam
        beta[j] -= lam
        for k in range(n):
            g[k] -= lam * (K[k, i] - K[k, j])
        it += 1
    return it


def _smo_core_np(K, beta, g, lo, hi, tol, max_iter):
    it = 0
    while it < max_iter:
        up = beta < hi
        dn = beta > lo
        if not up.any() or not dn.any():
            break
        i = int(np.argmax(np.where(up, g, -np.inf)))
        j = int(np.argmin(np.where(dn, g, np.inf)))
        gap = g[i] - g[j]
        if gap < tol:
            break
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0.0:
            quad = 1e-12
        lam = min(gap / quad, hi[i] - beta[i], beta[j] - lo[j])
        beta[i] += lam
        beta[j] -= lam
        g -= lam * (K[:, i] - K[:, j])
        it += 1
    return it


def smo_core(K, beta, g, lo, hi, tol, max_iter):
    """Run maximal-violating-pair sweeps in place; returns iterations used."""
    if JIT_ENABLED:
        return _smo_core_jit(K, beta, g, lo, hi, tol, max_iter)
    return _smo_core_np(K, beta, g, lo, hi, tol, max_iter)


# ---------------------------------------------------------------------------
# Regression-stump search for gentle boosting.  Per feature f the samples
# are pre-sorted (w_s, z_s are weight/target in sorted order); split_idx
# maps each candidate threshold to its position in that order.  Returns,
# per feature: best squared error, candidate index, left mean, right mean.

@njit(cache=True)
def _stump_scan_jit(w_s, wz_s, split_idx):
    nf, n = w_s.shape
    nc = split_idx.shape[1]
    best_err = np.empty(nf, dtype=np.float64)
    best_c = np.empty(nf, dtype=np.int64)
    best_left = np.empty(nf, dtype=np.float64)
    best_right = np.empty(nf, dtype=np.float64)
    for f in range(nf):
        sw = 0.0
        swz = 0.0
        for s in range(n):
            sw += w_s[f, s]
            swz += wz_s[f, s]
        cw = np.empty(n + 1, dtype=np.float64)
        cwz = np.empty(n + 1, dtype=np.float64)
        cw[0] = 0.0
        cwz[0] = 0.0
        for s in range(n):
            cw[s + 1] = cw[s] + w_s[f, s]
            cwz[s + 1] = cwz[s] + wz_s[f, s]
        e_best = np.inf
        c_best = -1
        a_best = 0.0
        b_best = 0.0
        for c in range(nc):
            p = split_idx[f, c]
            wl = cw[p]
            wr = sw - wl
            if wl < 1e-12 or wr < 1e-12:
                continue
            zl = cwz[p]
            zr = swz - zl
            # z in {-1,+1} so sum w z^2 == sum w; WLS error in means form
            err = sw - zl * zl / wl - zr * zr / wr
            if err < e_best:
                e_best = err
                c_best = c
                a_best = zl / wl
                b_best = zr / wr
        best_err[f] = e_best
        best_c[f] = c_best
        best_left[f] = a_best
        best_right[f] = b_best
    return best_err, best_c, best_left, best_right


def _stump_scan_np(w_s, wz_s, split_idx):
    nf, n = w_s.shape
    cw = np.concatenate([np.zeros((nf, 1)), np.cumsum(w_s, axis=1)], axis=1)
    cwz = np.concatenate([np.zeros((nf, 1)), np.cumsum(wz_s, axis=1)], axis=1)
    sw = cw[:, -1:]
    swz = cwz[:, -1:]
    rows = np.arange(nf)[:, None]
    wl = cw[rows, split_idx]
    zl = cwz[rows, split_idx]
    wr = sw - wl
    zr = swz - zl
    ok = (wl >= 1e-12) & (wr >= 1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        err = sw - zl * zl / wl - zr * zr / wr
    err = np.where(ok, err, np.inf)
    best_c = np.argmin(err, axis=1)
    best_err = err[rows[:, 0], best_c]
    wl_b = wl[rows[:, 0], best_c]
    wr_b = wr[rows[:, 0], best_c]
    zl_b = zl[rows[:, 0], best_c]
    zr_b = zr[rows[:, 0], best_c]
    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where(wl_b > 0, zl_b / wl_b, 0.0)
        right = np.where(wr_b > 0, zr_b / wr_b, 0.0)
    best_c = np.where(np.isfinite(best_err), best_c, -1)
    left = np.where(np.isfinite(best_err), left, 0.0)
    right = np.where(np.isfinite(best_err), right, 0.0)
    return best_err, best_c.astype(np.int64), left, right


def stump_scan(w_s, wz_s, split_idx):
    """Best threshold split per feature under weighted squared error."""
    if JIT_ENABLED:
        return _stump_scan_jit(w_s, wz_s, split_idx)
    return _stump_scan_np(w_s, wz_s, split_idx)


_warmed = False


def warmup():
    """Compile the jit twins on tiny inputs so timed sections stay clean."""
    global _warmed
    if _warmed or not JIT_ENABLED:
        _warmed = True
        return
    pad = np.zeros((2, 5), dtype=np.float64)
    corr_rows(pad, np.array([1.0, 2.0, 1.0]))
    K = np.eye(2)
    beta = np.zeros(2)
    g = np.array([1.0, -1.0])
    smo_core(K, beta, g, np.array([0.0, -1.0]), np.array([1.0, 0.0]), 1e-3, 10)
    w = np.full((1, 4), 0.25)
    wz = np.array([[0.25, 0.25, -0.25, -0.25]])
    stump_scan(w, wz, np.array([[2]], dtype=np.int64))
    _warmed = True
