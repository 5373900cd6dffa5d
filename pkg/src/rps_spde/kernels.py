"""Hot loops: windowed Volterra sums with the truncated cocycle as kernel.

For one path the log-cocycle is A[j, k] = mu_k t_j + sigma_k W^k(t_j), so
Phi(t_j - t_i, theta_{t_i} w) P^k = exp(A[j,k] - A[i,k]).  The sweep returns,
for every node j,

    stable k:    dt * trap_sum_{i=j-W}^{j}  PhiN(j, i) g[i, k]
    unstable k: -dt * trap_sum_{i=j}^{j+W}  PhiN(j, i) g[i, k]

with windows clamped at the array ends.  PhiN = min(Phi, N e^{mu (t_j-t_i)/2}
e^{Lambda |t_i|}) where t_i is absolute (path time plus origin).  The
untruncated sum is carried by an O(1) recursion; nodes where the cap can bite
are found with a sliding minimum and fixed up by an explicit loop.

Each public function dispatches to a numba kernel or a numpy fallback
depending on RPS_SPDE_NUMBA.
"""
import math

import numpy as np
from scipy.ndimage import minimum_filter1d

from ._accel import njit, prange, use_numba


# numba ----------------------------------------------------------------------

@njit(parallel=True, cache=True)
def _sweep_nb(A, g, path_of, tt, mu, lam, log_n, W, dt, out):
    B, n, K = g.shape
    for bk in prange(B * K):
        b = bk // K
        k = bk % K
        p = path_of[b]
        hm = 0.5 * mu[k]
        dq = np.empty(n, np.int64)
        head = 0
        tail = 0
        if mu[k] < 0.0:
            U = 0.0
            for j in range(n):
                if j == 0:
                    U = g[b, 0, k]
                else:
                    U = U * math.exp(A[p, j, k] - A[p, j - 1, k]) + g[b, j, k]
                    o = j - 1 - W
                    if o >= 0:
                        U -= math.exp(A[p, j, k] - A[p, o, k]) * g[b, o, k]
                lo = j - W
                if lo < 0:
                    lo = 0
                if lo == j:
                    val = 0.0
                else:
                    val = U - 0.5 * g[b, j, k] - 0.5 * math.exp(A[p, j, k] - A[p, lo, k]) * g[b, lo, k]
                # sliding min of C over [lo, j]
                cj = A[p, j, k] - hm * tt[p, j] + lam * abs(tt[p, j])
                while tail > head and (A[p, dq[tail - 1], k] - hm * tt[p, dq[tail - 1]]
                                       + lam * abs(tt[p, dq[tail - 1]])) >= cj:
                    tail -= 1
                dq[tail] = j
                tail += 1
                while dq[head] < lo:
                    head += 1
                i0 = dq[head]
                cmin = A[p, i0, k] - hm * tt[p, i0] + lam * abs(tt[p, i0])
                bj = A[p, j, k] - hm * tt[p, j]
                if bj - cmin > log_n and lo < j:
                    corr = 0.0
                    for i in range(lo, j + 1):
                        ci = A[p, i, k] - hm * tt[p, i] + lam * abs(tt[p, i])
                        if bj - ci > log_n:
                            w = 0.5 if (i == lo or i == j) else 1.0
                            cap = math.exp(log_n + hm * (tt[p, j] - tt[p, i]) + lam * abs(tt[p, i]))
                            corr += w * (cap - math.exp(A[p, j, k] - A[p, i, k])) * g[b, i, k]
                    val += corr
                out[b, j, k] = dt * val
        else:
            V = 0.0
            for j in range(n - 1, -1, -1):
                if j == n - 1:
                    V = g[b, j, k]
                else:
                    V = V * math.exp(A[p, j, k] - A[p, j + 1, k]) + g[b, j, k]
                    o = j + 1 + W
                    if o <= n - 1:
                        V -= math.exp(A[p, j, k] - A[p, o, k]) * g[b, o, k]
                hi = j + W
                if hi > n - 1:
                    hi = n - 1
                if hi == j:
                    val = 0.0
                else:
                    val = V - 0.5 * g[b, j, k] - 0.5 * math.exp(A[p, j, k] - A[p, hi, k]) * g[b, hi, k]
                cj = A[p, j, k] - hm * tt[p, j] + lam * abs(tt[p, j])
                while tail > head and (A[p, dq[tail - 1], k] - hm * tt[p, dq[tail - 1]]
                                       + lam * abs(tt[p, dq[tail - 1]])) >= cj:
                    tail -= 1
                dq[tail] = j
                tail += 1
                while dq[head] > hi:
                    head += 1
                i0 = dq[head]
                cmin = A[p, i0, k] - hm * tt[p, i0] + lam * abs(tt[p, i0])
                bj = A[p, j, k] - hm * tt[p, j]
                if bj - cmin > log_n and hi > j:
                    corr = 0.0
                    for i in range(j, hi + 1):
                        ci = A[p, i, k] - hm * tt[p, i] + lam * abs(tt[p, i])
                        if bj - ci > log_n:
                            w = 0.5 if (i == hi or i == j) else 1.0
                            cap = math.exp(log_n + hm * (tt[p, j] - tt[p, i]) + lam * abs(tt[p, i]))
                            corr += w * (cap - math.exp(A[p, j, k] - A[p, i, k])) * g[b, i, k]
                    val += corr
                out[b, j, k] = -dt * val


@njit(parallel=True, cache=True)
def _direct_nb(A, g, path_of, tt, mu, lam, log_n, W, dt, j, out):
    B, n, K = g.shape
    for bk in prange(B * K):
        b = bk // K
        k = bk % K
        p = path_of[b]
        hm = 0.5 * mu[k]
        if mu[k] < 0.0:
            lo = max(0, j - W)
            hi = j
            sgn = 1.0
        else:
            lo = j
            hi = min(n - 1, j + W)
            sgn = -1.0
        acc = 0.0
        if hi > lo:
            for i in range(lo, hi + 1):
                phi = math.exp(A[p, j, k] - A[p, i, k])
                cap = math.exp(log_n + hm * (tt[p, j] - tt[p, i]) + lam * abs(tt[p, i]))
                if cap < phi:
                    phi = cap
                w = 0.5 if (i == lo or i == hi) else 1.0
                acc += w * phi * g[b, i, k]
        out[b, k] = sgn * dt * acc


# numpy ----------------------------------------------------------------------

def _sweep_np(A, g, path_of, tt, mu, lam, log_n, W, dt, out):
    B, n, K = g.shape
    Ab = A[path_of]                      # (B, n, K)
    tb = tt[path_of]                     # (B, n)
    hm = 0.5 * mu
    C = Ab - hm * tb[..., None] + lam * np.abs(tb)[..., None]
    Bv = Ab - hm * tb[..., None]
    for ks, fwd in ((np.flatnonzero(mu < 0), True), (np.flatnonzero(mu >= 0), False)):
        if ks.size == 0:
            continue
        a = Ab[:, :, ks]
        gg = g[:, :, ks]
        res = np.zeros((B, n, ks.size))
        order = range(n) if fwd else range(n - 1, -1, -1)
        U = None
        for j in order:
            if U is None:
                U = gg[:, j].copy()
            else:
                prev = j - 1 if fwd else j + 1
                U = U * np.exp(a[:, j] - a[:, prev]) + gg[:, j]
                o = j - 1 - W if fwd else j + 1 + W
                if 0 <= o <= n - 1:
                    U -= np.exp(a[:, j] - a[:, o]) * gg[:, o]
            e = max(0, j - W) if fwd else min(n - 1, j + W)
            if e != j:
                res[:, j] = U - 0.5 * gg[:, j] - 0.5 * np.exp(a[:, j] - a[:, e]) * gg[:, e]
        # cap fix-up on nodes that can possibly be capped (centred window is a superset)
        cmin = minimum_filter1d(C[:, :, ks], size=2 * W + 1, axis=1, mode="nearest")
        flag = Bv[:, :, ks] - cmin > log_n
        for b, j, kk in zip(*np.nonzero(flag)):
            k = ks[kk]
            lo, hi = (max(0, j - W), j) if fwd else (j, min(n - 1, j + W))
            if lo == hi:
                continue
            idx = np.arange(lo, hi + 1)
            hit = Bv[b, j, k] - C[b, idx, k] > log_n
            if not hit.any():
                continue
            w = np.where((idx == lo) | (idx == hi), 0.5, 1.0)
            cap = np.exp(log_n + hm[k] * (tb[b, j] - tb[b, idx]) + lam * np.abs(tb[b, idx]))
            phi = np.exp(Ab[b, j, k] - Ab[b, idx, k])
            res[b, j, kk] += np.sum((w * (cap - phi) * g[b, idx, k])[hit])
        out[:, :, ks] = (dt if fwd else -dt) * res


def _direct_np(A, g, path_of, tt, mu, lam, log_n, W, dt, j, out):
    B, n, K = g.shape
    for k in range(K):
        if mu[k] < 0:
            lo, hi, sgn = max(0, j - W), j, 1.0
        else:
            lo, hi, sgn = j, min(n - 1, j + W), -1.0
        if hi == lo:
            out[:, k] = 0.0
            continue
        a = A[path_of][:, lo:hi + 1, k]
        t = tt[path_of][:, lo:hi + 1]
        phi = np.exp(A[path_of][:, j:j + 1, k] - a)
        cap = np.exp(log_n + 0.5 * mu[k] * (tt[path_of][:, j:j + 1] - t) + lam * np.abs(t))
        w = np.ones(hi - lo + 1)
        w[0] = w[-1] = 0.5
        out[:, k] = sgn * dt * np.sum(w * np.minimum(phi, cap) * g[:, lo:hi + 1, k], axis=1)


# dispatch -------------------------------------------------------------------

def _prep(A, g, path_of, tt, N):
    A = np.ascontiguousarray(A, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    if A.ndim == 2:
        A = A[None]
    if g.ndim == 2:
        g = g[None]
    if path_of is None:
        path_of = np.zeros(g.shape[0], np.int64) if A.shape[0] == 1 else np.arange(g.shape[0])
    path_of = np.ascontiguousarray(path_of, dtype=np.int64)
    tt = np.ascontiguousarray(np.broadcast_to(tt, A.shape[:2]), dtype=np.float64)
    log_n = math.log(N) if N > 0 else -math.inf
    return A, g, path_of, tt, log_n


def window_sweep(A, g, tt, mu, lam, N, W, dt, path_of=None, numba=None):
    """Truncated windowed integral at every node.

    A: (P, n, K) log-cocycle per path; g: (B, n, K) integrand values;
    tt: (P, n) or (n,) absolute node times; path_of: (B,) path of each item.
    """
    A, g, path_of, tt, log_n = _prep(A, g, path_of, tt, N)
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    out = np.zeros(g.shape)
    if N == 0:
        return out
    if use_numba() if numba is None else numba:
        _sweep_nb(A, g, path_of, tt, mu, float(lam), log_n, int(W), float(dt), out)
    else:
        _sweep_np(A, g, path_of, tt, mu, float(lam), log_n, int(W), float(dt), out)
    return out


def direct_window(A, g, tt, mu, lam, N, W, dt, j, path_of=None, numba=None):
    """Same quantity as window_sweep but at the single node j, summed explicitly."""
    A, g, path_of, tt, log_n = _prep(A, g, path_of, tt, N)
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    out = np.zeros((g.shape[0], g.shape[2]))
    if N == 0:
        return out
    if use_numba() if numba is None else numba:
        _direct_nb(A, g, path_of, tt, mu, float(lam), log_n, int(W), float(dt), int(j), out)
    else:
        _direct_np(A, g, path_of, tt, mu, float(lam), log_n, int(W), float(dt), int(j), out)
    return out
