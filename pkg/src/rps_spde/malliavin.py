"""Malliavin derivatives of the truncated cocycle and of M^N, and the rho^N bound.

Discrete convention: on a path grid with step dt, D^j_r with r = t_q means the
derivative with respect to the increment W^j(t_{q+1}) - W^j(t_q).  A functional
of the path through Phi(t, theta_s w) depends on that increment iff
t_q lies in [min(s, s+t), max(s, s+t)), which is the half-open version of the
indicator in the closed forms.  With this convention the closed forms are the
exact derivatives of the discretised functionals, so central differences agree
to O(h^2).
"""
import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import njit, prange, use_numba
from .cocycle import CocycleParams, _check_side, phi_mode, truncation_cap
from .errors import DivergentSeries, SingularSystem
from .ihrie import IhrieConfig, _log_cocycle, _traj_columns, weighted_norm
from .kernels import direct_window, window_sweep
from .noise import WienerEnsemble, grid_index
from .spectral import drift_jacobian, nemytskii

CAP_BOUNDARY_TOL = 1e-9


# cocycle derivative ---------------------------------------------------------

def _in_support(r, t, s, dt):
    a, b = min(s, s + t), max(s, s + t)
    return a - 1e-9 * dt <= r < b - 1e-9 * dt


def dphiN(params: CocycleParams, j, r, t, s, path, k=None):
    """D^j_r of the mode multiplier of Phi^N(t, theta_s w).

    Returns 0 for k != j (off-diagonal).  Stable j needs t >= 0 and the
    derivative carries +sigma_j; unstable j needs t <= 0 and carries -sigma_j.
    """
    _check_side(params, j, t)
    if k is not None and k != j:
        return 0.0
    if not _in_support(r, t, s, path.dt):
        return 0.0
    i = j - 1
    phi = phi_mode(params, j, t, s, path)
    cap = truncation_cap(params, j, t, s, getattr(path, "origin", 0.0))
    sgn = 1.0 if j > params.m else -1.0
    # min(1, cap/phi) phi - 1{cap < phi} (cap/phi) phi: phi below the cap, 0 above it
    return 0.0 if cap < phi else sgn * params.sigma[i] * phi


def at_cap_boundary(params, j, t, s, path):
    phi = phi_mode(params, j, t, s, path)
    cap = truncation_cap(params, j, t, s, getattr(path, "origin", 0.0))
    return abs(cap / phi - 1.0) < CAP_BOUNDARY_TOL


def check_bound_44444(params: CocycleParams, j, t, s, path):
    """|D^j Phi^N P^j| <= 2 sigma_j N e^{mu_j t/2} e^{Lambda|s|}, r inside the support."""
    _check_side(params, j, t)
    i = j - 1
    if t == 0:
        lhs = 0.0
    else:
        r = min(s, s + t)
        lhs = abs(dphiN(params, j, r, t, s, path))
    rhs = 2 * params.sigma[i] * truncation_cap(params, j, t, s, getattr(path, "origin", 0.0))
    return {"lhs": lhs, "rhs": float(rhs), "ok": bool(lhs <= rhs * (1 + 1e-12))}


# direct term of D M^N ---------------------------------------------------------

@njit(parallel=True, cache=True)
def _direct_term_nb(A, G, tt, mu, sigma, lam, log_n, W, dt, qs, out):
    n, K = G.shape
    nq = qs.shape[0]
    for jk in prange(K * n):
        j = jk // n
        js = jk % n
        hm = 0.5 * mu[j]
        S = np.zeros(n)
        if mu[j] < 0.0:
            lo = max(0, js - W)
            if lo == js:
                continue
            acc = 0.0
            for i in range(lo, js):
                phi = math.exp(A[js, j] - A[i, j])
                cap = math.exp(log_n + hm * (tt[js] - tt[i]) + lam * abs(tt[i]))
                w = 0.5 if i == lo else 1.0
                if not cap < phi:
                    acc += w * phi * G[i, j]
                S[i] = acc
            for a in range(nq):
                q = qs[a]
                if lo <= q < js:
                    out[j, a, js] = sigma[j] * dt * S[q]
        else:
            hi = min(n - 1, js + W)
            if hi == js:
                continue
            acc = 0.0
            for i in range(hi, js, -1):
                phi = math.exp(A[js, j] - A[i, j])
                cap = math.exp(log_n + hm * (tt[js] - tt[i]) + lam * abs(tt[i]))
                w = 0.5 if i == hi else 1.0
                if not cap < phi:
                    acc += w * phi * G[i, j]
                S[i] = acc
            for a in range(nq):
                q = qs[a]
                if js <= q < hi:
                    out[j, a, js] = sigma[j] * dt * S[q + 1]


def _direct_term_np(A, G, tt, mu, sigma, lam, log_n, W, dt, qs, out):
    n, K = G.shape
    for j in range(K):
        hm = 0.5 * mu[j]
        for js in range(n):
            if mu[j] < 0:
                lo, hi = max(0, js - W), js
                if lo == hi:
                    continue
                idx = np.arange(lo, js)
            else:
                lo, hi = js, min(n - 1, js + W)
                if lo == hi:
                    continue
                idx = np.arange(js + 1, hi + 1)
            phi = np.exp(A[js, j] - A[idx, j])
            cap = np.exp(log_n + hm * (tt[js] - tt[idx]) + lam * np.abs(tt[idx]))
            w = np.ones(idx.size)
            term = np.where(cap < phi, 0.0, phi) * G[idx, j]
            if mu[j] < 0:
                w[0] = 0.5
                S = np.cumsum(w * term)                 # S[q - lo] = sum_{i<=q}
                sel = (qs >= lo) & (qs < js)
                out[j, sel, js] = sigma[j] * dt * S[qs[sel] - lo]
            else:
                w[-1] = 0.5
                S = np.cumsum((w * term)[::-1])[::-1]   # S[q - js] = sum_{i>q}
                sel = (qs >= js) & (qs < hi)
                out[j, sel, js] = sigma[j] * dt * S[qs[sel] - js]


def direct_term(A, G, tt, params, W, dt, qs, numba=None):
    """Term (i): out[j, a, js] = D^j_{t_qs[a]} of the mode-j window sum at node js."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    G = np.ascontiguousarray(G, dtype=np.float64)
    tt = np.ascontiguousarray(tt, dtype=np.float64)
    qs = np.ascontiguousarray(qs, dtype=np.int64)
    n, K = G.shape
    out = np.zeros((K, qs.size, n))
    N = params.N_trunc
    if N == 0:
        return out
    log_n = math.log(N)
    args = (A, G, tt, np.ascontiguousarray(params.mu), np.ascontiguousarray(params.sigma),
            float(params.Lambda), log_n, int(W), float(dt), qs, out)
    if use_numba() if numba is None else numba:
        _direct_term_nb(*args)
    else:
        _direct_term_np(*args)
    return out


# co-iteration ----------------------------------------------------------------

@dataclass
class MalliavinField:
    """D[b, j, a, i, k] = D^j_{r_a} Y(t_i, w_b)^k for the stored time slots t_i."""
    D: np.ndarray
    r_times: np.ndarray
    t_times: np.ndarray
    dt: float
    Y: np.ndarray              # Y at the same time slots, (B, n_slots, K)
    sample_ids: np.ndarray
    iterations: list = field(default_factory=list)
    residual: list = field(default_factory=list)   # final DY change per sample


@dataclass(frozen=True)
class MalliavinConfig:
    r_min: float = None        # default -T_win
    r_max: float = None        # default (1 + periods) tau + T_win - tau
    periods: tuple = (0,)
    tol: float = None          # default fp_tol
    max_iters: int = None


def _r_window(mcfg, cfg):
    lo = -cfg.T_win if mcfg.r_min is None else mcfg.r_min
    hi = (max(mcfg.periods) + 1) * cfg.tau + cfg.T_win if mcfg.r_max is None else mcfg.r_max
    return lo, hi


def _d_norm_t(D, dt, Lambda, t_times):
    """e^{-2 Lambda |t|} sum_j sum_r dt |D|^2 per sample and slot; D (..., K, n_r, n_t, K)."""
    s = np.sum(D * D, axis=(-4, -3, -1)) * dt
    return np.exp(-2 * Lambda * np.abs(t_times)) * s


def coiterate_sample(cfg: IhrieConfig, params, A, tt, F, qs, tol, max_iters, Y0=None):
    """Picard iterates of Y and of D Y on one path.

    A, tt: log-cocycle (n, K) and absolute times (n,) on the trajectory grid;
    qs: increment indices r is taken at.  Returns Y, DY (K, n_r, n, K) and
    the per-iteration changes.
    """
    n, K = A.shape
    W, dt = cfg.W, cfg.dt
    Y = np.zeros((n, K)) if Y0 is None else Y0.copy()
    DY = np.zeros((K, qs.size, n, K))
    a0 = -cfg.j_lo
    per = slice(a0, a0 + cfg.n_t)
    tp = tt[per]
    hist = []
    linear = F.df is None
    for it in range(1, max_iters + 1):
        G = nemytskii(F, tt, Y, params.basis)
        Ynew = window_sweep(A[None], G[None], tt, params.mu, params.Lambda, params.N_trunc, W, dt)[0]
        Dnew = np.zeros_like(DY)
        T1 = direct_term(A, G, tt, params, W, dt, qs)
        if not linear:
            J = drift_jacobian(F, tt, Y, params.basis)               # (n, K, K)
            if np.any(J):
                g = np.einsum("skl,jqsl->jqsk", J, DY, optimize=True).reshape(K * qs.size, n, K)
                Dnew = window_sweep(A[None], g, tt, params.mu, params.Lambda, params.N_trunc,
                                    W, dt, path_of=np.zeros(g.shape[0], np.int64)).reshape(DY.shape)
        for j in range(K):
            Dnew[j, :, :, j] += T1[j]
        dy = float(np.max(np.exp(-2 * params.Lambda * np.abs(tp)) * np.sum((Ynew[per] - Y[per]) ** 2, -1)))
        dd = float(np.max(_d_norm_t((Dnew - DY)[:, :, per], dt, params.Lambda, tp)))
        hist.append((dy, dd))
        Y, DY = Ynew, Dnew
        if dy < tol and dd < tol:
            break
    return Y, DY, hist


def malliavin_run(cfg: IhrieConfig, params: CocycleParams, ens: WienerEnsemble, F,
                  mcfg: MalliavinConfig = MalliavinConfig()):
    """Co-iterate Y and D Y sample by sample; keep D on the requested periods."""
    i0, i1 = _traj_columns(cfg, ens)
    tt = np.arange(cfg.j_lo, cfg.j_hi + 1) * cfg.dt
    r_lo, r_hi = _r_window(mcfg, cfg)
    q_lo = max(grid_index(r_lo, cfg.dt, "r_min"), cfg.j_lo)
    q_hi = min(grid_index(r_hi, cfg.dt, "r_max"), cfg.j_hi - 1)
    qs = np.arange(q_lo, q_hi + 1) - cfg.j_lo
    slots = np.concatenate([np.arange(p * cfg.n_t, (p + 1) * cfg.n_t) - cfg.j_lo for p in mcfg.periods])
    tol = cfg.fp_tol if mcfg.tol is None else mcfg.tol
    iters = cfg.max_iters if mcfg.max_iters is None else mcfg.max_iters
    B, K = len(ens), params.basis.K_m
    D = np.empty((B, K, qs.size, slots.size, K))
    Ys = np.empty((B, slots.size, K))
    its, res = [], []
    for b in range(B):
        A = _log_cocycle(params, ens, slice(b, b + 1), i0, i1)[0]
        Y, DY, hist = coiterate_sample(cfg, params, A, tt, F, qs, tol, iters)
        D[b] = DY[:, :, slots]
        Ys[b] = Y[slots]
        its.append(len(hist))
        res.append(hist[-1][1])
    return MalliavinField(D, (qs + cfg.j_lo) * cfg.dt, tt[slots], cfg.dt, Ys,
                          ens.sample_ids.copy(), its, res)


def dM(Y_traj, DY, cfg: IhrieConfig, params, A, tt, F, j, q, js):
    """D^j_{t_q} M^N(Y)(t_js) for one path, by explicit window sums.

    Y_traj (n, K), DY (n, K) = D^j_{t_q} Y on the same grid, A/tt the path
    log-cocycle and absolute times.  Independent of the sweep kernels.
    """
    n, K = A.shape
    W, dt = cfg.W, cfg.dt
    G = nemytskii(F, tt, Y_traj, params.basis)
    out = np.zeros(K)
    i = j - 1
    mu, sig, lam = params.mu[i], params.sigma[i], params.Lambda
    N = params.N_trunc
    if mu < 0:
        lo, hi = max(0, js - W), js
        rng = [a for a in range(lo, hi + 1) if a <= q < js]
    else:
        lo, hi = js, min(n - 1, js + W)
        rng = [a for a in range(lo, hi + 1) if js <= q < a]
    acc = 0.0
    for a in rng:
        if lo == hi:
            break
        phi = math.exp(A[js, i] - A[a, i])
        cap = N * math.exp(0.5 * mu * (tt[js] - tt[a]) + lam * abs(tt[a]))
        dphi = 0.0 if cap < phi else (1.0 if mu < 0 else -1.0) * sig * phi
        w = 0.5 if a in (lo, hi) else 1.0
        acc += w * dphi * G[a, i]
    out[i] = (1.0 if mu < 0 else -1.0) * dt * acc
    if F.df is not None and np.any(DY):
        J = drift_jacobian(F, tt, Y_traj, params.basis)
        g = np.einsum("skl,sl->sk", J, DY)
        out += direct_window(A[None], g[None], tt, params.mu, lam, N, W, dt, js)[0]
    return out


# statistics --------------------------------------------------------------------

def malliavin_sobolev_stats(MF: MalliavinField, Lambda, deltas=(1, 2, 4), period=0, n_t=None):
    """Per-t D-norm and the delta-shift modulus on one stored period."""
    nt = MF.t_times.size if n_t is None else n_t
    sl = slice(period * nt, (period + 1) * nt)
    D = MF.D[:, :, :, sl]
    tt = MF.t_times[sl]
    dnorm = np.mean(_d_norm_t(D, MF.dt, Lambda, tt), axis=0) if D.shape[0] else np.zeros(nt)
    eq = []
    w = np.exp(-2 * Lambda * np.abs(tt))
    for d in deltas:
        Dp = np.zeros_like(D)
        Dp[:, :, :-d] = D[:, :, d:]
        raw = np.sum((Dp - D) ** 2, axis=(1, 2, 4)) * MF.dt      # (B, n_t)
        raw = np.mean(raw, axis=0) * w
        delta = d * MF.dt
        eq.append({"delta": delta, "integral": float(np.max(raw)),
                   "modulus": float(np.max(raw) / delta)})
    return {"t": tt, "D_norm": dnorm, "equicontinuity": eq}


def shift_norm_preservation(MF: MalliavinField, h_periods, n_t, Lambda=0.0):
    """Relative change of E(|Y|^2 + int |D_r Y|^2 dr) under a shift by h whole periods."""
    def per_sample(p):
        sl = slice(p * n_t, (p + 1) * n_t)
        D = MF.D[:, :, :, sl]
        val = np.sum(MF.Y[:, sl] ** 2, axis=-1) + np.sum(D * D, axis=(1, 2, 4)) * MF.dt
        return val.mean(axis=1)

    a = per_sample(0)
    if h_periods == 0:
        return {"gap": 0.0, "stderr": 0.0, "ok": True}
    b = per_sample(h_periods)
    ref = a.mean()
    gap = abs(b.mean() - ref) / ref
    se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size) / ref
    return {"gap": float(gap), "stderr": float(se), "ok": bool(gap <= 3 * se)}


# rho equation --------------------------------------------------------------------

def _geom_from_minus_one(r):
    """sum_{i >= -1} r^i = r^{-1} / (1 - r)."""
    if not 0 <= r < 1:
        raise DivergentSeries(f"geometric ratio {r} >= 1")
    return 1.0 / (r * (1 - r))


def compute_K1_K2(params: CocycleParams, cfg: IhrieConfig, sup_F, sup_gradF):
    """The rho-equation constants exactly as displayed (no N^2 in K2).

    With m = 0 there is no mu_m; its terms are dropped.
    """
    mu = params.mu
    m, lam, N, tau = params.m, params.Lambda, params.N_trunc, cfg.tau
    sides = []
    if m >= 1:
        sides.append((mu[m - 1], math.exp(-0.5 * mu[m - 1] * tau)))
    if m < params.basis.K_m:
        sides.append((mu[m], math.exp(0.5 * mu[m] * tau)))
    s1 = sum(_geom_from_minus_one(r) * (1 / abs(u - 4 * lam) + 1 / abs(u + 4 * lam)) for u, r in sides)
    K1 = 12 * N ** 2 * sup_gradF ** 2 * math.exp(2 * lam * tau) * s1
    s2 = sum(abs(u + 2 * lam) ** -3 + abs(u - 2 * lam) ** -3 for u, _ in sides)
    K2 = 96 * sup_F ** 2 * params.noise.sigma_sq_sum * s2
    return {"K1": float(K1), "K2": float(K2)}


@dataclass
class RhoSolution:
    t: np.ndarray
    rho: np.ndarray
    K1: float
    K2: float
    residual: float
    cond: float
    neumann_factor: float

    @property
    def neumann_ok(self):
        return self.neumann_factor < 1


def rho_kernel(mu, tau, n_t):
    t = np.linspace(0.0, tau, n_t + 1)
    w = np.full(n_t + 1, tau / n_t)
    w[0] = w[-1] = 0.5 * tau / n_t
    return t, np.exp(-0.5 * mu * np.abs(t[:, None] - t[None, :])) * w[None, :]


def solve_rho(K1, K2, mu, tau, n_t):
    """rho(t) = K1 int_0^tau e^{-mu|t-s|/2} rho(s) ds + K2 on n_t + 1 trapezoid nodes."""
    if n_t < 16:
        raise ValueError("n_t must be >= 16")
    t, Kmat = rho_kernel(mu, tau, n_t)
    M = np.eye(t.size) - K1 * Kmat
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > 1e13:
        raise SingularSystem(f"I - K1*kernel is numerically singular (cond ~ {cond:.3e})", cond)
    rho = np.linalg.solve(M, np.full(t.size, float(K2)))
    # one step of iterative refinement keeps the residual at rounding level
    rho += np.linalg.solve(M, K2 - M @ rho)
    res = float(np.max(np.abs(rho - (K1 * Kmat @ rho + K2))))
    nf = float(K1 * np.max(Kmat.sum(axis=1)))
    return RhoSolution(t, rho, float(K1), float(K2), res, cond, nf)
