"""Fixed-point map M^N on the weighted periodic space and its Picard solver.

A solution is held as a trajectory Y(t, w) on an extended grid of whole
periods around [0, tau).  By the shift identity Y(t + n tau, w) =
Y(t, theta_{n tau} w) the slot at t + n tau is the value the periodic field
takes on the shifted path, so the trajectory is just the [0, tau) field read
along the shifted paths; keeping it materialised avoids re-solving on every
shifted window.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .cocycle import CocycleParams
from .errors import (GridMisaligned, NoConvergence, OutOfExtent,
                     WindowExceedsExtent)
from .kernels import direct_window, window_sweep
from .noise import WienerEnsemble, WienerGrid, grid_index
from .spectral import l2_norm_sq, nemytskii

# elements of (samples x nodes x grid points) held at once while evaluating F
_CHUNK_ELEMS = 2 ** 23


@dataclass(frozen=True)
class IhrieConfig:
    tau: float = 1.0
    n_t: int = 256
    T_win: float = 8.25
    fp_tol: float = 1e-8
    max_iters: int = 50
    margin: float = None     # extra trajectory beyond the accuracy region; default T_win
    anderson: int = 0        # Anderson depth; 0 means plain Picard

    @property
    def dt(self):
        return self.tau / self.n_t

    @property
    def W(self):
        """Window half-width in grid steps."""
        return grid_index(self.T_win, self.dt, "T_win")

    @property
    def n_pad(self):
        m = self.T_win if self.margin is None else self.margin
        return int(math.ceil((self.T_win + m) / self.tau - 1e-12)) + 1

    @property
    def j_lo(self):
        return -self.n_pad * self.n_t

    @property
    def j_hi(self):
        return (self.n_pad + 1) * self.n_t - 1

    def required_extent(self, shifts=1):
        """Path extent (t_min, t_max) for solving plus `shifts` tau-shifts."""
        return self.j_lo * self.dt, (self.n_pad + 1 + shifts) * self.tau


def validate_ihrie(cfg: IhrieConfig, params: CocycleParams = None):
    """All violated constraints as strings (empty when valid)."""
    v = []
    if not cfg.tau > 0:
        v.append("ihrie.tau must be > 0")
    if cfg.n_t < 1 or int(cfg.n_t) != cfg.n_t:
        v.append("ihrie.n_t must be a positive integer")
    if cfg.tau > 0 and cfg.n_t >= 1:
        try:
            if cfg.W < 1:
                v.append("ihrie.T_win must be at least one grid step")
        except GridMisaligned:
            v.append(f"ihrie.T_win={cfg.T_win} must be a multiple of dt = tau/n_t = {cfg.dt}")
    if not cfg.fp_tol > 0:
        v.append("ihrie.fp_tol must be > 0")
    if cfg.max_iters < 1:
        v.append("ihrie.max_iters must be >= 1")
    if params is not None and cfg.fp_tol > 0:
        tail = math.exp(-params.gap * cfg.T_win / 2)
        if not tail < cfg.fp_tol / 10:
            v.append(f"window tail e^(-mu T_win/2) = {tail:.3e} must be below fp_tol/10 = {cfg.fp_tol / 10:.3e}"
                     f" (T_win > {2 * math.log(10 / cfg.fp_tol) / params.gap:.4g})")
    return v


@dataclass(eq=False)
class PeriodicField:
    """Per-sample trajectory; traj[b, j - j_lo] = Y(j dt, w_b) in absolute time."""
    config: IhrieConfig
    traj: np.ndarray
    j_lo: int
    sample_ids: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n_t(self):
        return self.config.n_t

    @property
    def dt(self):
        return self.config.dt

    @property
    def j_hi(self):
        return self.j_lo + self.traj.shape[1] - 1

    @property
    def times(self):
        return np.arange(self.j_lo, self.j_hi + 1) * self.dt

    def period(self, n=0):
        """Values on [n tau, (n+1) tau): Y(t, theta_{n tau} w) for t in [0, tau)."""
        a = n * self.n_t - self.j_lo
        if a < 0 or a + self.n_t > self.traj.shape[1]:
            raise OutOfExtent(f"period {n} not stored")
        return self.traj[:, a:a + self.n_t]

    def value(self, b, t, shift=0.0):
        """Y(t, theta_shift w_b); shift must be a whole number of periods."""
        q = shift / self.config.tau
        if abs(q - round(q)) > 1e-9:
            raise GridMisaligned("PeriodicField is only known along whole-period shifts")
        j = grid_index(t + shift, self.dt)
        if not self.j_lo <= j <= self.j_hi:
            raise OutOfExtent(f"t + shift = {t + shift} outside stored trajectory")
        return self.traj[b, j - self.j_lo]

    def sample_index(self, sample_id):
        hit = np.flatnonzero(self.sample_ids == sample_id)
        if hit.size == 0:
            raise KeyError(f"sample {sample_id} not in field")
        return int(hit[0])


@dataclass
class SolveResult:
    Y: PeriodicField
    iterations: int
    residual_history: list
    converged: bool
    sup_F: float = float("nan")
    sup_gradF: float = float("nan")

    @property
    def contraction_ratio(self):
        h = self.residual_history
        if len(h) < 2 or h[-2] == 0:
            return 0.0
        return math.sqrt(h[-1] / h[-2])

    def certificate_bound(self):
        if not self.residual_history:
            return float("inf")
        rho = self.contraction_ratio
        if rho >= 1:
            return float("inf")
        return self.residual_history[-1] / (1 - rho) ** 2


def weighted_norm(f, Lambda, times=None, dt=None):
    """sup_t e^{-2 Lambda |t|} E ||f(t)||^2 for f of shape (B, n, K).

    times defaults to the [0, tau) grid k*dt (dt required then) or 0..n-1.
    """
    if isinstance(f, PeriodicField):
        dt = f.dt
        f = f.period()
    f = np.asarray(f)
    if f.size == 0:
        return 0.0
    if times is None:
        times = np.arange(f.shape[1]) * (1.0 if dt is None else dt)
    ens = np.mean(np.sum(f * f, axis=-1), axis=0)
    return float(np.max(np.exp(-2 * Lambda * np.abs(times)) * ens))


# path plumbing ---------------------------------------------------------------

def _log_cocycle(params, ens: WienerEnsemble, rows, i0, i1):
    """A[b, j, k] = mu_k t_j + sigma_k W^k(t_j) on path columns i0..i1-1."""
    t = (np.arange(i0, i1) + ens.j_min) * ens.dt
    Wc = ens.W[rows, :, i0:i1]
    return params.mu * t[None, :, None] + params.sigma * np.transpose(Wc, (0, 2, 1))


def _traj_columns(Y_or_cfg, ens: WienerEnsemble):
    """Path column range matching the trajectory grid in absolute time."""
    cfg = Y_or_cfg.config if isinstance(Y_or_cfg, PeriodicField) else Y_or_cfg
    j_lo = cfg.j_lo if not isinstance(Y_or_cfg, PeriodicField) else Y_or_cfg.j_lo
    j_hi = cfg.j_hi if not isinstance(Y_or_cfg, PeriodicField) else Y_or_cfg.j_hi
    if abs(ens.dt - cfg.dt) > 1e-12 * cfg.dt:
        raise GridMisaligned(f"path dt={ens.dt} differs from tau/n_t={cfg.dt}")
    o = grid_index(ens.origin, cfg.dt, "path origin")
    i0 = j_lo - o - ens.j_min
    i1 = j_hi - o - ens.j_min + 1
    if i0 < 0 or i1 > ens.n:
        raise WindowExceedsExtent(
            f"trajectory [{j_lo * cfg.dt}, {j_hi * cfg.dt}] needs path times "
            f"[{(j_lo - o) * cfg.dt}, {(j_hi - o) * cfg.dt}], path covers [{ens.t_min}, {ens.t_max}]")
    return i0, i1


def _chunks(B, n, n_x):
    step = max(1, _CHUNK_ELEMS // max(1, n * n_x))
    for a in range(0, B, step):
        yield a, min(B, a + step)


def _apply_M_traj(Y, params, ens, F, cfg, out=None, stats=None):
    """M^N(Y) at every trajectory node (windows clamped at the ends)."""
    B, n, K = Y.shape
    i0, i1 = _traj_columns(cfg, ens)
    times = np.arange(cfg.j_lo, cfg.j_hi + 1) * cfg.dt
    if out is None:
        out = np.empty_like(Y)
    n_x = params.basis.x.size
    for a, b in _chunks(B, n, n_x):
        G = nemytskii(F, times, Y[a:b], params.basis)
        if stats is not None:
            stats["sup_G"] = max(stats.get("sup_G", 0.0), float(np.max(np.abs(G))) if G.size else 0.0)
        A = _log_cocycle(params, ens, slice(a, b), i0, i1)
        out[a:b] = window_sweep(A, G, times, params.mu, params.Lambda, params.N_trunc,
                                cfg.W, cfg.dt, path_of=np.arange(b - a))
    return out


def _diff_norm(Ynew, Y, cfg, params):
    a = -cfg.j_lo
    d = Ynew[:, a:a + cfg.n_t] - Y[:, a:a + cfg.n_t]
    return weighted_norm(d, params.Lambda, dt=cfg.dt)


def _anderson_mix(xs, gs):
    """Anderson(m) update from iterates xs and their images gs (type II)."""
    fs = [g - x for x, g in zip(xs, gs)]
    m = len(fs)
    if m == 1:
        return gs[-1]
    dF = np.stack([(fs[i + 1] - fs[i]).ravel() for i in range(m - 1)], axis=1)
    dG = [gs[i + 1] - gs[i] for i in range(m - 1)]
    gamma, *_ = np.linalg.lstsq(dF, fs[-1].ravel(), rcond=None)
    out = gs[-1].copy()
    for c, d in zip(gamma, dG):
        out -= c * d
    return out


def observed_drift_bounds(F, Y, params, cfg):
    """sup |F| and sup |dF/du| over the grid values Y actually visits."""
    from .spectral import reconstruct
    B, n, K = Y.shape
    times = np.arange(cfg.j_lo, cfg.j_hi + 1) * cfg.dt
    sf = sg = 0.0
    for a, b in _chunks(B, n, params.basis.x.size):
        u = reconstruct(Y[a:b], params.basis)
        sf = max(sf, float(np.max(np.abs(F(times[:, None], u)))))
        if F.df is not None:
            sg = max(sg, float(np.max(np.abs(F.df(times[:, None], u)))))
    return sf, (sg if F.df is not None else float("nan"))


def solve_fixed_point(cfg: IhrieConfig, params: CocycleParams, ens: WienerEnsemble, F,
                      raise_on_failure=False, callback=None):
    """Picard iteration Y_{n+1} = M^N(Y_n) from Y_0 = 0, pathwise for every sample.

    All samples advance together and stop on the ensemble criterion
    weighted_norm(Y_{n+1} - Y_n) < fp_tol.
    """
    bad = validate_ihrie(cfg)
    if bad:
        raise ValueError("; ".join(bad))
    _traj_columns(cfg, ens)
    B, K = len(ens), params.basis.K_m
    n = cfg.j_hi - cfg.j_lo + 1
    Y = np.zeros((B, n, K))
    Ynew = np.empty_like(Y)
    hist = []
    xs, gs = [], []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        _apply_M_traj(Y, params, ens, F, cfg, out=Ynew)
        h = _diff_norm(Ynew, Y, cfg, params)
        hist.append(h)
        if callback is not None:
            callback(it, h)
        if cfg.anderson > 0:
            xs.append(Y.copy())
            gs.append(Ynew.copy())
            xs, gs = xs[-(cfg.anderson + 1):], gs[-(cfg.anderson + 1):]
        if h < cfg.fp_tol or not np.isfinite(h):
            Y, Ynew = Ynew, Y
            converged = bool(np.isfinite(h))
            break
        if cfg.anderson > 0 and len(xs) > 1:
            Y = _anderson_mix(xs, gs)
        else:
            Y, Ynew = Ynew, Y
    sf, sg = observed_drift_bounds(F, Y, params, cfg) if np.all(np.isfinite(Y)) else (np.inf, np.inf)
    field_ = PeriodicField(cfg, Y, cfg.j_lo, ens.sample_ids.copy(), ens.seed,
                           {"drift": getattr(F, "name", "custom"), "origin": ens.origin})
    res = SolveResult(field_, it, hist, converged, sf, sg)
    if not converged and raise_on_failure:
        raise NoConvergence(f"no convergence after {it} iterations (last diff {hist[-1]:.3e})", res)
    return res


def apply_M_all(Y: PeriodicField, params, ens, F):
    """M^N(Y) on the whole trajectory grid for the ensemble Y was solved on."""
    return _apply_M_traj(Y.traj, params, ens, F, Y.config)


def residual(Y: PeriodicField, cfg, params, ens, F):
    """sup over the [0, tau) grid of E ||Y(t) - M^N(Y)(t)||^2."""
    MY = apply_M_all(Y, params, ens, F)
    a = -Y.j_lo
    d = Y.traj[:, a:a + cfg.n_t] - MY[:, a:a + cfg.n_t]
    return float(np.max(np.mean(l2_norm_sq(d), axis=0))) if d.size else 0.0


# single-time evaluation ------------------------------------------------------

def _window_inputs(Y: PeriodicField, params, ens: WienerEnsemble, F, t, G_traj=None):
    """Path log-cocycle, drift values and abs times on the window around t.

    t is path-relative; Y along a path shifted by o is read at t + o, which
    is only legitimate for o a whole number of periods.
    """
    cfg = Y.config
    o = ens.origin - Y.meta.get("origin", 0.0)
    q = o / cfg.tau
    if abs(q - round(q)) > 1e-9:
        raise GridMisaligned("path shift relative to Y must be a whole number of periods")
    W = cfg.W
    jt = grid_index(t, cfg.dt)
    jo = grid_index(ens.origin, cfg.dt)
    ja = jt + jo                             # absolute index of t
    lo, hi = ja - W, ja + W
    if lo < Y.j_lo or hi > Y.j_hi:
        raise WindowExceedsExtent(f"window around t={t} leaves the stored trajectory")
    c0 = lo - jo - ens.j_min
    c1 = hi - jo - ens.j_min + 1
    if c0 < 0 or c1 > ens.n:
        raise WindowExceedsExtent(f"path extent does not cover [t - T_win, t + T_win] for t={t}")
    rows = np.array([Y.sample_index(s) for s in ens.sample_ids])
    t_abs = np.arange(lo, hi + 1) * cfg.dt
    if G_traj is None:
        G = nemytskii(F, t_abs, Y.traj[rows, lo - Y.j_lo:hi - Y.j_lo + 1], params.basis)
    else:
        G = G_traj[rows, lo - Y.j_lo:hi - Y.j_lo + 1]
    A = _log_cocycle(params, ens, slice(None), c0, c1)
    return A, G, t_abs, W


def apply_M(Y: PeriodicField, cfg, params, path, F, t, G_traj=None):
    """M^N(Y)(t, w) for one path (or every path of an ensemble) by direct quadrature.

    G_traj optionally holds F(Y) in modal form on the whole stored trajectory.
    """
    single = isinstance(path, WienerGrid)
    ens = path
    if single:
        ens = WienerEnsemble(path.W[None], path.dt, path.j_min, path.j_max, path.seed,
                             [path.sample_id], path.origin)
    A, G, t_abs, W = _window_inputs(Y, params, ens, F, t, G_traj)
    out = direct_window(A, G, t_abs, params.mu, params.Lambda, params.N_trunc, W, cfg.dt, W,
                        path_of=np.arange(len(ens)))
    return out[0] if single else out


def check_periodicity(Y: PeriodicField, cfg, params, ens: WienerEnsemble, F, t_indices=None):
    """sup_t E ||M(Y)(t + tau, w) - M(Y)(t, theta_tau w)||^2 on the [0, tau) grid."""
    from .noise import shift
    sh = shift(ens, cfg.tau)
    idx = range(cfg.n_t) if t_indices is None else t_indices
    tt = np.arange(Y.j_lo, Y.j_hi + 1) * cfg.dt
    G = np.empty_like(Y.traj)
    for a in range(0, G.shape[0], 16):                # chunked: the grid values are n_x times larger
        G[a:a + 16] = nemytskii(F, tt, Y.traj[a:a + 16], params.basis)
    worst = 0.0
    for j in idx:
        t = j * cfg.dt
        a = apply_M(Y, cfg, params, ens, F, t + cfg.tau, G)
        b = apply_M(Y, cfg, params, sh, F, t, G)
        worst = max(worst, float(np.mean(l2_norm_sq(a - b))))
    return worst


def localize(family, N_list):
    """Glue Y^N per sample: N* = min{N in N_list : C_Lambda(w) < N}.

    family maps N -> (PeriodicField, C_Lambda per sample).  Samples without an
    admissible N are dropped from the returned field and counted.
    """
    N_sorted = sorted(N_list)
    Y0 = family[N_sorted[0]][0]
    B = Y0.traj.shape[0]
    n_star = np.zeros(B)
    for N in reversed(N_sorted):
        c = np.asarray(family[N][1])
        n_star = np.where(c < N, N, n_star)
    covered = n_star > 0
    traj = np.empty_like(Y0.traj)
    for N in N_sorted:
        sel = n_star == N
        traj[sel] = family[N][0].traj[sel]
    keep = np.flatnonzero(covered)
    Y = PeriodicField(Y0.config, traj[keep], Y0.j_lo, Y0.sample_ids[keep], Y0.seed,
                      dict(Y0.meta, localized=True))
    return {"Y": Y, "N_star": n_star, "covered": covered,
            "coverage_fraction": float(np.mean(covered)) if B else 1.0,
            "uncovered": int(B - covered.sum())}
