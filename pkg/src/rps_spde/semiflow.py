"""Mild-solution integrator and the random-periodicity check built on it.

The linear multiplicative part is applied exactly through the cocycle, so only
the drift integral is discretised.
"""
from dataclasses import dataclass

import numpy as np

from .errors import GridMisaligned, NonFiniteDrift, OutOfExtent
from .noise import WienerEnsemble, WienerGrid, grid_index
from .spectral import l2_norm_sq, nemytskii

SCHEMES = ("exponential-euler", "midpoint-quadrature", "exponential-trapezoid")


@dataclass(frozen=True)
class MildSolverConfig:
    dt_flow: float
    scheme: str = "exponential-euler"
    ceiling: float = 1e8          # abort when ||u||^2 exceeds this
    implicit_tol: float = 1e-14   # exponential-trapezoid corrector tolerance
    implicit_iters: int = 50


def validate_flow(cfg: MildSolverConfig, tau=None, grid_dt=None):
    v = []
    if not cfg.dt_flow > 0:
        v.append("flow.dt_flow must be > 0")
    if cfg.scheme not in SCHEMES:
        v.append(f"flow.scheme must be one of {SCHEMES}")
    if cfg.dt_flow > 0 and tau is not None:
        q = tau / cfg.dt_flow
        if abs(q - round(q)) > 1e-9:
            v.append(f"flow.dt_flow={cfg.dt_flow} must divide tau={tau}")
    if cfg.dt_flow > 0 and grid_dt is not None:
        q = cfg.dt_flow / grid_dt
        if abs(q - round(q)) > 1e-9 or round(q) < 1:
            v.append(f"flow.dt_flow={cfg.dt_flow} must be a multiple of the path step {grid_dt}")
        elif cfg.scheme == "midpoint-quadrature" and round(q) % 2:
            v.append("midpoint-quadrature needs dt_flow to be an even number of path steps")
    return v


class _Stepper:
    """Advances a batch of states, each on its own path row and start column."""

    def __init__(self, params, ens: WienerEnsemble, F, cfg: MildSolverConfig, rows, cols):
        bad = validate_flow(cfg, grid_dt=ens.dt)
        if bad:
            raise GridMisaligned("; ".join(bad))
        self.p, self.ens, self.F, self.cfg = params, ens, F, cfg
        self.rows = np.asarray(rows)
        self.cols = np.asarray(cols)
        self.q = int(round(cfg.dt_flow / ens.dt))
        self.h = cfg.dt_flow

    def _phi(self, c0, q):
        W = self.ens.W
        dW = W[self.rows, :, c0 + q] - W[self.rows, :, c0]
        return np.exp(self.p.mu * (q * self.ens.dt) + self.p.sigma * dW)

    def _drift(self, c, u):
        t = (c + self.ens.j_min) * self.ens.dt + self.ens.origin
        return nemytskii(self.F, t, u, self.p.basis)

    def step(self, u, c):
        h, q = self.h, self.q
        s = self.cfg.scheme
        if c.max() + q >= self.ens.n:
            raise OutOfExtent("integration runs past the path extent")
        P = self._phi(c, q)
        if s == "exponential-euler":
            return P * (u + h * self._drift(c, u))
        if s == "midpoint-quadrature":
            Ph = self._phi(c, q // 2)
            um = Ph * (u + 0.5 * h * self._drift(c, u))
            return P * u + h * self._phi(c + q // 2, q // 2) * self._drift(c + q // 2, um)
        # exponential trapezoid, corrector iterated to convergence
        base = P * (u + 0.5 * h * self._drift(c, u))
        v = base + 0.5 * h * self._drift(c + q, P * (u + h * self._drift(c, u)))
        for _ in range(self.cfg.implicit_iters):
            nv = base + 0.5 * h * self._drift(c + q, v)
            if np.max(np.abs(nv - v)) <= self.cfg.implicit_tol * (1 + np.max(np.abs(nv))):
                return nv
            v = nv
        return v

    def run(self, u, n_steps):
        c = self.cols.copy()
        for _ in range(n_steps):
            u = self.step(u, c)
            c = c + self.q
            nrm = l2_norm_sq(u)
            if not np.all(np.isfinite(nrm)) or np.max(nrm, initial=0.0) > self.cfg.ceiling:
                raise NonFiniteDrift("mild solution blew up (norm above ceiling)")
        return u


def integrate_mild(psi, s, t, path, params, F, cfg: MildSolverConfig):
    """u(t, s, psi, w) for a single path (or every path of an ensemble)."""
    if t < s:
        raise ValueError("need s <= t")
    single = isinstance(path, WienerGrid)
    ens = path
    if single:
        ens = WienerEnsemble(path.W[None], path.dt, path.j_min, path.j_max, path.seed,
                             [path.sample_id], path.origin)
    n_steps = (t - s) / cfg.dt_flow
    if abs(n_steps - round(n_steps)) > 1e-9:
        raise GridMisaligned("t - s must be a multiple of dt_flow")
    c0 = ens.index(s)
    ens.index(t)
    B = len(ens)
    u = np.broadcast_to(np.asarray(psi, dtype=float), (B, params.basis.K_m)).copy()
    st = _Stepper(params, ens, F, cfg, np.arange(B), np.full(B, c0))
    u = st.run(u, int(round(n_steps)))
    return u[0] if single else u


def verify_rps(Y, icfg, params, ens: WienerEnsemble, F, fcfg: MildSolverConfig, t_stride=1):
    """E ||u(t + tau, t, Y(t, w), w) - Y(t + tau, w)||^2 for grid t in [0, tau).

    Y(t + tau, w) is read from the stored trajectory, i.e. by the shift identity.
    """
    bad = validate_flow(fcfg, tau=icfg.tau, grid_dt=ens.dt)
    if bad:
        raise GridMisaligned("; ".join(bad))
    rows = np.array([Y.sample_index(s) for s in ens.sample_ids])
    jt = np.arange(0, icfg.n_t, t_stride)
    o = grid_index(ens.origin, ens.dt)
    B, J, K = len(ens), jt.size, params.basis.K_m
    psi = Y.traj[rows][:, jt - Y.j_lo]                       # (B, J, K)
    target = Y.traj[rows][:, jt + icfg.n_t - Y.j_lo]
    cols = jt - o - ens.j_min
    rr = np.repeat(np.arange(B), J)
    cc = np.tile(cols, B)
    st = _Stepper(params, ens, F, fcfg, rr, cc)
    n_steps = int(round(icfg.tau / fcfg.dt_flow))
    u = st.run(psi.reshape(B * J, K), n_steps).reshape(B, J, K)
    err = l2_norm_sq(u - target)                             # (B, J)
    mean = err.mean(axis=0)
    se = err.std(axis=0, ddof=1) / np.sqrt(B) if B > 1 else np.zeros(J)
    return {"err_L2": float(mean.max()), "err_mean": float(mean.mean()),
            "t_index": jt, "mean_sq_error": mean, "stderr": se,
            "dt_flow": fcfg.dt_flow, "scheme": fcfg.scheme}
