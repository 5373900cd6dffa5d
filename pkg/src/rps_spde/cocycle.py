"""The diagonal cocycle Phi, its N-truncation, and dichotomy diagnostics."""
from dataclasses import dataclass

import numpy as np

from .errors import WrongTimeSign
from .noise import NoiseSpec, WienerEnsemble, shift
from .spectral import SpectralBasis, heat_semigroup


@dataclass(frozen=True, eq=False)
class CocycleParams:
    basis: SpectralBasis
    noise: NoiseSpec
    Lambda: float
    N_trunc: float = 10

    def __post_init__(self):
        if self.noise.K_m != self.basis.K_m:
            raise ValueError(f"noise has {self.noise.K_m} modes, basis has {self.basis.K_m}")
        if not self.noise.summable:
            raise ValueError(f"sigma rule {self.noise.rule!r} is not square-summable (Condition B)")
        mu = self.basis.gap
        if not 0 < self.Lambda < mu / 4:
            raise ValueError(f"Lambda={self.Lambda} must lie in (0, mu/4) with mu={mu:.6g}")
        if self.N_trunc < 0:
            raise ValueError("N_trunc must be >= 0")

    @property
    def mu(self):
        return self.basis.mu

    @property
    def sigma(self):
        return self.noise.sigma

    @property
    def m(self):
        return self.basis.m

    @property
    def gap(self):
        return self.basis.gap


def make_params(basis, noise, Lambda=None, N_trunc=10):
    """Lambda defaults to mu/8, the middle of the admissible interval."""
    if Lambda is None:
        Lambda = basis.gap / 8
    return CocycleParams(basis, noise, float(Lambda), N_trunc)


def _check_side(params, k, t):
    stable = k > params.m
    if stable and t < 0:
        raise WrongTimeSign(f"mode {k} is stable; need t >= 0, got {t}")
    if not stable and t > 0:
        raise WrongTimeSign(f"mode {k} is unstable; need t <= 0, got {t}")


def _increment(path, k, t, s):
    i = k - 1
    return path.W[i, path.index(s + t)] - path.W[i, path.index(s)]


def phi_mode(params: CocycleParams, k, t, s, path):
    i = params.basis.mode_index(k)
    dW = _increment(path, k, t, s)
    return float(np.exp(params.mu[i] * t + params.sigma[i] * dW))


def phi_apply(params: CocycleParams, t, s, path, u):
    dW = path.W[:, path.index(s + t)] - path.W[:, path.index(s)]
    return np.exp(params.mu * t + params.sigma * dW) * np.asarray(u, dtype=float)


def truncation_cap(params, k, t, s, origin=0.0):
    """N e^{mu_k t/2} e^{Lambda |s|}, with s measured from the unshifted path."""
    i = k - 1
    return params.N_trunc * np.exp(0.5 * params.mu[i] * t + params.Lambda * abs(s + origin))


def phi_truncated(params: CocycleParams, k, t, s, path):
    _check_side(params, k, t)
    phi = phi_mode(params, k, t, s, path)
    cap = truncation_cap(params, k, t, s, getattr(path, "origin", 0.0))
    if params.N_trunc == 0:
        return 0.0
    return float(min(phi, cap))


def project_pm(u, basis: SpectralBasis, sign):
    u = np.asarray(u, dtype=float)
    keep = np.arange(basis.K_m) < basis.m
    if sign in ("+", 1, "plus"):
        return np.where(keep, u, 0.0)
    if sign in ("-", -1, "minus"):
        return np.where(keep, 0.0, u)
    raise ValueError("sign must be '+' or '-'")


def _log_phi(params, t, s, path):
    dW = path.W[:, path.index(s + t)] - path.W[:, path.index(s)]
    return params.mu * t + params.sigma * dW


def check_cocycle(params: CocycleParams, t1, t2, s, path):
    """max_k |Phi(t1+t2, th_s)/(Phi(t1, th_{s+t2}) Phi(t2, th_s)) - 1|, in log space so
    that large |mu_k t| cannot overflow."""
    lhs = _log_phi(params, t1 + t2, s, path)
    rhs = _log_phi(params, t2, s, path) + _log_phi(params, t1, s + t2, path)
    return float(np.max(np.abs(np.expm1(lhs - rhs))))


def check_commutation(basis: SpectralBasis, noise: NoiseSpec, t, u):
    u = np.asarray(u, dtype=float)
    tb = heat_semigroup(basis, t, noise.sigma * u)
    bt = noise.sigma * heat_semigroup(basis, t, u)
    return float(np.max(np.abs(tb - bt)))


def estimate_lyapunov(params: CocycleParams, k, T, ensemble: WienerEnsemble):
    """Mean of (1/T) log |Phi(T) P^k| over the ensemble.

    T > 0 is a horizon; unstable modes are run backwards (t = -T).
    """
    if T <= 0:
        raise ValueError("T must be positive")
    i = params.basis.mode_index(k)
    t = T if k > params.m else -T
    w = ensemble.W[:, i, ensemble.index(t)]
    est = (params.mu[i] * t + params.sigma[i] * w) / t
    n = est.size
    sd = float(np.std(est, ddof=1)) if n > 1 else float("nan")
    return {
        "estimate": float(np.mean(est)),
        "stderr": float(params.sigma[i] / np.sqrt(T * n)),
        "sample_stderr": sd / np.sqrt(n),
        "mu_k": float(params.mu[i]),
        "n_samples": n,
    }


@dataclass
class DichotomyReport:
    modes: np.ndarray        # (K,)
    t_grid: np.ndarray
    s_grid: np.ndarray
    table: np.ndarray        # (B, K, n_t, n_s) normalized norms
    per_mode_sup: np.ndarray  # (B, K)
    C_Lambda: np.ndarray     # (B,)
    C1: np.ndarray
    C2: np.ndarray
    Lambda: float
    N_trunc: float
    m: int = 0

    @property
    def C(self):
        return np.sqrt(self.C1 ** 2 + self.C2 ** 2)

    def rows(self, sample=0):
        """(mode, t, s, normalized_norm) rows for one sample."""
        for a, k in enumerate(self.modes):
            sign = 1.0 if k > self.m else -1.0
            for b, t in enumerate(self.t_grid):
                for c, s in enumerate(self.s_grid):
                    yield int(k), float(t * sign), float(s), float(self.table[sample, a, b, c])


def _as_ensemble(path):
    if isinstance(path, WienerEnsemble):
        return path
    return WienerEnsemble(path.W[None], path.dt, path.j_min, path.j_max, path.seed,
                          [path.sample_id], path.origin)


def estimate_C_lambda(params: CocycleParams, path, t_grid, s_grid):
    """Empirical sup of ||Phi(t, theta_s w) P^k|| e^{-mu_k t/2} e^{-Lambda|s|}.

    t_grid holds magnitudes |t| >= 0; stable modes use +|t|, unstable -|t|.
    Accepts a single path or a whole ensemble (vectorised over samples).
    """
    ens = _as_ensemble(path)
    tg = np.abs(np.asarray(t_grid, dtype=float))
    sg = np.asarray(s_grid, dtype=float)
    K, m = params.basis.K_m, params.m
    mu, sig, lam = params.mu, params.sigma, params.Lambda
    B = len(ens)
    table = np.empty((B, K, tg.size, sg.size))
    si = np.array([ens.index(s) for s in sg])
    for i in range(K):
        sgn = 1.0 if i >= m else -1.0
        ti = np.array([[ens.index(s + sgn * t) for s in sg] for t in tg])
        dW = ens.W[:, i, ti] - ens.W[:, i, si][:, None, :]
        tt = sgn * tg[:, None]
        table[:, i] = np.exp(mu[i] * tt + sig[i] * dW - 0.5 * mu[i] * tt - lam * np.abs(sg)[None, :])
    per_mode = table.max(axis=(2, 3))
    C_lam = per_mode.max(axis=1)
    # Eqs. for C1, C2: s = 0 slice of the same grid
    i0 = np.array([ens.index(t) for t in tg])
    c1 = np.zeros(B)
    c2 = np.zeros(B)
    for i in range(K):
        if i >= m:
            e = (2 * mu[i] - mu[m]) * tg + 2 * sig[i] * ens.W[:, i, i0]
            c1 = np.maximum(c1, np.exp(e).max(axis=1))
        else:
            im = np.array([ens.index(-t) for t in tg])
            e = (2 * mu[i] - mu[m - 1]) * (-tg) + 2 * sig[i] * ens.W[:, i, im]
            c2 = np.maximum(c2, np.exp(e).max(axis=1))
    return DichotomyReport(np.arange(1, K + 1), tg, sg, table, per_mode, C_lam,
                           np.sqrt(c1), np.sqrt(c2), lam, params.N_trunc, m)


def temperedness_diagnostic(params: CocycleParams, ensemble: WienerEnsemble, shifts,
                            t_grid, s_grid):
    """Rows (s, mean (1/|s|) log+ C(theta_s w)) for C_Lambda, C1, C2 and C."""
    out = []
    for s in shifts:
        if s == 0:
            raise ValueError("shift s = 0 is excluded (division by |s|)")
        rep = estimate_C_lambda(params, shift(ensemble, s), t_grid, s_grid)

        def rate(c):
            return float(np.mean(np.log(np.maximum(c, 1.0)) / abs(s)))

        out.append({"s": float(s), "C_Lambda": rate(rep.C_Lambda), "C1": rate(rep.C1),
                    "C2": rate(rep.C2), "C": rate(rep.C)})
    return out


def semigroup_deviation(params: CocycleParams, k, t, ensemble: WienerEnsemble):
    _check_side(params, k, t)
    i = params.basis.mode_index(k)
    mu, sig = params.mu[i], params.sigma[i]
    w = ensemble.W[:, i, ensemble.index(t)] - ensemble.W[:, i, ensemble.index(0.0)]
    Tt = np.exp(mu * t)
    dev = (Tt * (np.exp(sig * w) - 1.0)) ** 2
    at = abs(t)
    return {
        "lhs_T": float((1.0 - Tt) ** 2),
        "rhs_T": float(abs(mu) * at),
        "lhs_Phi": float(np.mean(dev)),
        "lhs_Phi_stderr": float(np.std(dev, ddof=1) / np.sqrt(dev.size)) if dev.size > 1 else 0.0,
        "rhs_Phi_shape": float(sig ** 2 * (at + at ** 2) * max(1.0, np.exp(2 * mu * t + 2 * sig ** 2 * at))),
    }
