"""Sine eigenbasis of L = d^2/dx^2 + c on an interval with Dirichlet ends.

Fields are plain float arrays of spectral coefficients with the mode axis
last, so a batch of fields is just an array of shape (..., K_m).
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (DimensionMismatch, GridTooCoarse, NegativeTime,
                     NonFiniteDrift, ZeroEigenvalue)

ZERO_EIG_TOL = 1e-9


@dataclass(frozen=True)
class DomainSpec:
    x_min: float = 0.0
    x_max: float = 1.0
    n_x: int = 128
    c: float = 0.0

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("need x_min < x_max")
        if self.n_x < 8:
            raise ValueError("need n_x >= 8")

    @property
    def length(self):
        return self.x_max - self.x_min


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    domain: DomainSpec
    K_m: int
    mu: np.ndarray          # (K,) strictly descending
    phi: np.ndarray         # (K, n_x) grid samples
    x: np.ndarray           # (n_x,)
    quad_weights: np.ndarray  # (n_x,) trapezoid weights
    m: int                  # number of positive eigenvalues
    grad_constant: float    # observed max ||phi_k'|| / sqrt|mu_k|

    @property
    def stable(self):
        return self.mu < 0

    @property
    def gap(self):
        """mu = min(-mu_{m+1}, mu_m); -mu_1 when every mode is stable."""
        if self.m == 0:
            return float(-self.mu[0])
        if self.m >= self.K_m:
            return float(self.mu[self.m - 1])
        return float(min(-self.mu[self.m], self.mu[self.m - 1]))

    def mode_index(self, k):
        """0-based index for a 1-based mode number."""
        if not 1 <= k <= self.K_m:
            raise IndexError(f"mode {k} outside 1..{self.K_m}")
        return k - 1


def trapezoid_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def build_basis(domain: DomainSpec, K_m: int) -> SpectralBasis:
    if K_m < 1:
        raise ValueError("K_m must be >= 1")
    if domain.n_x < 4 * K_m:
        raise GridTooCoarse(f"n_x={domain.n_x} < 4*K_m={4 * K_m}")
    ell = domain.length
    k = np.arange(1, K_m + 1)
    if ell == 1.0:
        mu = domain.c - k.astype(float) ** 2 * np.pi ** 2
    else:
        mu = domain.c - (k * np.pi / ell) ** 2
    bad = np.flatnonzero(np.abs(mu) < ZERO_EIG_TOL)
    if bad.size:
        raise ZeroEigenvalue(f"mu_{bad[0] + 1} = {mu[bad[0]]:.3e} is (numerically) zero")
    x = np.linspace(domain.x_min, domain.x_max, domain.n_x)
    h = ell / (domain.n_x - 1)
    xs = (x - domain.x_min) / ell
    phi = np.sqrt(2.0 / ell) * np.sin(np.outer(k, np.pi * xs))
    # endpoints are exact zeros of every sine
    phi[:, 0] = 0.0
    phi[:, -1] = 0.0
    w = trapezoid_weights(domain.n_x, h)
    dphi = np.gradient(phi, x, axis=1, edge_order=2)
    grad_norm = np.sqrt(dphi ** 2 @ w)
    C = float(np.max(grad_norm / np.sqrt(np.abs(mu))))
    m = int(np.sum(mu > 0))
    for arr in (mu, phi, x, w):
        arr.setflags(write=False)
    return SpectralBasis(domain, K_m, mu, phi, x, w, m, C)


def project(grid_values, basis: SpectralBasis):
    v = np.asarray(grid_values, dtype=float)
    if v.shape[-1] != basis.x.size:
        raise DimensionMismatch(f"expected {basis.x.size} grid values, got {v.shape[-1]}")
    return (v * basis.quad_weights) @ basis.phi.T


def reconstruct(coeffs, basis: SpectralBasis):
    f = np.asarray(coeffs, dtype=float)
    if f.shape[-1] != basis.K_m:
        raise DimensionMismatch(f"expected {basis.K_m} coefficients, got {f.shape[-1]}")
    return f @ basis.phi


def l2_norm_sq(coeffs):
    f = np.asarray(coeffs)
    return np.sum(f * f, axis=-1)


def grid_l2_norm_sq(grid_values, basis: SpectralBasis):
    v = np.asarray(grid_values)
    return (v * v) @ basis.quad_weights


def orthonormality_residual(basis: SpectralBasis):
    G = (basis.phi * basis.quad_weights) @ basis.phi.T
    return G - np.eye(basis.K_m)


def heat_semigroup(basis: SpectralBasis, t, u):
    if t < 0:
        raise NegativeTime(f"t={t} < 0")
    return np.exp(basis.mu * t) * np.asarray(u, dtype=float)


def mercer_kernel(basis: SpectralBasis, t):
    """Truncated heat kernel sum_k e^{mu_k t} phi_k(x) phi_k(y) on the grid."""
    return (basis.phi.T * np.exp(basis.mu * t)) @ basis.phi


@dataclass(frozen=True)
class Drift:
    """Pointwise drift F(t, u) with its u-derivative, both vectorised."""
    f: Callable
    df: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, t, u):
        return self.f(t, u)


def nemytskii(F, t, u, basis: SpectralBasis):
    """Project x -> F(t, u(x)) onto the basis.

    u may be a batch (..., K); t must broadcast against u.shape[:-1].
    """
    grid = reconstruct(u, basis)
    tt = np.asarray(t, dtype=float)
    if tt.ndim:
        tt = tt[..., None]
    vals = F(tt, grid)
    vals = np.broadcast_to(vals, grid.shape)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteDrift(f"drift {getattr(F, 'name', F)!r} produced non-finite values")
    return project(vals, basis)


def nemytskii_mode(F, t, u, basis: SpectralBasis, i):
    return nemytskii(F, t, u, basis)[..., basis.mode_index(i)]


def drift_jacobian(F, t, u, basis: SpectralBasis):
    """J_kl = <dF/du(t, u) phi_l, phi_k>, batched over u.shape[:-1]."""
    if F.df is None:
        raise ValueError(f"drift {F.name!r} has no derivative")
    grid = reconstruct(u, basis)
    tt = np.asarray(t, dtype=float)
    if tt.ndim:
        tt = tt[..., None]
    d = np.broadcast_to(F.df(tt, grid), grid.shape)
    if not np.all(np.isfinite(d)):
        raise NonFiniteDrift("non-finite drift derivative")
    pw = basis.phi * basis.quad_weights
    return np.einsum("kx,...x,lx->...kl", pw, d, basis.phi, optimize=True)


# named drifts ---------------------------------------------------------------

def zero_drift():
    return Drift(lambda t, u: np.zeros_like(u), lambda t, u: np.zeros_like(u), "zero")


def constant_drift(value):
    v = float(value)
    return Drift(lambda t, u: np.full_like(u, v), lambda t, u: np.zeros_like(u),
                 "const", {"value": v})


def sin_drift(amplitude, tau):
    a, w = float(amplitude), 2 * np.pi / float(tau)
    return Drift(lambda t, u: a * np.sin(w * t) + 0.0 * u, lambda t, u: np.zeros_like(u),
                 "sin", {"amplitude": a, "tau": float(tau)})


def tanh_sin_drift(amplitude=0.5, tau=1.0):
    a, w = float(amplitude), 2 * np.pi / float(tau)

    def f(t, u):
        return np.tanh(u) + a * np.sin(w * t)

    def df(t, u):
        c = np.cosh(u)
        return 1.0 / (c * c) + 0.0 * t

    return Drift(f, df, "tanh_sin", {"amplitude": a, "tau": float(tau)})


def allen_cahn_drift(forcing=1.0):
    a = float(forcing)

    def f(t, u):
        return u - u ** 3 + a * np.sin(t)

    def df(t, u):
        return 1.0 - 3.0 * u ** 2 + 0.0 * t

    return Drift(f, df, "allen_cahn", {"forcing": a})


def make_drift(name, **params):
    makers = {"zero": zero_drift, "constant": constant_drift, "const": constant_drift, "sin": sin_drift,
              "tanh_sin": tanh_sin_drift, "allen_cahn": allen_cahn_drift}
    if name not in makers:
        raise ValueError(f"unknown drift {name!r}; choose from {sorted(makers)}")
    return makers[name](**params)
