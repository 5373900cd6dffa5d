import numpy as np
import pytest

from rps_spde.errors import DimensionMismatch, GridTooCoarse, NegativeTime, NonFiniteDrift, ZeroEigenvalue
from rps_spde.spectral import (
    DomainSpec, Drift, build_basis, constant_drift, drift_jacobian, grid_l2_norm_sq, heat_semigroup,
    l2_norm_sq, make_drift, mercer_kernel, nemytskii, orthonormality_residual, project, reconstruct,
    tanh_sin_drift, zero_drift,
)

# mpmath, 30 digits
MU1_C15 = 5.13039559891064138
MU2_C15 = -24.4784176043574345
HEAT_E1_T01 = 0.372707838853437893
U2_E1_COEFF = 1.20042175487614143     # <2 sin^2(pi x), sqrt2 sin(pi x)> = 8 sqrt2 / (3 pi)


def test_dirichlet_eigenpair():
    b = build_basis(DomainSpec(c=0.0), 1)
    assert b.mu[0] == pytest.approx(-np.pi ** 2, rel=1e-15)
    assert b.m == 0


def test_c15_split():
    b = build_basis(DomainSpec(c=15.0, n_x=32), 4)
    assert b.m == 1
    assert b.mu[0] == pytest.approx(MU1_C15, rel=1e-14)
    assert b.mu[1] == pytest.approx(MU2_C15, rel=1e-14)
    assert np.all(np.diff(b.mu) < 0)
    assert b.gap == pytest.approx(MU1_C15, rel=1e-14)


def test_orthonormality():
    b = build_basis(DomainSpec(n_x=128), 16)
    assert np.max(np.abs(orthonormality_residual(b))) < 1e-10
    assert abs(b.quad_weights @ (b.phi[0] * b.phi[1])) < 1e-10
    assert b.quad_weights.sum() == pytest.approx(1.0)


def test_gradient_constant():
    b = build_basis(DomainSpec(n_x=256, c=3.0), 8)
    dphi = np.gradient(b.phi, b.x, axis=1, edge_order=2)
    g = np.sqrt(dphi ** 2 @ b.quad_weights)
    assert np.all(g <= b.grad_constant * np.sqrt(np.abs(b.mu)) * (1 + 1e-12))


def test_zero_eigenvalue_rejected():
    with pytest.raises(ZeroEigenvalue):
        build_basis(DomainSpec(c=4 * np.pi ** 2), 3)


def test_grid_too_coarse():
    with pytest.raises(GridTooCoarse):
        build_basis(DomainSpec(n_x=16), 8)


def test_project_reconstruct(rng):
    b = build_basis(DomainSpec(n_x=64), 8)
    e1 = project(b.phi[0], b)
    assert np.allclose(e1, np.eye(8)[0], atol=1e-12)
    assert np.all(reconstruct(np.zeros(8), b) == 0)
    f = rng.standard_normal((20, 8))
    assert np.max(np.abs(project(reconstruct(f, b), b) - f)) < 1e-12
    # Parseval at truncation
    assert np.allclose(grid_l2_norm_sq(reconstruct(f, b), b), l2_norm_sq(f), rtol=1e-12)
    with pytest.raises(DimensionMismatch):
        project(np.zeros(10), b)
    with pytest.raises(DimensionMismatch):
        reconstruct(np.zeros(3), b)


def test_heat_semigroup(rng):
    b = build_basis(DomainSpec(c=0.0), 4)
    u = rng.standard_normal(4)
    assert np.array_equal(heat_semigroup(b, 0.0, u), u)
    assert heat_semigroup(b, 0.1, np.eye(4)[0])[0] == pytest.approx(HEAT_E1_T01, rel=1e-14)
    lhs = heat_semigroup(b, 0.03, heat_semigroup(b, 0.05, u))
    assert np.max(np.abs(lhs - heat_semigroup(b, 0.08, u))) < 1e-13
    with pytest.raises(NegativeTime):
        heat_semigroup(b, -1.0, u)


def test_mercer_kernel_matches_modes():
    b = build_basis(DomainSpec(c=0.0, n_x=64), 6)
    Kt = mercer_kernel(b, 0.02)
    u = np.eye(6)[2]
    via_kernel = project(Kt @ (reconstruct(u, b) * b.quad_weights), b)
    assert np.allclose(via_kernel, heat_semigroup(b, 0.02, u), atol=1e-12)


def test_nemytskii_trivial_and_linear(rng):
    b = build_basis(DomainSpec(n_x=128), 8)
    u = rng.standard_normal((5, 8))
    assert np.all(nemytskii(zero_drift(), 0.0, u, b) == 0)
    ident = Drift(lambda t, v: v)
    assert np.max(np.abs(nemytskii(ident, 0.0, u, b) - u)) < 1e-10


def test_nemytskii_square():
    b = build_basis(DomainSpec(n_x=2049), 3)
    sq = Drift(lambda t, v: v * v)
    c = nemytskii(sq, 0.0, np.eye(3)[0], b)
    assert c[0] == pytest.approx(U2_E1_COEFF, rel=1e-6)
    assert abs(c[1]) < 1e-12          # even mode vanishes by symmetry


def test_nemytskii_batched_time():
    b = build_basis(DomainSpec(n_x=64), 4)
    F = tanh_sin_drift()
    u = np.zeros((3, 4))
    t = np.array([0.0, 0.25, 0.5])
    out = nemytskii(F, t, u, b)
    ones = project(np.ones(64), b)
    assert np.allclose(out, 0.5 * np.sin(2 * np.pi * t)[:, None] * ones, atol=1e-15)


def test_nemytskii_nonfinite():
    b = build_basis(DomainSpec(n_x=64), 4)
    bad = Drift(lambda t, v: v / 0.0)
    with np.errstate(divide="ignore", invalid="ignore"), pytest.raises(NonFiniteDrift):
        nemytskii(bad, 0.0, np.zeros(4), b)


def test_drift_jacobian_fd(rng):
    b = build_basis(DomainSpec(n_x=64, c=15.0), 4)
    F = tanh_sin_drift()
    u = 0.3 * rng.standard_normal(4)
    J = drift_jacobian(F, 0.1, u, b)
    h = 1e-6
    fd = np.column_stack([(nemytskii(F, 0.1, u + h * e, b) - nemytskii(F, 0.1, u - h * e, b)) / (2 * h)
                          for e in np.eye(4)])
    assert np.max(np.abs(J - fd)) < 1e-8


def test_make_drift():
    assert make_drift("constant", value=2.0)(0.0, np.zeros(3)).tolist() == [2.0] * 3
    assert constant_drift(1.0).df(0.0, np.ones(2)).tolist() == [0.0, 0.0]
    ac = make_drift("allen_cahn", forcing=0.0)
    assert ac(0.3, np.array([2.0]))[0] == pytest.approx(2.0 - 8.0)
    with pytest.raises(ValueError):
        make_drift("nope")
