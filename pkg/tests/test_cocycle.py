import numpy as np
import pytest

from rps_spde.cocycle import (
    check_cocycle, check_commutation, estimate_C_lambda, estimate_lyapunov, make_params, phi_apply,
    phi_mode, phi_truncated, project_pm, semigroup_deviation, temperedness_diagnostic, truncation_cap,
)
from rps_spde.errors import WrongTimeSign
from rps_spde.noise import WienerGrid, noise_explicit, noise_from_rule, sample_ensemble, shift
from rps_spde.spectral import DomainSpec, build_basis, heat_semigroup


def _single_mode(mu, sigma, N=10.0):
    b = build_basis(DomainSpec(c=np.pi ** 2 + mu, n_x=16), 1)
    return make_params(b, noise_explicit([sigma]), N_trunc=N)


def _grid_path(values, dt, j_min=0):
    W = np.asarray(values, dtype=float)[None, :]
    return WienerGrid(dt, j_min, j_min + W.shape[1] - 1, W, 0, 0)


def test_phi_mode_scalar():
    p = _single_mode(-1.0, 0.5)
    path = _grid_path([0.0, 0.1, 0.3], 1.0)          # W(2) - W(1) = 0.2
    assert phi_mode(p, 1, 1.0, 1.0, path) == pytest.approx(np.exp(-0.9), rel=1e-14)
    assert phi_mode(p, 1, 0.0, 1.0, path) == 1.0


def test_phi_reduces_to_heat(rng):
    b = build_basis(DomainSpec(c=15.0, n_x=32), 4)
    p = make_params(b, noise_from_rule("zero", 4))
    ens = sample_ensemble(4, 0.1, -2.0, 2.0, 1, seed=1)
    u = rng.standard_normal(4)
    assert np.array_equal(phi_apply(p, 0.7, 0.3, ens[0], u), heat_semigroup(b, 0.7, u))
    assert np.all(phi_apply(p, 0.7, 0.3, ens[0], np.zeros(4)) == 0)


def test_phi_apply_diagonal(flagship_params, rng):
    p = flagship_params
    path = sample_ensemble(8, 0.05, -3.0, 3.0, 1, seed=4)[0]
    u = rng.standard_normal(8)
    for k in range(8):
        Pk = np.eye(8)[k]
        a = Pk * phi_apply(p, 1.0, 0.5, path, u)
        c = phi_apply(p, 1.0, 0.5, path, Pk * u)
        assert np.max(np.abs(a - c)) <= 1e-14


def test_truncation_inactive_and_zero(flagship_params):
    p = flagship_params
    path = sample_ensemble(8, 0.05, -3.0, 3.0, 1, seed=4)[0]
    assert phi_truncated(p, 3, 1.0, 0.5, path) == phi_mode(p, 3, 1.0, 0.5, path)
    p0 = make_params(p.basis, p.noise, N_trunc=0)
    assert phi_truncated(p0, 3, 1.0, 0.5, path) == 0.0
    with pytest.raises(WrongTimeSign):
        phi_truncated(p, 3, -1.0, 0.5, path)
    with pytest.raises(WrongTimeSign):
        phi_truncated(p, 1, 1.0, 0.5, path)


def test_truncation_active_equals_cap():
    p = _single_mode(-2.0, 1.0, N=1.5)
    t, s = 1.0, 0.5
    # choose the increment so that e^{mu t/2 + sigma dW} = 4 N e^{Lambda |s|}
    dW = (np.log(4 * 1.5) + p.Lambda * s + 1.0) / 1.0
    path = _grid_path([0.0, 0.0, 0.0, dW], 0.5)
    cap = 1.5 * np.exp(-1.0 + p.Lambda * 0.5)
    assert phi_mode(p, 1, t, s, path) > cap
    assert phi_truncated(p, 1, t, s, path) == pytest.approx(cap, rel=1e-14)
    assert truncation_cap(p, 1, t, s) == pytest.approx(cap, rel=1e-15)


def test_project_pm(rng):
    u = rng.standard_normal(4)
    b0 = build_basis(DomainSpec(c=0.0, n_x=32), 4)
    assert np.all(project_pm(u, b0, "+") == 0)
    assert np.array_equal(project_pm(u, b0, "-"), u)
    b1 = build_basis(DomainSpec(c=15.0, n_x=32), 4)
    assert np.array_equal(project_pm(u, b1, "+"), [u[0], 0, 0, 0])
    assert np.all(project_pm(project_pm(u, b1, "-"), b1, "+") == 0)


def test_cocycle_exact(flagship_params, rng):
    p = flagship_params
    ens = sample_ensemble(8, 0.05, -6.0, 6.0, 3, seed=11)
    assert check_cocycle(p, 0.0, 0.5, 0.2, ens[0]) <= 1e-15
    for _ in range(50):
        t1, t2, s = (rng.integers(-20, 21, 3) * 0.05)
        assert check_cocycle(p, t1, t2, s, ens[int(rng.integers(3))]) <= 1e-12


def test_commutation(flagship_params, rng):
    p = flagship_params
    for t in (0.0, 0.01, 0.5):
        assert check_commutation(p.basis, p.noise, t, rng.standard_normal(8)) <= 1e-14
    e2 = np.eye(8)[1]
    tb = heat_semigroup(p.basis, 0.3, p.sigma * e2)
    assert tb[1] == pytest.approx(p.sigma[1] * np.exp(p.mu[1] * 0.3), rel=1e-15)


def test_lyapunov_deterministic_and_clt():
    b = build_basis(DomainSpec(c=15.0, n_x=32), 4)
    p0 = make_params(b, noise_from_rule("zero", 4))
    ens = sample_ensemble(4, 0.5, -50.0, 50.0, 20, seed=3)
    for k in range(1, 5):
        assert estimate_lyapunov(p0, k, 50.0, ens)["estimate"] == pytest.approx(b.mu[k - 1], rel=1e-14)
    p = make_params(b, noise_from_rule("0.25/k", 4))
    ens = sample_ensemble(4, 0.5, -50.0, 50.0, 200, seed=3)
    r = estimate_lyapunov(p, 2, 50.0, ens)
    assert abs(r["estimate"] - r["mu_k"]) < 3 * 0.25 / np.sqrt(50)
    assert estimate_lyapunov(p, 2, 200.0, sample_ensemble(4, 0.5, -200.0, 200.0, 200, 3))["stderr"] \
        == pytest.approx(r["stderr"] / 2)
    with pytest.raises(ValueError):
        estimate_lyapunov(p, 1, -1.0, ens)


def test_C_lambda_deterministic_and_monotone(flagship_params):
    b = flagship_params.basis
    p0 = make_params(b, noise_from_rule("zero", 8))
    ens = sample_ensemble(8, 0.125, -10.0, 10.0, 3, seed=1)
    rep = estimate_C_lambda(p0, ens, [0.0, 0.5, 1.0], [-1.0, 0.0, 1.0])
    assert np.all(rep.C_Lambda == 1.0)
    small = estimate_C_lambda(flagship_params, ens, [0.0, 1.0], [0.0, 1.0])
    big = estimate_C_lambda(flagship_params, ens, [0.0, 0.5, 1.0, 2.0], [-2.0, 0.0, 1.0, 2.0])
    assert np.all(big.C_Lambda >= small.C_Lambda)
    assert np.all(np.isfinite(big.C_Lambda)) and np.all(big.C_Lambda >= 1.0)


def test_C_lambda_finite_many_samples(flagship_params):
    ens = sample_ensemble(8, 0.25, -8.0, 8.0, 1000, seed=17)
    rep = estimate_C_lambda(flagship_params, ens, np.arange(0, 17) * 0.25, np.arange(-8, 9) * 0.5)
    assert np.all(np.isfinite(rep.C_Lambda))
    assert np.all(np.isfinite(rep.C))


def test_temperedness(flagship_params):
    b = flagship_params.basis
    tg, sg = np.arange(0, 9) * 0.25, np.arange(-4, 5) * 0.5
    p0 = make_params(b, noise_from_rule("zero", 8))
    ens = sample_ensemble(8, 0.25, -30.0, 30.0, 4, seed=2)
    rows = temperedness_diagnostic(p0, ens, [5.0, 20.0], tg, sg)
    assert all(r["C_Lambda"] == 0.0 and r["C1"] == 0.0 and r["C2"] == 0.0 for r in rows)
    with pytest.raises(ValueError):
        temperedness_diagnostic(p0, ens, [0.0], tg, sg)
    p = make_params(b, noise_from_rule("1.5/k", 8))
    ens = sample_ensemble(8, 0.25, -30.0, 30.0, 500, seed=2)
    r5, r20 = temperedness_diagnostic(p, ens, [5.0, 20.0], tg, sg)
    assert r20["C_Lambda"] < r5["C_Lambda"]


def test_shifted_path_cap_uses_absolute_time(flagship_params):
    p = flagship_params
    ens = sample_ensemble(8, 0.125, -10.0, 10.0, 1, seed=5)
    sh = shift(ens, 2.0)[0]
    assert truncation_cap(p, 3, 1.0, 0.5, sh.origin) == truncation_cap(p, 3, 1.0, 2.5)


def test_semigroup_deviation(flagship_params):
    p = flagship_params
    ens = sample_ensemble(8, 0.01, -1.0, 1.0, 50, seed=1)
    z = semigroup_deviation(p, 3, 0.0, ens)
    assert z["lhs_T"] == 0 and z["rhs_T"] == 0 and z["lhs_Phi"] == 0
    for k in range(1, 9):
        for t in (0.01, 0.1, 0.5, 1.0):
            tt = t if k > p.m else -t
            r = semigroup_deviation(p, k, tt, ens)
            assert r["lhs_T"] <= r["rhs_T"]
    with pytest.raises(WrongTimeSign):
        semigroup_deviation(p, 1, 0.5, ens)
