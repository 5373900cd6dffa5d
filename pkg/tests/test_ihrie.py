import numpy as np
import pytest

from rps_spde.cocycle import make_params
from rps_spde.errors import GridMisaligned, NoConvergence, WindowExceedsExtent
from rps_spde.ihrie import (
    IhrieConfig, PeriodicField, apply_M, apply_M_all, check_periodicity, localize, residual,
    solve_fixed_point, validate_ihrie, weighted_norm,
)
from rps_spde.noise import noise_explicit, noise_from_rule, sample_ensemble, shift
from rps_spde.spectral import (
    DomainSpec, build_basis, constant_drift, project, sin_drift, tanh_sin_drift, zero_drift,
)

# mpmath: int_{-inf}^t e^{-(t-s)} sin(2 pi s) ds, and the backward
# -int_t^inf e^{(t-s)} sin(2 pi s) ds, at t = 0, 1/4, 1/2, 3/4
SIN_STABLE = [-0.155223096138459389, 0.0247045230336855759, 0.155223096138459389, -0.0247045230336855759]
SIN_UNSTABLE = [-0.155223096138459389, -0.0247045230336855759, 0.155223096138459389, 0.0247045230336855759]


def _single(mu, n_x=64):
    b = build_basis(DomainSpec(c=np.pi ** 2 + mu, n_x=n_x), 1)
    return make_params(b, noise_explicit([0.0]))


def _det_cfg():
    return IhrieConfig(tau=1.0, n_t=256, T_win=8.0, fp_tol=0.2, margin=1.0)


def _solve_det(mu, F):
    p = _single(mu)
    cfg = _det_cfg()
    ens = sample_ensemble(1, cfg.dt, *cfg.required_extent(), 2, seed=1)
    return p, cfg, ens, solve_fixed_point(cfg, p, ens, F)


def _small_flagship(B=30, seed=7, max_iters=50):
    b = build_basis(DomainSpec(n_x=32, c=15.0), 4)
    p = make_params(b, noise_from_rule("0.25/k", 4))
    cfg = IhrieConfig(tau=1.0, n_t=64, T_win=7.25, fp_tol=1e-8, max_iters=max_iters)
    ens = sample_ensemble(4, cfg.dt, *cfg.required_extent(2), B, seed=seed)
    return p, cfg, ens


@pytest.fixture(scope="module")
def small_run():
    p, cfg, ens = _small_flagship()
    F = tanh_sin_drift()
    return p, cfg, ens, F, solve_fixed_point(cfg, p, ens, F)


def test_weighted_norm():
    assert weighted_norm(np.zeros((3, 5, 2)), 0.5) == 0.0
    f = np.full((4, 8, 2), np.sqrt(2.0))
    assert weighted_norm(f, 0.5, dt=0.125) == pytest.approx(4.0)
    rng = np.random.default_rng(0)
    f = rng.standard_normal((6, 10, 3))
    t = np.arange(10) * 0.1
    brute = max(np.exp(-2 * 0.7 * t[j]) * np.mean([np.sum(f[b, j] ** 2) for b in range(6)])
                for j in range(10))
    assert abs(weighted_norm(f, 0.7, dt=0.1) - brute) <= 1e-12


def test_validate_ihrie():
    p = _single(-1.0)
    assert validate_ihrie(IhrieConfig(), None) == []
    bad = validate_ihrie(IhrieConfig(n_t=7, T_win=8.25, fp_tol=-1, max_iters=0))
    assert any("multiple of dt" in v for v in bad)
    assert any("fp_tol" in v for v in bad) and any("max_iters" in v for v in bad)
    assert any("window tail" in v for v in validate_ihrie(IhrieConfig(T_win=2.0, fp_tol=1e-8), p))


def test_constant_drift_stable():
    f = 0.7
    p, cfg, ens, res = _solve_det(-1.0, constant_drift(f))
    assert res.converged and res.iterations == 2
    g = project(np.ones(64), p.basis)[0] * f
    Y = res.Y.period()[:, :, 0]
    tol = 1e-6 + cfg.dt ** 2 * abs(g) + np.exp(-cfg.T_win) * abs(g)
    assert np.max(np.abs(Y - g)) <= tol          # -f/mu with mu = -1


def test_constant_drift_unstable():
    f = 0.7
    p, cfg, ens, res = _solve_det(1.0, constant_drift(f))
    assert p.m == 1 and res.iterations == 2
    g = project(np.ones(64), p.basis)[0] * f
    Y = res.Y.period()[:, :, 0]
    assert np.max(np.abs(Y + g)) <= 1e-6 + cfg.dt ** 2 * abs(g) + np.exp(-cfg.T_win) * abs(g)


@pytest.mark.parametrize("mu,oracle", [(-1.0, SIN_STABLE), (1.0, SIN_UNSTABLE)])
def test_sinusoidal_drift(mu, oracle):
    p, cfg, ens, res = _solve_det(mu, sin_drift(1.0, 1.0))
    g = project(np.ones(64), p.basis)[0]
    Y = res.Y.period()[0, :, 0]
    tol = 1e-6 + 10 * cfg.dt ** 2 * g + np.exp(-cfg.T_win) * g
    for q, val in zip((0, 64, 128, 192), oracle):
        assert abs(Y[q] - g * val) <= tol


def test_zero_drift_one_iteration():
    p, cfg, ens = _small_flagship(B=3)
    res = solve_fixed_point(cfg, p, ens, zero_drift())
    assert res.iterations == 1 and res.converged
    assert np.all(res.Y.traj == 0)
    assert residual(res.Y, cfg, p, ens, zero_drift()) == 0.0
    assert check_periodicity(res.Y, cfg, p, ens, zero_drift(), t_indices=[0, 5]) == 0.0
    assert np.all(apply_M(res.Y, cfg, p, ens, zero_drift(), 0.5) == 0)


def test_flagship_geometric_decay(small_run):
    p, cfg, ens, F, res = small_run
    h = res.residual_history
    assert res.converged and res.iterations <= 50
    assert all(b < a for a, b in zip(h, h[1:]))
    assert 0 < res.contraction_ratio < 1
    assert residual(res.Y, cfg, p, ens, F) <= res.certificate_bound()


def test_residual_nonincreasing(small_run):
    p, cfg, ens, F, res = small_run
    r0 = residual(res.Y, cfg, p, ens, F)
    MY = apply_M_all(res.Y, p, ens, F)
    Y1 = PeriodicField(cfg, MY, res.Y.j_lo, res.Y.sample_ids, res.Y.seed, res.Y.meta)
    assert residual(Y1, cfg, p, ens, F) <= r0 * (1 + 1e-9)


def test_direct_matches_sweep(small_run):
    p, cfg, ens, F, res = small_run
    MY = apply_M_all(res.Y, p, ens, F)
    for j in (0, 17, 63):
        d = apply_M(res.Y, cfg, p, ens, F, j * cfg.dt)
        assert np.max(np.abs(d - MY[:, j - cfg.j_lo])) <= 1e-13


def test_periodicity(small_run):
    p, cfg, ens, F, res = small_run
    gap = check_periodicity(res.Y, cfg, p, ens, F, t_indices=range(0, 64, 4))
    assert gap <= 10 * cfg.fp_tol ** 2
    # a shift by 2 tau is a shift by tau applied twice
    a = apply_M(res.Y, cfg, p, shift(ens, 2 * cfg.tau), F, 0.25)
    b = apply_M(res.Y, cfg, p, shift(shift(ens, cfg.tau), cfg.tau), F, 0.25)
    assert np.max(np.abs(a - b)) <= 1e-13
    with pytest.raises(GridMisaligned):
        apply_M(res.Y, cfg, p, shift(ens, 0.5), F, 0.25)


def test_window_tail_control():
    p, cfg, ens = _small_flagship(B=5)
    F = tanh_sin_drift()
    res = solve_fixed_point(cfg, p, ens, F)
    wide = IhrieConfig(cfg.tau, cfg.n_t, 2 * cfg.T_win, cfg.fp_tol, margin=cfg.T_win)
    ens2 = sample_ensemble(4, cfg.dt, *wide.required_extent(), 5, seed=7)
    res2 = solve_fixed_point(wide, p, ens2, F)
    bound = np.exp(-p.gap * cfg.T_win / 2) * 1.5 * 4 / p.gap
    diff = np.abs(res.Y.period() - res2.Y.period())
    assert np.max(diff) <= bound + 1e-6


def test_window_exceeds_extent():
    p, cfg, ens = _small_flagship(B=2)
    short = sample_ensemble(4, cfg.dt, -1.0, 1.0, 2, seed=7)
    with pytest.raises(WindowExceedsExtent):
        solve_fixed_point(cfg, p, short, tanh_sin_drift())


def test_no_convergence_raises():
    p, cfg, ens = _small_flagship(B=2, max_iters=1)
    res = solve_fixed_point(cfg, p, ens, tanh_sin_drift())
    assert not res.converged and len(res.residual_history) == 1
    with pytest.raises(NoConvergence) as ei:
        solve_fixed_point(cfg, p, ens, tanh_sin_drift(), raise_on_failure=True)
    assert ei.value.result.iterations == 1


def test_backends_agree(monkeypatch):
    p, cfg, ens = _small_flagship(B=3)
    F = tanh_sin_drift()
    monkeypatch.setenv("RPS_SPDE_NUMBA", "1")
    a = solve_fixed_point(cfg, p, ens, F).Y.traj
    monkeypatch.setenv("RPS_SPDE_NUMBA", "0")
    b = solve_fixed_point(cfg, p, ens, F).Y.traj
    assert np.max(np.abs(a - b)) <= 1e-14


def test_anderson_same_fixed_point(small_run):
    p, cfg, ens, F, res = small_run
    acfg = IhrieConfig(cfg.tau, cfg.n_t, cfg.T_win, cfg.fp_tol, anderson=2)
    r2 = solve_fixed_point(acfg, p, ens, F)
    assert r2.converged
    d = r2.Y.period() - res.Y.period()
    assert weighted_norm(d, p.Lambda, dt=cfg.dt) <= 4 * res.certificate_bound()


def _fake_field(B, val):
    cfg = IhrieConfig(n_t=4, T_win=1.0)
    traj = np.full((B, 12, 1), float(val))
    return PeriodicField(cfg, traj, -4, np.arange(B), 0)


def test_localize():
    B = 6
    fam = {N: (_fake_field(B, N), np.full(B, 1.0)) for N in (5, 10, 20)}
    out = localize(fam, [5, 10, 20])
    assert out["coverage_fraction"] == 1.0 and np.all(out["Y"].traj == 5.0)
    C = np.array([1.0, 7.0, 12.0, 30.0, 4.0, 19.0])
    fam = {N: (_fake_field(B, N), C) for N in (5, 10, 20)}
    covs = [localize(fam, Ns)["coverage_fraction"] for Ns in ([5], [5, 10], [5, 10, 20])]
    assert covs == sorted(covs)
    out = localize(fam, [5, 10, 20])
    assert out["uncovered"] == 1
    assert out["Y"].traj[:, 0, 0].tolist() == [5.0, 10.0, 20.0, 5.0, 20.0]
