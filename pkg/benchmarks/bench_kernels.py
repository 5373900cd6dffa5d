"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--samples 20] [--repeat 3]

Runs the windowed-integral sweep and the direct single-node sum on the
flagship grid, then a full fixed-point solve with RPS_SPDE_NUMBA on and off.
"""
import argparse
import os
import time

import numpy as np

from rps_spde.config import load_config
from rps_spde.ihrie import _log_cocycle, _traj_columns, solve_fixed_point
from rps_spde.kernels import direct_window, window_sweep
from rps_spde.noise import sample_ensemble

HERE = os.path.dirname(os.path.abspath(__file__))


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args(argv)

    cfg = load_config(os.path.join(HERE, "..", "configs", "flagship.cfg")).replace(n_samples=a.samples)
    p, icfg, F = cfg.params(), cfg.ihrie(), cfg.drift()
    ens = sample_ensemble(cfg["basis.K_m"], icfg.dt, *icfg.required_extent(), cfg.n_samples, cfg.seed)
    i0, i1 = _traj_columns(icfg, ens)
    A = _log_cocycle(p, ens, slice(None), i0, i1)
    tt = np.arange(icfg.j_lo, icfg.j_hi + 1) * icfg.dt
    g = np.random.default_rng(0).standard_normal(A.shape)
    args = (A, g, tt, p.mu, p.Lambda, p.N_trunc, icfg.W, icfg.dt)
    j = -icfg.j_lo + icfg.n_t // 2

    # warm up the JIT so compile time is not counted
    window_sweep(*args, numba=True)
    direct_window(*args, j, numba=True)

    print(f"grid: {a.samples} samples x {tt.size} nodes x {A.shape[2]} modes, window {icfg.W} steps")
    rows = []
    for name, fn in [("window_sweep", lambda nb: window_sweep(*args, numba=nb)),
                     ("direct_window", lambda nb: direct_window(*args, j, numba=nb))]:
        t_nb, out_nb = best_of(lambda: fn(True), a.repeat)
        t_np, out_np = best_of(lambda: fn(False), a.repeat)
        diff = float(np.max(np.abs(out_nb - out_np)) / max(np.max(np.abs(out_np)), 1e-300))
        rows.append((name, t_nb, t_np, diff))

    for flag in ("1", "0"):
        os.environ["RPS_SPDE_NUMBA"] = flag
        t, res = best_of(lambda: solve_fixed_point(icfg, p, ens, F), 1)
        rows.append((f"solve (RPS_SPDE_NUMBA={flag})", t, float("nan"), float(res.iterations)))
    os.environ.pop("RPS_SPDE_NUMBA")

    print(f"{'kernel':30s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s} {'rel diff':>9s}")
    for name, t_nb, t_np, diff in rows[:2]:
        print(f"{name:30s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f} {diff:9.1e}")
    (n1, t1, _, it1), (n0, t0, _, it0) = rows[2:]
    print(f"{'solve':30s} {t1:10.4f} {t0:10.4f} {t0 / t1:8.1f}   ({int(it1)} / {int(it0)} iterations)")


if __name__ == "__main__":
    main()
