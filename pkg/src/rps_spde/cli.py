"""Command line entry point: rps-spde <experiment> --config FILE [--seed S] [--samples N] [--out DIR]."""
import argparse
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from ._accel import apply_thread_cap
from .config import EXPERIMENTS, ExperimentConfig, load_config, to_text
from .errors import NoConvergence, RpsError
from .io import write_csv, write_json

log = logging.getLogger("rps_spde")


def _ensemble(cfg: ExperimentConfig, icfg, shifts=1):
    from .noise import sample_ensemble
    return sample_ensemble(cfg["basis.K_m"], icfg.dt, *icfg.required_extent(shifts),
                           cfg.n_samples, cfg.seed)


def _basis_check(cfg, out):
    from .spectral import orthonormality_residual, project, reconstruct
    basis = cfg.basis()
    G = (basis.phi * basis.quad_weights) @ basis.phi.T
    K = basis.K_m
    rows = [(i + 1, j + 1, G[i, j], G[i, j] - (i == j)) for i in range(K) for j in range(K)]
    write_csv(os.path.join(out, "orthonormality.csv"), ["mode_i", "mode_j", "inner_product", "residual"], rows)
    write_csv(os.path.join(out, "eigenvalues.csv"), ["mode", "mu"],
              [(k + 1, basis.mu[k]) for k in range(K)])
    rng = np.random.default_rng(cfg.seed)
    a = rng.standard_normal((16, K))
    rt = float(np.max(np.abs(project(reconstruct(a, basis), basis) - a)))
    ortho = float(np.max(np.abs(orthonormality_residual(basis))))
    return {"orthonormality_residual": ortho, "roundtrip_error": rt, "m": basis.m, "gap": basis.gap, "grad_constant": basis.grad_constant}


def _lyapunov(cfg, out):
    from .cocycle import estimate_lyapunov
    from .noise import sample_ensemble
    params = cfg.params()
    T, dt = cfg["lyapunov.T"], cfg["lyapunov.dt"]
    ens = sample_ensemble(params.noise, dt, -T, T, cfg.n_samples, cfg.seed)
    rows = []
    for k in range(1, cfg["basis.K_m"] + 1):
        r = estimate_lyapunov(params, k, T, ens)
        rows.append((k, r["mu_k"], r["estimate"], r["stderr"], r["sample_stderr"], r["n_samples"]))
    write_csv(os.path.join(out, "lyapunov.csv"),
              ["mode", "mu_k", "estimate", "stderr", "sample_stderr", "n_samples"], rows)
    worst = max(abs(r[2] - r[1]) / (3 * r[3] + 3 * r[4]) for r in rows)
    return {"T": T, "dt": dt, "worst_ratio_to_3se": worst}


def _dichotomy(cfg, out):
    from .cocycle import estimate_C_lambda, temperedness_diagnostic
    from .noise import sample_ensemble
    params = cfg.params()
    dt = cfg["dichotomy.dt"]
    tg = np.linspace(0.0, cfg["dichotomy.t_max"], cfg["dichotomy.n_t"])
    sg = np.linspace(-cfg["dichotomy.s_max"], cfg["dichotomy.s_max"], cfg["dichotomy.n_s"])
    tg = np.round(tg / dt) * dt
    sg = np.round(sg / dt) * dt
    shifts = cfg["dichotomy.shifts"]
    reach = cfg["dichotomy.t_max"] + cfg["dichotomy.s_max"] + max(abs(s) for s in shifts)
    ens = sample_ensemble(params.noise, dt, -reach, reach, cfg.n_samples, cfg.seed)
    rep = estimate_C_lambda(params, ens, tg, sg)
    rows = []
    for b in range(len(ens)):
        for i, k in enumerate(rep.modes):
            for a, t in enumerate(rep.t_grid):
                for c, s in enumerate(rep.s_grid):
                    rows.append((int(ens.sample_ids[b]), int(k), t, s, rep.table[b, i, a, c]))
    write_csv(os.path.join(out, "dichotomy.csv"), ["sample_id", "mode", "t", "s", "normalized_norm"], rows)
    write_csv(os.path.join(out, "constants.csv"), ["sample_id", "C_Lambda", "C1", "C2", "C"],
              [(int(ens.sample_ids[b]), rep.C_Lambda[b], rep.C1[b], rep.C2[b], rep.C[b])
               for b in range(len(ens))])
    tr = temperedness_diagnostic(params, ens, shifts, tg, sg)
    write_csv(os.path.join(out, "temperedness.csv"), ["s", "C_Lambda", "C1", "C2", "C"],
              [(r["s"], r["C_Lambda"], r["C1"], r["C2"], r["C"]) for r in tr])
    return {"C_Lambda_mean": float(np.mean(rep.C_Lambda)), "C1_mean": float(np.mean(rep.C1)),
            "C2_mean": float(np.mean(rep.C2)), "Lambda": params.Lambda, "N": params.N_trunc,
            "t_grid": rep.t_grid, "s_grid": rep.s_grid}


def _solve(cfg, shifts=1):
    from .ihrie import solve_fixed_point
    params = cfg.params()
    icfg = cfg.ihrie()
    ens = _ensemble(cfg, icfg, shifts)
    F = cfg.drift()
    res = solve_fixed_point(icfg, params, ens, F,
                            callback=lambda i, h: log.info("iteration %d: diff %.3e", i, h))
    return params, icfg, ens, F, res


def _solution_rows(res, icfg):
    P = res.Y.period()
    B, n, K = P.shape
    for b in range(B):
        sid = int(res.Y.sample_ids[b])
        for j in range(n):
            for k in range(K):
                yield sid, j, k + 1, P[b, j, k]


def _write_solution(out, res, icfg):
    write_csv(os.path.join(out, "solution.csv"), ["sample_id", "t_index", "mode", "coefficient"],
              _solution_rows(res, icfg))
    write_csv(os.path.join(out, "residual_history.csv"), ["iteration", "weighted_diff"],
              [(i + 1, h) for i, h in enumerate(res.residual_history)])


def _ihrie_solve(cfg, out):
    from .ihrie import check_periodicity, residual
    params, icfg, ens, F, res = _solve(cfg)
    _write_solution(out, res, icfg)
    summary = {"iterations": res.iterations, "converged": res.converged,
               "residual_history": res.residual_history, "sup_F": res.sup_F,
               "sup_gradF": res.sup_gradF, "coverage_fraction": 1.0}
    if res.converged:
        summary["residual"] = residual(res.Y, icfg, params, ens, F)
        summary["certificate_bound"] = res.certificate_bound()
        summary["periodicity_gap"] = check_periodicity(res.Y, icfg, params, ens, F)
        summary["sup_mean_sq_norm"] = float(np.max(np.mean(np.sum(res.Y.period() ** 2, -1), 0)))
    return summary, res


def _rps_verify(cfg, out):
    from .semiflow import verify_rps
    params, icfg, ens, F, res = _solve(cfg)
    _write_solution(out, res, icfg)
    summary = {"iterations": res.iterations, "converged": res.converged,
               "residual_history": res.residual_history}
    if not res.converged:
        return summary, res
    ymax = float(np.max(np.mean(np.sum(res.Y.period() ** 2, -1), 0)))
    rows = []
    for q in cfg["flow.divisors"]:
        v = verify_rps(res.Y, icfg, params, ens, F, cfg.flow(q), cfg["flow.t_stride"])
        write_csv(os.path.join(out, f"verify_tau_over_{q}.csv"), ["t_index", "mean_sq_error", "stderr"],
                  zip(v["t_index"], v["mean_sq_error"], v["stderr"]))
        rows.append((q, v["dt_flow"], v["err_L2"], v["err_L2"] / ymax))
    write_csv(os.path.join(out, "verify_summary.csv"), ["divisor", "dt_flow", "err_L2", "relative_err"], rows)
    summary.update(sup_mean_sq_norm=ymax, scheme=cfg["flow.scheme"],
                   dt_flow=[r[1] for r in rows], err_L2=[r[2] for r in rows])
    return summary, res


def _rho_for(cfg, params, icfg, sup_F, sup_gradF):
    from .malliavin import compute_K1_K2, solve_rho
    K = compute_K1_K2(params, icfg, sup_F, sup_gradF)
    return K, solve_rho(K["K1"], K["K2"], params.gap, icfg.tau, cfg["rho.n_t"])


def _malliavin(cfg, out):
    from .allen_cahn import drift_bounds
    from .malliavin import MalliavinConfig, malliavin_run, malliavin_sobolev_stats, shift_norm_preservation
    from .spectral import reconstruct
    params = cfg.params()
    icfg = cfg.ihrie()
    periods = tuple(cfg["malliavin.periods"])
    ens = _ensemble(cfg, icfg, max(periods) + 1)
    F = cfg.drift()
    MF = malliavin_run(icfg, params, ens, F, MalliavinConfig(periods=periods))
    st = malliavin_sobolev_stats(MF, params.Lambda, n_t=icfg.n_t)
    u_max = float(np.max(np.abs(reconstruct(MF.Y, params.basis)))) + 1.0
    b = drift_bounds(F, u_max, (0.0, icfg.tau))
    gF = 0.0 if F.df is None else b["sup_gradF"]
    K, rho = _rho_for(cfg, params, icfg, b["sup_F"], gF)
    bound = np.interp(st["t"], rho.t, rho.rho)
    ok = st["D_norm"] <= bound
    write_csv(os.path.join(out, "malliavin_diagnostics.csv"), ["t_index", "D_norm", "rho_bound", "ok_flag"],
              zip(range(st["t"].size), st["D_norm"], bound, ok))
    write_csv(os.path.join(out, "equicontinuity.csv"), ["delta", "modulus"],
              [(e["delta"], e["modulus"]) for e in st["equicontinuity"]])
    summary = {"K1": K["K1"], "K2": K["K2"], "rho_residual": rho.residual,
               "neumann_factor": rho.neumann_factor, "all_ok": bool(np.all(ok)),
               "iterations": MF.iterations, "sup_F": b["sup_F"], "sup_gradF": gF}
    h = cfg["malliavin.h_periods"]
    if h:
        summary["shift_norm"] = shift_norm_preservation(MF, periods.index(h), icfg.n_t)
    return summary


def _rho(cfg, out):
    from .allen_cahn import drift_bounds
    params = cfg.params()
    icfg = cfg.ihrie()
    F = cfg.drift()
    b = drift_bounds(F, 10.0, (0.0, icfg.tau))
    gF = 0.0 if F.df is None else b["sup_gradF"]
    K, rho = _rho_for(cfg, params, icfg, b["sup_F"], gF)
    write_csv(os.path.join(out, "rho.csv"), ["t_index", "t", "rho"], zip(range(rho.t.size), rho.t, rho.rho))
    return {"K1": K["K1"], "K2": K["K2"], "residual": rho.residual, "cond": rho.cond,
            "neumann_factor": rho.neumann_factor, "sup_F": b["sup_F"], "sup_gradF": gF}


def _allen_cahn(cfg, out):
    from .allen_cahn import run_allen_cahn
    params = cfg.params()
    icfg = cfg.ihrie()
    ens = _ensemble(cfg, icfg)
    F = cfg.drift()
    r = run_allen_cahn(icfg, params, ens, F, cfg["allen_cahn.N_cut_list"],
                       cfg["allen_cahn.M_tilde"], cfg["allen_cahn.L"])
    write_csv(os.path.join(out, "l2_table.csv"), ["N_cut", "t_index", "mean_sq_norm", "bound_2L_over_K"],
              [(N, j, x, r["bound"]) for N, tab in r["l2_table"].items() for j, x in enumerate(tab)])
    write_csv(os.path.join(out, "tails.csv"), ["n", "fraction", "stderr", "chebyshev"],
              [(t["n"], t["fraction"], t["stderr"], t["chebyshev"]) for t in r["tails"]])
    conv = all(x.converged for x in r["results"].values())
    return {"bound": r["bound"], "K_rate": r["K_rate"], "coverage_fraction": r["coverage"],
            "N_stable": r["N_stable"], "stabilization": r["stabilization"],
            "sup_mean_sq_norm": {N: float(np.max(t)) for N, t in r["l2_table"].items()},
            "iterations": {N: x.iterations for N, x in r["results"].items()},
            "converged": conv}


def run(cfg: ExperimentConfig):
    """Run one experiment; returns the process exit code."""
    apply_thread_cap()
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    manifest = {"experiment": cfg.experiment, "version": __version__, "seed": cfg.seed,
                "config": dict(cfg.values), "config_text": to_text(cfg)}
    code = 0
    try:
        exp = cfg.experiment
        if exp == "basis-check":
            summary = _basis_check(cfg, out)
        elif exp == "lyapunov":
            summary = _lyapunov(cfg, out)
        elif exp == "dichotomy":
            summary = _dichotomy(cfg, out)
        elif exp == "ihrie-solve":
            summary, res = _ihrie_solve(cfg, out)
            code = 0 if res.converged else 2
        elif exp == "rps-verify":
            summary, res = _rps_verify(cfg, out)
            code = 0 if res.converged else 2
        elif exp == "malliavin":
            summary = _malliavin(cfg, out)
        elif exp == "rho":
            summary = _rho(cfg, out)
        elif exp == "allen-cahn":
            summary = _allen_cahn(cfg, out)
            code = 0 if summary["converged"] else 2
        else:
            raise ValueError(f"unknown experiment {exp!r}")
        manifest["summary"] = summary
    except NoConvergence as e:
        manifest["error"] = f"{cfg.experiment}: {e}"
        code = 2
    except (RpsError, ValueError) as e:
        manifest["error"] = f"{cfg.experiment}: {type(e).__name__}: {e}"
        log.error("%s", manifest["error"])
        code = 1
    manifest["exit_code"] = code
    manifest["wall_time"] = time.perf_counter() - t0
    write_json(os.path.join(out, "manifest.json"), manifest)
    return code


def main(argv=None):
    ap = argparse.ArgumentParser(prog="rps-spde", description=__doc__)
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--samples", type=int)
    ap.add_argument("--out")
    ap.add_argument("-v", "--verbose", action="store_true")
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(a.config)
    except (RpsError, OSError) as e:
        print(f"rps-spde: {e}", file=sys.stderr)
        return 1
    cfg = cfg.replace(experiment=a.experiment, seed=a.seed, n_samples=a.samples, output_dir=a.out)
    from .config import validate
    bad = validate(cfg.values)
    if bad:
        print("rps-spde: invalid config:\n  " + "\n  ".join(bad), file=sys.stderr)
        return 1
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
