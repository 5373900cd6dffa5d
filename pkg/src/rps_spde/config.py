"""Experiment configuration: flat dotted keys, parsed with a TOML reader.

Example::

    experiment = "ihrie-solve"
    seed = 20240601
    domain.c = 15.0
    basis.K_m = 8
    noise.sigma_rule = "0.25/k"
"""
import math
from dataclasses import dataclass, field

import tomli

from .errors import ParseError, RpsError, ValidationError

EXPERIMENTS = ("basis-check", "lyapunov", "dichotomy", "ihrie-solve", "rps-verify",
               "malliavin", "rho", "allen-cahn")

REQUIRED = ("experiment", "seed", "domain.c", "basis.K_m", "noise.sigma_rule")

# key -> (kind, default); kind is one of int, float, str, bool, "ints", "floats", "opt_float"
SCHEMA = {
    "experiment": (str, None),
    "seed": (int, None),
    "n_samples": (int, 100),
    "output_dir": (str, "out"),
    "domain.x_min": (float, 0.0),
    "domain.x_max": (float, 1.0),
    "domain.n_x": (int, 64),
    "domain.c": (float, None),
    "basis.K_m": (int, None),
    "noise.sigma_rule": (str, None),
    "cocycle.N_trunc": (float, 10.0),
    "cocycle.Lambda": ("opt_float", None),
    "drift.name": (str, "tanh_sin"),
    "drift.amplitude": (float, 0.5),
    "drift.value": (float, 0.0),
    "drift.forcing": (float, 1.0),
    "ihrie.tau": (float, 1.0),
    "ihrie.n_t": (int, 256),
    "ihrie.T_win": (float, 8.25),
    "ihrie.fp_tol": (float, 1e-8),
    "ihrie.max_iters": (int, 50),
    "ihrie.margin": ("opt_float", None),
    "ihrie.anderson": (int, 0),
    "flow.scheme": (str, "exponential-trapezoid"),
    "flow.divisors": ("ints", [64, 128, 256]),
    "flow.t_stride": (int, 1),
    "flow.ceiling": (float, 1e8),
    "lyapunov.T": (float, 50.0),
    "lyapunov.dt": (float, 0.0625),
    "dichotomy.t_max": (float, 4.0),
    "dichotomy.n_t": (int, 16),
    "dichotomy.s_max": (float, 4.0),
    "dichotomy.n_s": (int, 17),
    "dichotomy.dt": (float, 0.0625),
    "dichotomy.shifts": ("floats", [5.0, 10.0, 20.0, 40.0]),
    "malliavin.periods": ("ints", [0]),
    "malliavin.h_periods": (int, 0),
    "rho.n_t": (int, 256),
    "allen_cahn.N_cut_list": ("ints", [4, 6, 8]),
    "allen_cahn.M_tilde": (float, 1.5),
    "allen_cahn.L": (float, 5.0),
}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def experiment(self):
        return self.values["experiment"]

    @property
    def seed(self):
        return self.values["seed"]

    @property
    def n_samples(self):
        return self.values["n_samples"]

    @property
    def output_dir(self):
        return self.values["output_dir"]

    def replace(self, **over):
        """Copy with top-level or dotted overrides (dots written as '__')."""
        v = dict(self.values)
        for k, x in over.items():
            if x is not None:
                v[k.replace("__", ".")] = x
        return ExperimentConfig(v)

    # builders ------------------------------------------------------------------
    def domain(self):
        from .spectral import DomainSpec
        v = self.values
        return DomainSpec(v["domain.x_min"], v["domain.x_max"], v["domain.n_x"], v["domain.c"])

    def basis(self):
        from .spectral import build_basis
        return build_basis(self.domain(), self.values["basis.K_m"])

    def noise(self):
        from .noise import noise_from_rule
        return noise_from_rule(self.values["noise.sigma_rule"], self.values["basis.K_m"])

    def params(self, basis=None):
        from .cocycle import make_params
        return make_params(basis or self.basis(), self.noise(), self.values["cocycle.Lambda"],
                           self.values["cocycle.N_trunc"])

    def ihrie(self):
        from .ihrie import IhrieConfig
        v = self.values
        return IhrieConfig(v["ihrie.tau"], v["ihrie.n_t"], v["ihrie.T_win"], v["ihrie.fp_tol"],
                           v["ihrie.max_iters"], v["ihrie.margin"], v["ihrie.anderson"])

    def drift(self):
        from .spectral import make_drift
        v = self.values
        name = v["drift.name"]
        if name in ("tanh_sin", "sin"):
            return make_drift(name, amplitude=v["drift.amplitude"], tau=v["ihrie.tau"])
        if name == "constant":
            return make_drift(name, value=v["drift.value"])
        if name == "allen_cahn":
            return make_drift(name, forcing=v["drift.forcing"])
        return make_drift(name)

    def flow(self, divisor):
        from .semiflow import MildSolverConfig
        v = self.values
        return MildSolverConfig(v["ihrie.tau"] / divisor, v["flow.scheme"], v["flow.ceiling"])


def _flatten(d, prefix=""):
    out = []
    for k, x in d.items():
        key = prefix + k
        if isinstance(x, dict):
            out.extend(_flatten(x, key + "."))
        else:
            out.append((key, x))
    return out


def _coerce(key, kind, x):
    """Typed value or an error string."""
    if kind is int:
        if isinstance(x, bool) or not isinstance(x, int):
            return None, f"{key} must be an integer"
        return x, None
    if kind in (float, "opt_float"):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            return None, f"{key} must be a number"
        if not math.isfinite(x):
            return None, f"{key} must be finite"
        return float(x), None
    if kind is str:
        if not isinstance(x, str):
            return None, f"{key} must be a string"
        return x, None
    if kind in ("ints", "floats"):
        if not isinstance(x, list):
            return None, f"{key} must be a list"
        want = int if kind == "ints" else (int, float)
        if any(isinstance(e, bool) or not isinstance(e, want) for e in x):
            return None, f"{key} must be a list of {'integers' if kind == 'ints' else 'numbers'}"
        return ([int(e) for e in x] if kind == "ints" else [float(e) for e in x]), None
    raise AssertionError(kind)


def _multiple(a, b):
    q = a / b
    return abs(q - round(q)) <= 1e-9 * max(1.0, abs(q))


def validate(values):
    """Every violated constraint as a string."""
    v = []
    d = values
    if d["experiment"] not in EXPERIMENTS:
        v.append(f"experiment must be one of {EXPERIMENTS}, got {d['experiment']!r}")
    if d["n_samples"] < 1:
        v.append("n_samples must be >= 1")
    if d["seed"] < 0:
        v.append("seed must be >= 0")
    if not d["domain.x_max"] > d["domain.x_min"]:
        v.append("domain.x_max must exceed domain.x_min")
    if d["basis.K_m"] < 1:
        v.append("basis.K_m must be >= 1")
    elif d["domain.n_x"] < 4 * d["basis.K_m"]:
        v.append(f"domain.n_x={d['domain.n_x']} must be >= 4*basis.K_m={4 * d['basis.K_m']}")
    if d["cocycle.N_trunc"] < 0:
        v.append("cocycle.N_trunc must be >= 0")
    if d["drift.name"] not in ("zero", "constant", "sin", "tanh_sin", "allen_cahn"):
        v.append(f"drift.name {d['drift.name']!r} is not a known drift")
    tau, n_t = d["ihrie.tau"], d["ihrie.n_t"]
    grid_ok = tau > 0 and n_t >= 1
    if not tau > 0:
        v.append("ihrie.tau must be > 0")
    if n_t < 1:
        v.append("ihrie.n_t must be >= 1")
    if grid_ok:
        dt = tau / n_t
        if not _multiple(d["ihrie.T_win"], dt) or d["ihrie.T_win"] < dt:
            v.append(f"dt | tau grid alignment: ihrie.T_win={d['ihrie.T_win']} is not a positive "
                     f"multiple of dt = tau/n_t = {dt!r}")
        checks_flow = d["experiment"] == "rps-verify"
        for q in d["flow.divisors"] if checks_flow else ():
            if q < 1 or n_t % q and q % n_t:
                v.append(f"dt | tau grid alignment: flow step tau/{q} and dt = tau/{n_t} are not nested")
            elif q > n_t:
                v.append(f"flow step tau/{q} is finer than the path step dt = tau/{n_t}")
        if checks_flow and d["flow.scheme"] == "midpoint-quadrature":
            for q in d["flow.divisors"]:
                if q >= 1 and n_t % q == 0 and (n_t // q) % 2:
                    v.append(f"midpoint-quadrature needs tau/{q} to be an even number of path steps")
        if d["experiment"] == "malliavin" and d["malliavin.h_periods"] not in d["malliavin.periods"] \
                and d["malliavin.h_periods"] != 0:
            v.append("malliavin.h_periods must be one of malliavin.periods")
    if d["flow.scheme"] not in ("exponential-euler", "midpoint-quadrature", "exponential-trapezoid"):
        v.append(f"flow.scheme {d['flow.scheme']!r} is not a known scheme")
    if d["flow.t_stride"] < 1:
        v.append("flow.t_stride must be >= 1")
    if not d["ihrie.fp_tol"] > 0:
        v.append("ihrie.fp_tol must be > 0")
    if d["ihrie.max_iters"] < 1:
        v.append("ihrie.max_iters must be >= 1")
    if d["ihrie.margin"] is not None and d["ihrie.margin"] < 0:
        v.append("ihrie.margin must be >= 0")
    if d["lyapunov.T"] <= 0 or d["lyapunov.dt"] <= 0 or not _multiple(d["lyapunov.T"], d["lyapunov.dt"]):
        v.append("lyapunov.T must be a positive multiple of lyapunov.dt")
    ddt = d["dichotomy.dt"]
    if ddt <= 0 or not (_multiple(d["dichotomy.t_max"], ddt) and _multiple(d["dichotomy.s_max"], ddt)):
        v.append("dichotomy.t_max and dichotomy.s_max must be multiples of dichotomy.dt")
    if d["dichotomy.n_t"] < 1 or d["dichotomy.n_s"] < 1:
        v.append("dichotomy.n_t and dichotomy.n_s must be >= 1")
    if any(s == 0 for s in d["dichotomy.shifts"]):
        v.append("dichotomy.shifts must be nonzero")
    if d["rho.n_t"] < 16:
        v.append("rho.n_t must be >= 16")
    if not d["allen_cahn.N_cut_list"]:
        v.append("allen_cahn.N_cut_list must be nonempty")
    if v:
        return v
    # cross-module constraints that need the built objects
    cfg = ExperimentConfig(values)
    try:
        params = cfg.params()
    except (RpsError, ValueError) as e:
        return [f"basis/noise/cocycle: {e}"]
    from .ihrie import validate_ihrie
    if d["experiment"] in ("ihrie-solve", "rps-verify", "malliavin", "allen-cahn"):
        v += [f"{s} (dt | tau grid)" if "multiple of dt" in s else s
              for s in validate_ihrie(cfg.ihrie(), params)]
    return v


def parse_config(text):
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        msg = e.msg if hasattr(e, "msg") else str(e)
        raise ParseError(msg, getattr(e, "lineno", None), getattr(e, "colno", None)) from None
    flat = dict(_flatten(raw))
    viol = [f"missing required key {k}" for k in REQUIRED if k not in flat]
    viol += [f"unknown key {k}" for k in flat if k not in SCHEMA]
    vals = {}
    for key, (kind, default) in SCHEMA.items():
        if key in flat:
            x, err = _coerce(key, kind, flat[key])
            if err:
                viol.append(err)
            vals[key] = x
        else:
            vals[key] = default
    if viol:
        raise ValidationError(viol)
    viol = validate(vals)
    if viol:
        raise ValidationError(viol)
    return ExperimentConfig(vals)


def load_config(fname):
    with open(fname, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(x):
    if isinstance(x, str):
        return '"' + x.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, list):
        return "[" + ", ".join(_fmt(e) for e in x) + "]"
    return str(x)


def to_text(cfg: ExperimentConfig):
    """Serialize every set key; parse_config(to_text(c)) == c."""
    lines = []
    for key in SCHEMA:
        x = cfg.values.get(key)
        if x is not None:
            lines.append(f"{key} = {_fmt(x)}")
    return "\n".join(lines) + "\n"
