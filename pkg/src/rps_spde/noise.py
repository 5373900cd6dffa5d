"""Two-sided Brownian paths per mode, the shift theta_s, Condition (B) bookkeeping."""
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMisaligned, OutOfExtent

ALIGN_TOL = 1e-9
_RULE = re.compile(r"^\s*([0-9.eE+-]+)\s*/\s*k\s*(?:\^\s*([0-9.eE+-]+))?\s*$")


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    sigma: np.ndarray
    rule: str = "explicit"
    summable: bool = True

    @property
    def K_m(self):
        return self.sigma.size

    @property
    def sigma_sq_max(self):
        return float(np.max(self.sigma ** 2)) if self.sigma.size else 0.0

    @property
    def sigma_sq_sum(self):
        return float(np.sum(self.sigma ** 2))


def noise_from_rule(rule, K_m):
    """Build sigma_k from a generating rule: 'a/k^p', 'a/k', a constant, or 'zero'.

    A rule a/k^p is summable in the Condition (B) sense iff 2p > 1; a nonzero
    constant never is.
    """
    k = np.arange(1, K_m + 1, dtype=float)
    r = str(rule).strip()
    if r.lower() in ("0", "zero", "none", "0.0"):
        sig, ok = np.zeros(K_m), True
    else:
        m = _RULE.match(r)
        if m:
            a = float(m.group(1))
            p = float(m.group(2)) if m.group(2) else 1.0
            sig = a / k ** p
            ok = a == 0.0 or 2 * p > 1
        else:
            try:
                a = float(r)
            except ValueError:
                raise ValueError(f"cannot parse sigma rule {rule!r}") from None
            sig = np.full(K_m, a)
            ok = a == 0.0
    if np.any(sig < 0):
        raise ValueError("sigma_k must be nonnegative")
    sig.setflags(write=False)
    return NoiseSpec(sig, r, ok)


def noise_explicit(sigma):
    s = np.array(sigma, dtype=float)
    if np.any(s < 0):
        raise ValueError("sigma_k must be nonnegative")
    s.setflags(write=False)
    return NoiseSpec(s, "explicit", True)


def check_condition_B(spec: NoiseSpec):
    return {
        "partial_sum": spec.sigma_sq_sum,
        "max_sigma_sq": spec.sigma_sq_max,
        "summable": bool(spec.summable),
        "flagged": not spec.summable,
    }


def grid_index(t, dt, what="time"):
    q = t / dt
    j = int(round(q))
    if abs(q - j) > ALIGN_TOL * max(1.0, abs(q)):
        raise GridMisaligned(f"{what} {t} is not a multiple of dt={dt}")
    return j


@dataclass(frozen=True, eq=False)
class WienerGrid:
    """One sample path; W[k, j - j_min] = W^k(j*dt).

    origin records the accumulated shift so that absolute times t + origin
    are available to the truncation cap.
    """
    dt: float
    j_min: int
    j_max: int
    W: np.ndarray
    seed: int
    sample_id: int
    origin: float = 0.0

    @property
    def t_min(self):
        return self.j_min * self.dt

    @property
    def t_max(self):
        return self.j_max * self.dt

    @property
    def n(self):
        return self.j_max - self.j_min + 1

    @property
    def times(self):
        return np.arange(self.j_min, self.j_max + 1) * self.dt

    def index(self, t):
        j = grid_index(t, self.dt)
        if not self.j_min <= j <= self.j_max:
            raise OutOfExtent(f"t={t} outside [{self.t_min}, {self.t_max}]")
        return j - self.j_min

    def at(self, t):
        return self.W[:, self.index(t)]


class WienerEnsemble:
    """Batch of paths sharing a grid; W has shape (n_samples, K, n)."""

    def __init__(self, W, dt, j_min, j_max, seed, sample_ids, origin=0.0):
        self.W = W
        self.dt = float(dt)
        self.j_min = int(j_min)
        self.j_max = int(j_max)
        self.seed = int(seed)
        self.sample_ids = np.asarray(sample_ids, dtype=np.int64)
        self.origin = float(origin)

    def __len__(self):
        return self.W.shape[0]

    def __getitem__(self, i):
        return WienerGrid(self.dt, self.j_min, self.j_max, self.W[i], self.seed,
                          int(self.sample_ids[i]), self.origin)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def K_m(self):
        return self.W.shape[1]

    @property
    def n(self):
        return self.j_max - self.j_min + 1

    @property
    def t_min(self):
        return self.j_min * self.dt

    @property
    def t_max(self):
        return self.j_max * self.dt

    @property
    def times(self):
        return np.arange(self.j_min, self.j_max + 1) * self.dt

    def index(self, t):
        j = grid_index(t, self.dt)
        if not self.j_min <= j <= self.j_max:
            raise OutOfExtent(f"t={t} outside [{self.t_min}, {self.t_max}]")
        return j - self.j_min

    def subset(self, idx):
        idx = np.atleast_1d(idx)
        return WienerEnsemble(self.W[idx], self.dt, self.j_min, self.j_max, self.seed,
                              self.sample_ids[idx], self.origin)


def _stream(seed, sample_id, k, direction):
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(sample_id), int(k), int(direction)])
    return np.random.Generator(np.random.Philox(ss))


def generate_path(spec_or_K, dt, j_min, j_max, seed, sample_id):
    """W of shape (K, n) for one sample; both half-lines from separate streams."""
    K = spec_or_K if isinstance(spec_or_K, int) else spec_or_K.K_m
    n = j_max - j_min + 1
    W = np.empty((K, n))
    i0 = -j_min
    sq = np.sqrt(dt)
    for k in range(K):
        W[k, i0] = 0.0
        if j_max > 0:
            inc = _stream(seed, sample_id, k + 1, 0).standard_normal(j_max) * sq
            W[k, i0 + 1:] = np.cumsum(inc)
        if j_min < 0:
            inc = _stream(seed, sample_id, k + 1, 1).standard_normal(-j_min) * sq
            W[k, :i0] = np.cumsum(inc)[::-1]
    return W


def sample_ensemble(spec, dt, t_min, t_max, n_samples, seed, first_sample=0):
    if dt <= 0:
        raise ValueError("dt must be positive")
    j_min = grid_index(t_min, dt, "t_min")
    j_max = grid_index(t_max, dt, "t_max")
    if not j_min <= 0 <= j_max:
        raise ValueError("need t_min <= 0 <= t_max")
    K = spec if isinstance(spec, int) else spec.K_m
    n = j_max - j_min + 1
    W = np.empty((n_samples, K, n))
    ids = np.arange(first_sample, first_sample + n_samples)
    for b, sid in enumerate(ids):
        W[b] = generate_path(K, dt, j_min, j_max, seed, sid)
    return WienerEnsemble(W, dt, j_min, j_max, seed, ids)


def _shift_arrays(W, dt, j_min, j_max, s):
    q = grid_index(s, dt, "shift")
    if not j_min <= q <= j_max:
        raise OutOfExtent(f"shift {s} outside path extent [{j_min * dt}, {j_max * dt}]")
    Ws = W - W[..., q - j_min: q - j_min + 1]
    return Ws, j_min - q, j_max - q


def shift(path, s):
    """theta_s: (theta_s W)(t) = W(t+s) - W(s), on the translated extent."""
    if isinstance(path, WienerEnsemble):
        Ws, a, b = _shift_arrays(path.W, path.dt, path.j_min, path.j_max, s)
        return WienerEnsemble(Ws, path.dt, a, b, path.seed, path.sample_ids, path.origin + s)
    Ws, a, b = _shift_arrays(path.W, path.dt, path.j_min, path.j_max, s)
    return WienerGrid(path.dt, a, b, Ws, path.seed, path.sample_id, path.origin + s)


def tilde_norm(spec: NoiseSpec, path: WienerGrid, t):
    w = path.at(t)
    return float(np.sqrt(np.sum((spec.sigma * w) ** 2)))


# dump / reload -------------------------------------------------------------

_MAGIC = b"RPSW1\n"


def _header(path: WienerGrid):
    return {"dt": path.dt, "j_min": path.j_min, "j_max": path.j_max,
            "K_m": int(path.W.shape[0]), "seed": path.seed,
            "sample_id": path.sample_id, "origin": path.origin}


def dump_path_csv(path: WienerGrid, fname):
    h = _header(path)
    with open(fname, "w") as fh:
        fh.write("# " + json.dumps(h) + "\n")
        for row in path.W:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_path_csv(fname):
    with open(fname) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError("missing path header")
        h = json.loads(first[2:])
        rows = [np.array([float(v) for v in line.split(",")]) for line in fh if line.strip()]
    W = np.vstack(rows) if rows else np.empty((0, h["j_max"] - h["j_min"] + 1))
    return WienerGrid(h["dt"], h["j_min"], h["j_max"], W, h["seed"], h["sample_id"],
                      h.get("origin", 0.0))


def dump_path_bin(path: WienerGrid, fname):
    hb = json.dumps(_header(path)).encode()
    with open(fname, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(hb).to_bytes(4, "little"))
        fh.write(hb)
        fh.write(np.ascontiguousarray(path.W, dtype="<f8").tobytes())


def load_path_bin(fname):
    with open(fname, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a path dump")
        nh = int.from_bytes(fh.read(4), "little")
        h = json.loads(fh.read(nh))
        raw = fh.read()
    n = h["j_max"] - h["j_min"] + 1
    W = np.frombuffer(raw, dtype="<f8").reshape(h["K_m"], n).astype(float)
    return WienerGrid(h["dt"], h["j_min"], h["j_max"], W, h["seed"], h["sample_id"],
                      h.get("origin", 0.0))
