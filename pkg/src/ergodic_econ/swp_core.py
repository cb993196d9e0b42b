"""Stochastic wealth processes: specifications and deterministic ensemble simulation.

Continuous dynamics ``dx = a(x) dt + b(x) dW`` are integrated with
Euler-Maruyama; discrete gamble dynamics apply i.i.d. additive deltas or
multiplicative factors.  Every path draws from its own random stream keyed by
``(seed, path_index)``, so path ``i`` is the same whether it is simulated on
its own or inside a batch of any size.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ._expr import Expression, parse_expression

__all__ = [
    "DomainError",
    "SimulationError",
    "Family",
    "ItoDynamics",
    "DiscreteDynamics",
    "Ensemble",
    "build_ito",
    "gbm",
    "gbm_log_growth",
    "arithmetic_bm",
    "contrived_power",
    "domain_grid",
    "path_rng",
    "simulate_ito",
    "simulate_ito_path",
    "euler_maruyama",
    "simulate_discrete",
    "deterministic_ensemble",
    "write_csv",
    "save_cache",
    "load_cache",
]

CLIP_EPS = 1e-9
_BLOCK = 1 << 16
_TEMPLATE_TOL = 1e-9


class DomainError(ValueError):
    """Invalid domain, diffusion sign, or a value outside a declared domain."""


class SimulationError(FloatingPointError):
    """Numerical blow-up during simulation (NaN or infinite wealth)."""


@dataclass(frozen=True)
class Family:
    """Template the diffusion (and drift) of an Ito dynamic was matched to.

    ``kind`` is one of ``additive``, ``multiplicative``, ``power`` or ``custom``;
    ``sigma`` and ``gamma`` describe ``b(x) = sigma * x**gamma``.
    """

    kind: str = "custom"
    sigma: float | None = None
    gamma: float | None = None

    def __str__(self) -> str:
        if self.kind == "power":
            return f"power({self.gamma:g})"
        return self.kind


def domain_grid(domain: tuple[float, float], n: int = 201) -> np.ndarray:
    """Sample points strictly inside ``domain``.

    Infinite ends are truncated: ``(0, inf)`` is sampled log-uniformly on
    ``[1e-3, 1e3]`` and ``(-inf, inf)`` uniformly on ``[-1e3, 1e3]``.
    """
    lo, hi = map(float, domain)
    if not lo < hi:
        raise DomainError(f"empty domain ({lo}, {hi})")
    if math.isfinite(lo) and math.isfinite(hi):
        return np.linspace(lo, hi, n + 2)[1:-1]
    if math.isfinite(lo):
        return lo + np.geomspace(1e-3, 1e3, n)
    if math.isfinite(hi):
        return hi - np.geomspace(1e-3, 1e3, n)[::-1]
    return np.linspace(-1e3, 1e3, n)


def _close(v: np.ndarray, ref: float) -> bool:
    return bool(np.max(np.abs(v - ref)) <= _TEMPLATE_TOL * (1.0 + abs(ref)))


def _detect_family(drift: Expression, diffusion: Expression, domain) -> Family:
    grid = domain_grid(domain)
    a, b = drift(grid), diffusion(grid)
    if _close(b, b[0]) and _close(a, a[0]):
        return Family("additive", sigma=float(b[0]), gamma=0.0)
    if domain[0] < 0:
        return Family()
    logx, logb = np.log(grid), np.log(b)
    gamma, logsig = np.polyfit(logx, logb, 1)
    if np.max(np.abs(logb - (logsig + gamma * logx))) > _TEMPLATE_TOL:
        return Family()
    gamma = round(gamma, 9) if abs(gamma - round(gamma, 9)) < 1e-10 else float(gamma)
    sigma = float(f"{np.exp(logsig):.12g}")
    # the drift must keep (a - b b'/2) / b constant for the template to be ergodizable
    q = a / b - 0.5 * sigma * gamma * grid ** (gamma - 1.0)
    if not _close(q, float(np.median(q))):
        return Family()
    if abs(gamma - 1.0) <= _TEMPLATE_TOL:
        return Family("multiplicative", sigma=sigma, gamma=1.0)
    return Family("power", sigma=sigma, gamma=float(gamma))


@dataclass(frozen=True)
class ItoDynamics:
    """Drift ``a(x)`` and diffusion ``b(x)`` of ``dx = a dt + b dW`` on an open domain."""

    drift: Expression
    diffusion: Expression
    domain: tuple[float, float] = (-math.inf, math.inf)
    family: Family = field(default_factory=Family)

    def a(self, x):
        return self.drift(x)

    def b(self, x):
        return self.diffusion(x)

    @property
    def fingerprint(self) -> str:
        payload = {
            "kind": "ito",
            "drift": self.drift.source,
            "diffusion": self.diffusion.source,
            "domain": [repr(float(v)) for v in self.domain],
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def contains(self, x: float) -> bool:
        return self.domain[0] < x < self.domain[1]


def build_ito(drift: str | Expression, diffusion: str | Expression,
              domain: Sequence[float] = (-math.inf, math.inf)) -> ItoDynamics:
    """Parse and validate an Ito dynamic.

    The diffusion must be strictly positive on a 201-point sample of the
    domain; the first offending point is reported otherwise.  The family hint
    is detected numerically from the sampled coefficients.
    """
    drift = parse_expression(drift) if isinstance(drift, str) else drift
    diffusion = parse_expression(diffusion) if isinstance(diffusion, str) else diffusion
    lo, hi = (float(domain[0]), float(domain[1]))
    grid = domain_grid((lo, hi))
    b = diffusion(grid)
    bad = ~(np.isfinite(b) & (b > 0))
    if bad.any():
        x_bad = float(grid[np.argmax(bad)])
        raise DomainError(f"diffusion {diffusion.text!r} is not strictly positive at x={x_bad:g} "
                          f"(b={float(b[np.argmax(bad)]):g})")
    a = drift(grid)
    if not np.all(np.isfinite(a)):
        x_bad = float(grid[np.argmax(~np.isfinite(a))])
        raise DomainError(f"drift {drift.text!r} is not finite at x={x_bad:g}")
    return ItoDynamics(drift, diffusion, (lo, hi), _detect_family(drift, diffusion, (lo, hi)))


def gbm(mu: float, sigma: float) -> ItoDynamics:
    """Geometric Brownian motion ``dx = mu x dt + sigma x dW`` on ``(0, inf)``."""
    return build_ito(f"{float(mu)!r}*x", f"{float(sigma)!r}*x", (0.0, math.inf))


def gbm_log_growth(g: float, sigma: float) -> ItoDynamics:
    """GBM whose logarithm grows at rate ``g``, i.e. drift ``mu = g + sigma**2/2``."""
    return gbm(g + 0.5 * sigma * sigma, sigma)


def arithmetic_bm(mu: float, sigma: float) -> ItoDynamics:
    return build_ito(repr(float(mu)), repr(float(sigma)), (-math.inf, math.inf))


def contrived_power(gamma: float) -> ItoDynamics:
    """``a(x) = x^g + (g/2) x^(2g-1)``, ``b(x) = x^g``: ergodized by a CRRA map."""
    gamma = float(gamma)
    return build_ito(f"x**{gamma!r} + {gamma / 2!r}*x**{2 * gamma - 1!r}",
                     f"x**{gamma!r}", (0.0, math.inf))


@dataclass(frozen=True)
class DiscreteDynamics:
    """I.i.d. per-step wealth changes: additive deltas or multiplicative factors."""

    mode: str
    outcomes: tuple[float, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        if self.mode not in ("additive", "multiplicative"):
            raise ValueError(f"mode must be additive or multiplicative, got {self.mode!r}")
        out = tuple(float(v) for v in self.outcomes)
        prob = tuple(float(p) for p in self.probabilities)
        if not out or len(out) != len(prob):
            raise ValueError("outcomes and probabilities must be non-empty and of equal length")
        if any(p < 0 for p in prob) or abs(sum(prob) - 1.0) > 1e-12:
            raise ValueError(f"probabilities must be nonnegative and sum to 1, got {prob}")
        if self.mode == "multiplicative" and any(m <= 0 for m in out):
            raise ValueError("multiplicative factors must be strictly positive")
        object.__setattr__(self, "outcomes", out)
        object.__setattr__(self, "probabilities", prob)

    @classmethod
    def equiprobable(cls, mode: str, outcomes: Sequence[float]) -> "DiscreteDynamics":
        k = len(outcomes)
        return cls(mode, tuple(outcomes), tuple([1.0 / k] * k))

    @property
    def fingerprint(self) -> str:
        payload = {"kind": "discrete", "mode": self.mode,
                   "outcomes": [repr(v) for v in self.outcomes],
                   "probabilities": [repr(p) for p in self.probabilities]}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Ensemble:
    """``N`` wealth trajectories on a shared, strictly increasing time grid.

    ``flagged`` marks paths that were clipped back into the domain; growth
    estimators exclude them.
    """

    time_grid: np.ndarray
    paths: np.ndarray
    x0: float
    seed: int | None = None
    dynamics_fingerprint: str = ""
    flagged: np.ndarray | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        grid = np.array(self.time_grid, dtype=float)
        paths = np.array(self.paths, dtype=float)
        if paths.ndim == 1:
            paths = paths[None, :]
        if grid.ndim != 1 or paths.shape[1] != grid.size:
            raise ValueError(f"paths shape {paths.shape} does not match grid of {grid.size} times")
        if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise ValueError("time grid must start at 0 and be strictly increasing")
        if not np.all(paths[:, 0] == self.x0):
            raise ValueError("every path must start at x0")
        if not np.all(np.isfinite(paths)):
            raise ValueError("ensemble contains non-finite wealth values")
        flagged = (np.zeros(paths.shape[0], dtype=bool) if self.flagged is None
                   else np.array(self.flagged, dtype=bool))
        for arr in (grid, paths, flagged):
            arr.setflags(write=False)
        object.__setattr__(self, "time_grid", grid)
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "flagged", flagged)
        object.__setattr__(self, "x0", float(self.x0))
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def n_times(self) -> int:
        return self.time_grid.size

    @property
    def t_max(self) -> float:
        return float(self.time_grid[-1])

    @property
    def step(self) -> float:
        """Grid spacing; raises if the grid is not uniform."""
        d = np.diff(self.time_grid)
        if not np.allclose(d, d[0], rtol=1e-9, atol=0):
            raise ValueError("time grid is not uniform")
        return float(d[0])

    def index_of(self, t: float) -> int:
        """Index of grid time ``t`` (matched to 1e-9 relative)."""
        i = int(np.searchsorted(self.time_grid, t - 1e-9 * max(1.0, abs(t))))
        if i >= self.n_times or not math.isclose(self.time_grid[i], t, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"t={t} is not on the time grid")
        return i

    def replace(self, **changes) -> "Ensemble":
        kw = dict(time_grid=self.time_grid, paths=self.paths, x0=self.x0, seed=self.seed,
                  dynamics_fingerprint=self.dynamics_fingerprint, flagged=self.flagged, meta=self.meta)
        kw.update(changes)
        return Ensemble(**kw)

    def subset(self, n: int) -> "Ensemble":
        """The first ``n`` paths."""
        return self.replace(paths=self.paths[:n], flagged=self.flagged[:n])


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """Independent generator for one path, keyed by ``(seed, path_index)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path_index),))
    return np.random.Generator(np.random.SFC64(ss))


_KERNEL_SRC = """
def kernel(x, z, dt, sdt, lo, hi, eps, rec_every, step0, out, pos):
    flagged = False
    countdown = rec_every - step0 % rec_every
    for k in range(z.shape[0]):
        drift_val = {drift}
        diff_val = {diffusion}
        x = x + drift_val * dt + diff_val * sdt * z[k]
        if x <= lo or x >= hi:
            if x != x or abs(x) == np.inf:
                return x, flagged, step0 + k + 1, pos
            x = lo + eps if x <= lo else hi - eps
            flagged = True
        elif x != x:
            return x, flagged, step0 + k + 1, pos
        countdown -= 1
        if countdown == 0:
            out[pos] = x
            pos += 1
            countdown = rec_every
    return x, flagged, -1, pos
"""
_KERNELS: dict[tuple[str, str], Any] = {}


def _kernel(dyn: ItoDynamics):
    key = (dyn.drift.source, dyn.diffusion.source)
    fn = _KERNELS.get(key)
    if fn is None:
        import numba

        ns: dict[str, Any] = {"np": np}
        exec(_KERNEL_SRC.format(drift=key[0], diffusion=key[1]), ns)  # noqa: S102 - sources are whitelisted
        fn = numba.njit(nogil=True)(ns["kernel"])
        _KERNELS[key] = fn
    return fn


def _n_steps(dt: float, t_max: float) -> int:
    if not dt > 0 or not t_max >= dt:
        raise ValueError(f"need dt > 0 and t_max >= dt, got dt={dt}, t_max={t_max}")
    n = int(round(t_max / dt))
    if not math.isclose(n * dt, t_max, rel_tol=1e-9):
        raise ValueError(f"t_max={t_max} is not a whole number of steps dt={dt}")
    return n


def _record_every(n_steps: int, max_records: int) -> int:
    need = max(1, math.ceil(n_steps / max_records))
    for r in range(need, 4 * need + 1):
        if n_steps % r == 0:
            return r
    return 1


def _run_path(kern, dyn, x0, dt, n_steps, rec_every, rng, out, path_index) -> bool:
    lo, hi = dyn.domain
    sdt = math.sqrt(dt)
    out[0] = x0
    x, pos, step, flagged = float(x0), 1, 0, False
    buf = np.empty(min(_BLOCK, n_steps))
    while step < n_steps:
        z = buf[: min(_BLOCK, n_steps - step)]
        rng.standard_normal(out=z)
        x, fl, bad_step, pos = kern(x, z, dt, sdt, lo, hi, CLIP_EPS, rec_every, step, out, pos)
        if bad_step >= 0:
            raise SimulationError(f"non-finite wealth on path {path_index} at step {bad_step} "
                                  f"(t={bad_step * dt:g})")
        flagged |= fl
        step += z.size
    return flagged


def simulate_ito(dyn: ItoDynamics, x0: float, dt: float = 1e-3, t_max: float = 1.0,
                 n_paths: int = 1000, seed: int = 0, record_every: int | None = None,
                 max_records: int = 1000) -> Ensemble:
    """Euler-Maruyama ensemble ``x_{k+1} = x_k + a(x_k) dt + b(x_k) sqrt(dt) Z``.

    Wealth is stored every ``record_every`` steps (by default the smallest
    divisor of the step count keeping at most about ``max_records`` times).
    Paths leaving the domain are clipped to ``boundary +/- 1e-9`` and flagged.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if not dyn.contains(x0):
        raise DomainError(f"x0={x0} is outside the domain {dyn.domain}")
    n_steps = _n_steps(dt, t_max)
    rec = record_every or _record_every(n_steps, max_records)
    if n_steps % rec:
        raise ValueError(f"record_every={rec} must divide the step count {n_steps}")
    kern = _kernel(dyn)
    paths = np.empty((n_paths, n_steps // rec + 1))
    flagged = np.zeros(n_paths, dtype=bool)
    for i in range(n_paths):
        flagged[i] = _run_path(kern, dyn, x0, dt, n_steps, rec, path_rng(seed, i), paths[i], i)
    grid = np.arange(paths.shape[1]) * (rec * dt)
    meta = {"dt": dt, "t_max": t_max, "n_steps": n_steps, "record_every": rec,
            "n_flagged": int(flagged.sum()), "family": str(dyn.family)}
    return Ensemble(grid, paths, x0, seed, dyn.fingerprint, flagged, meta)


def simulate_ito_path(dyn: ItoDynamics, x0: float, dt: float, t_max: float, seed: int,
                      path_index: int, record_every: int | None = None,
                      max_records: int = 1000) -> tuple[np.ndarray, bool]:
    """Simulate path ``path_index`` alone; identical to the same row of a batch."""
    n_steps = _n_steps(dt, t_max)
    rec = record_every or _record_every(n_steps, max_records)
    out = np.empty(n_steps // rec + 1)
    flagged = _run_path(_kernel(dyn), dyn, x0, dt, n_steps, rec, path_rng(seed, path_index), out, path_index)
    return out, flagged


def euler_maruyama(dyn: ItoDynamics, x0: float, dt: float, normals: np.ndarray) -> np.ndarray:
    """One Euler-Maruyama path driven by caller-supplied standard normals."""
    z = np.ascontiguousarray(normals, dtype=float)
    out = np.empty(z.size + 1)
    out[0] = x0
    lo, hi = dyn.domain
    _, _, bad, _ = _kernel(dyn)(float(x0), z, dt, math.sqrt(dt), lo, hi, CLIP_EPS, 1, 0, out, 1)
    if bad >= 0:
        raise SimulationError(f"non-finite wealth at step {bad}")
    return out


def simulate_discrete(dyn: DiscreteDynamics, x0: float, n_steps: int, n_paths: int = 1000,
                      seed: int = 0) -> Ensemble:
    """Apply i.i.d. outcomes sequentially; the time grid is the step count."""
    if n_steps < 1 or n_paths < 1:
        raise ValueError("n_steps and n_paths must be >= 1")
    if dyn.mode == "multiplicative" and not x0 > 0:
        raise DomainError("multiplicative dynamics need x0 > 0")
    outcomes = np.asarray(dyn.outcomes)
    p = np.asarray(dyn.probabilities)
    paths = np.empty((n_paths, n_steps + 1))
    paths[:, 0] = x0
    for i in range(n_paths):
        draws = outcomes[path_rng(seed, i).choice(outcomes.size, size=n_steps, p=p)]
        if dyn.mode == "additive":
            paths[i, 1:] = x0 + np.cumsum(draws)
        else:
            paths[i, 1:] = x0 * np.cumprod(draws)
    meta = {"mode": dyn.mode, "n_steps": n_steps, "n_flagged": 0}
    return Ensemble(np.arange(n_steps + 1, dtype=float), paths, x0, seed, dyn.fingerprint, None, meta)


def deterministic_ensemble(rate: float, time_grid: Sequence[float], x0: float = 1.0,
                           n_paths: int = 1) -> Ensemble:
    """Noise-free linear growth ``x_t = x0 + rate * t`` replicated over ``n_paths``."""
    grid = np.asarray(time_grid, dtype=float)
    path = x0 + rate * grid
    path[0] = x0
    return Ensemble(grid, np.tile(path, (n_paths, 1)), x0, None, f"deterministic:{rate!r}")


def write_csv(ens: Ensemble, path: str | Path) -> Path:
    """Long-format CSV with columns ``path_id, t, x`` (17 significant digits)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "t", "x"])
        ts = [f"{t:.17g}" for t in ens.time_grid]
        for i, row in enumerate(ens.paths):
            w.writerows((i, t, f"{x:.17g}") for t, x in zip(ts, row))
    return path


def cache_key(ens: Ensemble) -> str:
    meta = {k: ens.meta.get(k) for k in ("dt", "t_max", "n_steps", "record_every")}
    payload = json.dumps([ens.dynamics_fingerprint, ens.seed, ens.n_paths, repr(ens.x0), meta],
                         sort_keys=True, default=repr)
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


def save_cache(ens: Ensemble, directory: str | Path) -> Path:
    """Store ``ens`` as ``<cache_key>.npz`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / f"{cache_key(ens)}.npz"
    np.savez_compressed(target, time_grid=ens.time_grid, paths=ens.paths, flagged=ens.flagged,
                        header=np.array(json.dumps({"x0": ens.x0, "seed": ens.seed,
                                                    "fingerprint": ens.dynamics_fingerprint,
                                                    "meta": ens.meta}, default=repr)))
    return target


def load_cache(path: str | Path) -> Ensemble:
    with np.load(Path(path)) as data:
        header = json.loads(str(data["header"]))
        return Ensemble(data["time_grid"], data["paths"], header["x0"], header["seed"],
                        header["fingerprint"], data["flagged"], header["meta"])
