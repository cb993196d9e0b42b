"""Ergodic transformations of Ito dynamics.

A dynamic ``dx = a dt + b dW`` admits a transformation ``f`` with
``df = alpha dt + beta dW`` (constant coefficients) exactly when
``(a - b b'/2) / b`` is constant.  With ``beta = 1`` the transformation solves
``f' = 1/b``; it is obtained by quadrature and replaced by a closed form when
the diffusion matches a template (affine, logarithmic or CRRA power).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .swp_core import DomainError, Ensemble, ItoDynamics

__all__ = [
    "NotErgodizableError",
    "QuadratureError",
    "TransformSpec",
    "IDENTITY",
    "identity",
    "affine",
    "log_transform",
    "crra",
    "ErgodizabilityCheck",
    "LevyReport",
    "check_grid",
    "check_ergodizable",
    "derive_transform",
    "transform_alpha",
    "apply_transform",
    "transform_values",
    "verify_levy",
]

RESIDUAL_TOL = 1e-6
N_NODES = 513


class NotErgodizableError(ValueError):
    """The dynamic fails the constant-coefficient condition."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not converge."""


@dataclass(frozen=True)
class TransformSpec:
    """A strictly increasing wealth transformation ``f``.

    ``f(x) = offset + scale * (base(x) - base(x_ref))`` where ``base`` is
    ``x`` (identity/affine), ``ln x`` (log), ``x**(1-gamma)/(1-gamma)`` (crra)
    or a cubic interpolant of ``(table_x, table_f)`` (numeric): Hermite on the
    exact slopes ``table_df`` when given, monotone PCHIP otherwise.
    ``alpha``/``beta`` are the drift and diffusion of ``f(x_t)`` when ``f`` was
    derived from a dynamic.  ``role`` separates ergodic transforms from risk
    utilities built on top of them.
    """

    form: str = "identity"
    gamma: float | None = None
    scale: float = 1.0
    offset: float = 0.0
    x_ref: float | None = None
    alpha: float | None = None
    beta: float | None = None
    table_x: tuple[float, ...] | None = field(default=None, repr=False)
    table_f: tuple[float, ...] | None = field(default=None, repr=False)
    table_df: tuple[float, ...] | None = field(default=None, repr=False)
    domain: tuple[float, float] = (-math.inf, math.inf)
    role: str = "ergodic"

    def __post_init__(self):
        if self.form not in ("identity", "affine", "log", "crra", "numeric"):
            raise ValueError(f"unknown transform form {self.form!r}")
        if not self.scale > 0:
            raise ValueError("scale must be positive (transforms are strictly increasing)")
        if self.form == "crra" and (self.gamma is None or self.gamma == 1.0):
            raise ValueError("crra needs gamma != 1; use the log form for gamma = 1")
        if self.beta is not None and not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.table_x is not None:
            tx, tf = np.asarray(self.table_x), np.asarray(self.table_f)
            if tx.shape != tf.shape or np.any(np.diff(tx) <= 0) or np.any(np.diff(tf) <= 0):
                raise ValueError("numeric table must be strictly increasing in both coordinates")
        elif self.form == "numeric":
            raise ValueError("numeric form needs a table")

    # -- evaluation -------------------------------------------------------

    @property
    def infimum(self) -> tuple[float, bool]:
        """Lower end of the domain of ``f`` and whether it is attained."""
        if self.form == "log" or (self.form == "crra" and self.gamma > 1):
            return 0.0, False
        if self.form == "crra":
            return 0.0, True
        if self.form == "numeric":
            return self.domain[0], False
        return -math.inf, False

    def _interp(self):
        cached = self.__dict__.get("_spline")
        if cached is None:
            tx, tf = np.asarray(self.table_x), np.asarray(self.table_f)
            if self.table_df is not None:
                cached = CubicHermiteSpline(tx, tf, np.asarray(self.table_df), extrapolate=False)
            else:
                cached = PchipInterpolator(tx, tf, extrapolate=False)
            object.__setattr__(self, "_spline", cached)
        return cached

    def _base(self, x: np.ndarray) -> np.ndarray:
        if self.form in ("identity", "affine"):
            return x
        if self.form == "log":
            return np.log(x)
        if self.form == "crra":
            return x ** (1.0 - self.gamma) / (1.0 - self.gamma)
        tx = self.table_x
        out = self._interp()(x)
        lo, hi = x < tx[0], x > tx[-1]
        if lo.any() or hi.any():
            warnings.warn("values outside the numeric table; using linear extension", stacklevel=3)
            d = self._interp().derivative()
            out = np.where(lo, self.table_f[0] + d(tx[0]) * (x - tx[0]), out)
            out = np.where(hi, self.table_f[-1] + d(tx[-1]) * (x - tx[-1]), out)
        return out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            ref = 0.0 if self.x_ref is None else self._base(np.asarray(float(self.x_ref)))
            out = self.offset + self.scale * (self._base(x) - ref)
        return float(out) if out.ndim == 0 else out

    def derivatives(self, x) -> tuple[np.ndarray, np.ndarray]:
        """First and second derivatives of ``f`` at ``x``."""
        x = np.asarray(x, dtype=float)
        if self.form in ("identity", "affine"):
            d1, d2 = np.ones_like(x), np.zeros_like(x)
        elif self.form == "log":
            d1, d2 = 1.0 / x, -1.0 / x**2
        elif self.form == "crra":
            d1 = x ** (-self.gamma)
            d2 = -self.gamma * x ** (-self.gamma - 1.0)
        else:
            p = self._interp()
            d1, d2 = p.derivative(1)(x), p.derivative(2)(x)
        return self.scale * d1, self.scale * d2

    def inverse(self, y):
        """``f^{-1}(y)``."""
        y = np.asarray(y, dtype=float)
        ref = 0.0 if self.x_ref is None else float(self._base(np.asarray(float(self.x_ref))))
        base = (y - self.offset) / self.scale + ref
        if self.form in ("identity", "affine"):
            out = base
        elif self.form == "log":
            out = np.exp(base)
        elif self.form == "crra":
            with np.errstate(invalid="ignore"):
                out = ((1.0 - self.gamma) * base) ** (1.0 / (1.0 - self.gamma))
        else:
            out = self._invert_table(base)
        return float(out) if out.ndim == 0 else out

    def _invert_table(self, target: np.ndarray) -> np.ndarray:
        tx, tf = np.asarray(self.table_x), np.asarray(self.table_f)
        x = np.interp(target, tf, tx)
        inside = (target >= tf[0]) & (target <= tf[-1])
        p = self._interp()
        d = p.derivative()
        for _ in range(4):  # Newton polish on the spline
            step = np.where(inside, (p(x) - target) / d(x), 0.0)
            x = np.clip(x - np.nan_to_num(step), tx[0], tx[-1])
        return x

    # -- algebra and presentation ----------------------------------------

    def affine_map(self, c: float, d: float = 0.0) -> "TransformSpec":
        """Return ``c * f + d`` (``c > 0``)."""
        if not c > 0:
            raise ValueError("c must be positive")
        form = "affine" if self.form == "identity" else self.form
        return replace(self, form=form, scale=self.scale * c, offset=self.offset * c + d,
                       alpha=None if self.alpha is None else self.alpha * c,
                       beta=None if self.beta is None else self.beta * c)

    @property
    def label(self) -> str:
        if self.form == "crra":
            return f"crra({self.gamma:g})"
        return self.form

    def describe(self) -> str:
        """Human-readable notation, e.g. ``f(x) = 5*ln(x / 1)``."""
        ref = self.x_ref
        if self.form == "identity":
            core = "x"
        elif self.form == "affine":
            core = "x" if ref is None else f"(x - {ref:g})"
        elif self.form == "log":
            core = "ln(x)" if ref is None else f"ln(x / {ref:g})"
        elif self.form == "crra":
            p = 1.0 - self.gamma
            core = f"x^{p:g}/{p:g}" if ref is None else f"(x^{p:g} - {ref:g}^{p:g})/{p:g}"
        else:
            core = f"integral_{ref:g}^x du/b(u) [{len(self.table_x)} nodes]"
        text = core if self.scale == 1.0 else f"{self.scale:.6g}*{core}"
        if self.offset:
            text += f" + {self.offset:g}"
        return f"f(x) = {text}"

    def to_dict(self) -> dict[str, Any]:
        out = {k: getattr(self, k) for k in ("form", "gamma", "scale", "offset", "x_ref",
                                             "alpha", "beta", "role")}
        out["domain"] = [repr(v) if not math.isfinite(v) else v for v in self.domain]
        out["notation"] = self.describe()
        if self.table_x is not None:
            out["numeric_table"] = {"x": list(self.table_x), "f": list(self.table_f),
                                    "interpolation": "pchip" if self.table_df is None else "hermite"}
            if self.table_df is not None:
                out["numeric_table"]["df"] = list(self.table_df)
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TransformSpec":
        table = d.get("numeric_table") or {}
        dom = tuple(float(v) for v in d.get("domain", ("-inf", "inf")))
        return cls(form=d["form"], gamma=d.get("gamma"), scale=d.get("scale", 1.0),
                   offset=d.get("offset", 0.0), x_ref=d.get("x_ref"), alpha=d.get("alpha"),
                   beta=d.get("beta"), table_x=tuple(table["x"]) if table else None,
                   table_f=tuple(table["f"]) if table else None,
                   table_df=tuple(table["df"]) if table.get("df") else None, domain=dom,
                   role=d.get("role", "ergodic"))


IDENTITY = TransformSpec()


def identity() -> TransformSpec:
    return IDENTITY


def affine(c: float = 1.0, d: float = 0.0) -> TransformSpec:
    return TransformSpec("affine", scale=c, offset=d)


def log_transform(scale: float = 1.0, x_ref: float | None = None) -> TransformSpec:
    return TransformSpec("log", scale=scale, x_ref=x_ref, domain=(0.0, math.inf))


def crra(gamma: float, scale: float = 1.0, x_ref: float | None = None) -> TransformSpec:
    if gamma == 1.0:
        return log_transform(scale, x_ref)
    return TransformSpec("crra", gamma=float(gamma), scale=scale, x_ref=x_ref, domain=(0.0, math.inf))


# -- the admissibility condition ---------------------------------------------

@dataclass(frozen=True)
class ErgodizabilityCheck:
    admits: bool
    alpha_over_beta: float
    residual: float
    grid: np.ndarray = field(repr=False)


def check_grid(domain: tuple[float, float], n: int = 101) -> np.ndarray:
    """Default sample points for :func:`check_ergodizable`.

    Kept away from 0 on the half line so that the fixed finite-difference step
    ``1e-6 * max(|x|, 1)`` stays small relative to ``x``.
    """
    lo, hi = domain
    if lo == 0.0 and hi == math.inf:
        return np.geomspace(1e-2, 1e2, n)
    if math.isfinite(lo) and math.isfinite(hi):
        return np.linspace(lo, hi, n + 2)[1:-1]
    if math.isfinite(lo):
        return lo + np.geomspace(1e-2, 1e2, n)
    if math.isfinite(hi):
        return hi - np.geomspace(1e-2, 1e2, n)[::-1]
    return np.linspace(-100.0, 100.0, n)


def _fd_step(x: np.ndarray) -> np.ndarray:
    return 1e-6 * np.maximum(np.abs(x), 1.0)


def _q(dyn: ItoDynamics, x: np.ndarray) -> np.ndarray:
    h = _fd_step(x)
    b = dyn.b(x)
    db = (dyn.b(x + h) - dyn.b(x - h)) / (2.0 * h)
    return (dyn.a(x) - 0.5 * b * db) / b


def check_ergodizable(dyn: ItoDynamics, grid=None) -> ErgodizabilityCheck:
    """Test whether ``(a - b b'/2) / b`` is constant on ``grid``.

    ``b'`` is a central difference with step ``1e-6 * max(|x|, 1)``.  Points
    whose stencil leaves the domain are dropped with a warning.
    """
    x = check_grid(dyn.domain) if grid is None else np.asarray(grid, dtype=float)
    if x.size < 51:
        raise ValueError("need at least 51 grid points")
    h = _fd_step(x)
    lo, hi = dyn.domain
    inside = (x - h > lo) & (x + h < hi)
    if not inside.all():
        warnings.warn(f"dropping {int((~inside).sum())} grid points whose difference stencil "
                      f"leaves the domain", stacklevel=2)
        x = x[inside]
    if np.any(dyn.b(x) <= 0):
        raise DomainError("diffusion must be strictly positive on the grid")
    q = _q(dyn, x)
    med = float(np.median(q))
    residual = float(np.max(np.abs(q - med)))
    return ErgodizabilityCheck(residual <= RESIDUAL_TOL * (1.0 + abs(med)), med, residual, x)


# -- deriving f ----------------------------------------------------------------

def _nodes(dyn: ItoDynamics, x_ref: float, n: int) -> np.ndarray:
    grid = check_grid(dyn.domain)
    lo, hi = min(grid[0], x_ref), max(grid[-1], x_ref)
    if dyn.domain[0] >= 0.0 and lo > 0:
        return np.geomspace(lo, hi, n)
    return np.linspace(lo, hi, n)


def _quad(fn, a: float, b: float) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(fn, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature on [{a:g}, {b:g}] failed: {exc}") from None
    return val


def _integrate_nodes(inv_b, nodes: np.ndarray, x_ref: float) -> np.ndarray:
    pieces = np.array([_quad(inv_b, a, b) for a, b in zip(nodes[:-1], nodes[1:])])
    cum = np.concatenate([[0.0], np.cumsum(pieces)])
    j = int(np.clip(np.searchsorted(nodes, x_ref) - 1, 0, nodes.size - 2))
    return cum - (cum[j] + _quad(inv_b, nodes[j], x_ref))


def _quadrature_table(dyn: ItoDynamics, x_ref: float, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodes, ``f`` values and slopes ``1/b``.

    Half the nodes follow the domain grid; the rest are spread evenly in
    ``f`` so that regions where ``f`` bends quickly are resolved.
    """
    def inv_b(u):
        return 1.0 / float(dyn.b(u))

    base = _nodes(dyn, x_ref, n // 2 + 1)
    coarse = _integrate_nodes(inv_b, base, x_ref)
    extra = np.interp(np.linspace(coarse[0], coarse[-1], n - base.size + 2)[1:-1], coarse, base)
    nodes = np.unique(np.concatenate([base, extra]))
    nodes = nodes[np.concatenate([[True], np.diff(nodes) > 1e-12 * np.maximum(1.0, np.abs(nodes[1:]))])]
    return nodes, _integrate_nodes(inv_b, nodes, x_ref), 1.0 / dyn.b(nodes)


def derive_transform(dyn: ItoDynamics, x_ref: float = 1.0, n_nodes: int = N_NODES) -> TransformSpec:
    """Solve ``f' = 1/b`` with ``f(x_ref) = 0`` (so ``beta = 1``).

    The quadrature table is always built.  When the diffusion matches a
    template the closed form is used for evaluation: ``b = s`` gives
    ``(x - x_ref)/s``, ``b = s x`` gives ``ln(x/x_ref)/s`` and ``b = s x^g``
    gives ``(x^(1-g) - x_ref^(1-g)) / (s (1-g))``.
    """
    if not dyn.contains(x_ref):
        raise DomainError(f"x_ref={x_ref} is outside the domain {dyn.domain}")
    check = check_ergodizable(dyn)
    if not check.admits:
        raise NotErgodizableError(
            f"no ergodic transformation: (a - b b'/2)/b varies by {check.residual:.3g} "
            f"around {check.alpha_over_beta:.6g}")
    tx, tf, tdf = _quadrature_table(dyn, x_ref, n_nodes)
    common = dict(x_ref=float(x_ref), alpha=check.alpha_over_beta, beta=1.0, table_x=tuple(tx),
                  table_f=tuple(tf), table_df=tuple(float(v) for v in tdf), domain=dyn.domain)
    fam = dyn.family
    if fam.kind == "additive":
        return TransformSpec("affine", scale=1.0 / fam.sigma, **common)
    if fam.kind == "multiplicative":
        return TransformSpec("log", scale=1.0 / fam.sigma, **common)
    if fam.kind == "power":
        return TransformSpec("crra", gamma=fam.gamma, scale=1.0 / fam.sigma, **common)
    return TransformSpec("numeric", **common)


def transform_alpha(dyn: ItoDynamics, f: TransformSpec, grid=None) -> np.ndarray:
    """Drift of ``f(x_t)`` by Ito's lemma, ``a f' + b^2 f''/2``, on ``grid``."""
    x = check_grid(dyn.domain) if grid is None else np.asarray(grid, dtype=float)
    d1, d2 = f.derivatives(x)
    return dyn.a(x) * d1 + 0.5 * dyn.b(x) ** 2 * d2


# -- applying f ------------------------------------------------------------

def transform_values(f: TransformSpec, values: np.ndarray) -> np.ndarray:
    """Evaluate ``f`` on a path matrix, refusing values below its domain."""
    values = np.asarray(values, dtype=float)
    if f.form == "identity":
        return values
    inf, attained = f.infimum
    bad = values < inf if attained else values <= inf
    if f.form == "numeric":
        bad |= values >= f.domain[1]
    if bad.any():
        idx = np.argwhere(np.atleast_2d(bad))[0]
        path, step = (int(idx[0]), int(idx[1])) if values.ndim == 2 else (0, int(idx[-1]))
        v = float(np.atleast_2d(values)[path, step])
        raise DomainError(f"{f.label} undefined at x={v:g} (path {path}, step {step})")
    return f(values)


def apply_transform(f: TransformSpec, ens: Ensemble) -> Ensemble:
    """Map every wealth value through ``f``; the identity returns an equal copy."""
    if f.form == "identity":
        return ens.replace(paths=ens.paths.copy())
    paths = transform_values(f, ens.paths)
    meta = dict(ens.meta, transform=f.describe())
    return ens.replace(paths=paths, x0=float(paths[0, 0]), meta=meta,
                       dynamics_fingerprint=f"{ens.dynamics_fingerprint}|{f.label}")


# -- Levy check ------------------------------------------------------------

@dataclass(frozen=True)
class LevyReport:
    stationary: bool
    independent: bool
    drift_hat: float
    drift_se: float
    vol_hat: float
    lag1_autocorr: float
    autocorr_bound: float
    window_means: np.ndarray = field(repr=False)
    window_vars: np.ndarray = field(repr=False)
    worst_pair_z: float = 0.0

    @property
    def is_levy(self) -> bool:
        return self.stationary and self.independent


def _pairwise_max_z(est: np.ndarray, se: np.ndarray) -> float:
    diff = np.abs(est[:, None] - est[None, :])
    pooled = np.sqrt(se[:, None] ** 2 + se[None, :] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(pooled > 0, diff / pooled, np.where(diff > 0, np.inf, 0.0))
    return float(z.max())


def verify_levy(ens: Ensemble, n_windows: int = 10, threshold: float = 4.0) -> LevyReport:
    """Check stationary and independent increments of a (transformed) ensemble.

    Increment mean and variance are estimated in ``n_windows`` equal time
    windows and must agree pairwise within ``threshold`` pooled standard
    errors; the pooled lag-1 autocorrelation must lie within
    ``threshold / sqrt(n)``.  Flagged paths are ignored.
    """
    paths = ens.paths[~ens.flagged]
    if paths.shape[0] < 100 or paths.shape[1] - 1 < 100:
        raise ValueError(f"insufficient data: need >= 100 paths and >= 100 steps, "
                         f"got {paths.shape[0]} x {paths.shape[1] - 1}")
    dt = ens.step
    inc = np.diff(paths, axis=1)
    n_steps = inc.shape[1]
    edges = np.linspace(0, n_steps, n_windows + 1).astype(int)
    means, mse, vars_, vse = [], [], [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        w = inc[:, lo:hi].ravel()
        m, v = w.mean(), w.var(ddof=1)
        m4 = np.mean((w - m) ** 4)
        means.append(m)
        mse.append(math.sqrt(v / w.size))
        vars_.append(v)
        vse.append(math.sqrt(max(m4 - v * v, 0.0) / w.size))
    means, mse, vars_, vse = map(np.asarray, (means, mse, vars_, vse))
    z = max(_pairwise_max_z(means, mse), _pairwise_max_z(vars_, vse))

    centred = inc - inc.mean()
    num = np.sum(centred[:, 1:] * centred[:, :-1])
    den = np.sum(centred**2)
    rho = float(num / den) if den > 0 else 0.0
    n_pairs = centred[:, 1:].size
    bound = threshold / math.sqrt(n_pairs)

    flat = inc.ravel()
    sd = float(flat.std(ddof=1))
    return LevyReport(
        stationary=z <= threshold,
        independent=abs(rho) <= bound,
        drift_hat=float(flat.mean() / dt),
        drift_se=sd / math.sqrt(flat.size) / dt,
        vol_hat=sd / math.sqrt(dt),
        lag1_autocorr=rho,
        autocorr_bound=bound,
        window_means=means,
        window_vars=vars_,
        worst_pair_z=z,
    )
