"""Ranking wealth processes by time-average growth of a transformation.

Processes are simulated ensembles whose paths are paired by index, so the
statewise mixture ``h(x, x'; a) = a x_t + (1 - a) x'_t`` is taken path by
path.  Ranks are statistical: two processes are indifferent when their
time-average growth differs by at most 3 pooled standard errors and one is
preferred beyond 5.  Calibration (the representation value and the unique
mixing weight) bisects on those rank verdicts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .ergodic_transform import IDENTITY, TransformSpec, crra, log_transform
from .growth_rates import AGREE_SE, DISAGREE_SE, TimeAverage, time_average_rate
from .swp_core import Ensemble

__all__ = [
    "RankVerdict",
    "Thresholds",
    "RankingResult",
    "RepresentationFrame",
    "Calibration",
    "CertaintyEquivalent",
    "DiscountFit",
    "PreconditionError",
    "mixture",
    "rank",
    "representation_value",
    "unique_alpha_star",
    "risk_adjusted_transform",
    "certainty_growth_equivalent",
    "constant_process",
    "fit_discount",
]


class PreconditionError(ValueError):
    """Inputs violate an ordering or non-degeneracy requirement."""


class RankVerdict(str, Enum):
    LEFT_PREFERRED = "LEFT_PREFERRED"
    RIGHT_PREFERRED = "RIGHT_PREFERRED"
    INDIFFERENT = "INDIFFERENT"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class Thresholds:
    agree: float = AGREE_SE
    disagree: float = DISAGREE_SE
    # relative gaps below this are rounding noise (deterministic paths); relative so
    # that verdicts do not change when f is replaced by c f + d
    rel_tol: float = 1e-12


@dataclass(frozen=True)
class RankingResult:
    verdict: RankVerdict
    left_growth: float
    right_growth: float
    pooled_se: float
    left_converged: bool = True
    right_converged: bool = True

    def to_dict(self) -> dict:
        return {"verdict": self.verdict.value, "left_growth": self.left_growth,
                "right_growth": self.right_growth, "pooled_se": self.pooled_se,
                "left_converged": self.left_converged, "right_converged": self.right_converged}


def mixture(x: Ensemble, x_prime: Ensemble, alpha: float) -> Ensemble:
    """Statewise convex combination ``alpha x + (1 - alpha) x'``, paths paired by index."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"mixing weight must lie in (0, 1), got {alpha}")
    if x.time_grid.shape != x_prime.time_grid.shape or not np.array_equal(x.time_grid, x_prime.time_grid):
        raise ValueError("mixture needs identical time grids")
    if x.n_paths != x_prime.n_paths:
        raise ValueError(f"mixture needs equal path counts ({x.n_paths} vs {x_prime.n_paths})")
    paths = alpha * x.paths + (1.0 - alpha) * x_prime.paths
    x0 = alpha * x.x0 + (1.0 - alpha) * x_prime.x0
    paths[:, 0] = x0
    return Ensemble(x.time_grid, paths, x0, x.seed,
                    f"mix({x.dynamics_fingerprint},{x_prime.dynamics_fingerprint};{alpha!r})",
                    x.flagged | x_prime.flagged, {"mixture_alpha": alpha})


def _verdict(left: TimeAverage, right: TimeAverage, thr: Thresholds) -> RankingResult:
    pooled = math.hypot(left.se, right.se)
    gap = left.estimate - right.estimate
    floor = thr.rel_tol * max(abs(left.estimate), abs(right.estimate))
    if not (left.converged and right.converged):
        v = RankVerdict.INCONCLUSIVE
    elif abs(gap) <= max(thr.agree * pooled, floor):
        v = RankVerdict.INDIFFERENT
    elif abs(gap) > max(thr.disagree * pooled, floor):
        v = RankVerdict.LEFT_PREFERRED if gap > 0 else RankVerdict.RIGHT_PREFERRED
    else:
        v = RankVerdict.INCONCLUSIVE
    return RankingResult(v, left.estimate, right.estimate, pooled, left.converged, right.converged)


def rank(x: Ensemble, x_prime: Ensemble, f: TransformSpec = IDENTITY,
         thresholds: Thresholds = Thresholds()) -> RankingResult:
    """Compare the time-average growth of ``f(x)`` and ``f(x')``."""
    return _verdict(time_average_rate(x, f), time_average_rate(x_prime, f), thresholds)


# -- calibration by bisection -------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    """Result of a bisection on rank verdicts.

    ``alpha`` is the midpoint of ``bracket``; ``value`` maps it through the
    case formula (the representation value, or ``alpha`` itself).
    ``status`` is ``ok`` or ``INCONCLUSIVE``.
    """

    alpha: float
    bracket: tuple[float, float]
    value: float
    value_bracket: tuple[float, float]
    case: str
    status: str = "ok"
    certificate: RankingResult | None = None

    def to_dict(self) -> dict:
        out = {"alpha_star": self.alpha, "bracket": list(self.bracket), "L": self.value,
               "L_bracket": list(self.value_bracket), "case": self.case, "status": self.status}
        if self.certificate is not None:
            out["certificate"] = self.certificate.to_dict()
        return out


def _bisect(better: Ensemble, worse: Ensemble, target: Ensemble, f: TransformSpec,
            thr: Thresholds, n_iter: int) -> tuple[float, float, str]:
    """Bracket the weight at which ``h(better, worse; a) ~ target``.

    The mixture improves with ``a``.  An indifferent midpoint starts two
    searches for the edges of the indifference band, each with the iterations
    left.  Returns ``(lo, hi, status)``.
    """
    lo, hi = 0.0, 1.0

    def compare(a: float) -> RankVerdict:
        return rank(mixture(better, worse, a), target, f, thr).verdict

    for k in range(n_iter):
        mid = 0.5 * (lo + hi)
        v = compare(mid)
        if v is RankVerdict.LEFT_PREFERRED:
            hi = mid
        elif v is RankVerdict.RIGHT_PREFERRED:
            lo = mid
        elif v is RankVerdict.INDIFFERENT:
            left_lo, left_hi = lo, mid
            right_lo, right_hi = mid, hi
            for _ in range(n_iter - k):
                m = 0.5 * (left_lo + left_hi)
                w = compare(m)
                if w is RankVerdict.INCONCLUSIVE:
                    return left_lo, right_hi, "INCONCLUSIVE"
                if w is RankVerdict.RIGHT_PREFERRED:
                    left_lo = m
                else:
                    left_hi = m
                m = 0.5 * (right_lo + right_hi)
                w = compare(m)
                if w is RankVerdict.INCONCLUSIVE:
                    return left_lo, right_hi, "INCONCLUSIVE"
                if w is RankVerdict.LEFT_PREFERRED:
                    right_hi = m
                else:
                    right_lo = m
            return left_lo, right_hi, "ok"
        else:
            return lo, hi, "INCONCLUSIVE"
    return lo, hi, "ok"


@dataclass(frozen=True)
class RepresentationFrame:
    """Two anchors with ``L(anchor_high) = 1`` and ``L(anchor_low) = 0``."""

    anchor_high: Ensemble
    anchor_low: Ensemble
    thresholds: Thresholds = Thresholds()
    n_iter: int = 16


_CASES: dict[str, Callable[[float], float]] = {
    # x'' > high: h(x'', low; a) ~ high, so a L(x'') = 1
    "above": lambda a: 1.0 / a if a > 0 else math.inf,
    # high > x'' > low: h(high, low; a) ~ x''
    "between": lambda a: a,
    # x'' < low: h(high, x''; a) ~ low, so a + (1 - a) L(x'') = 0
    "below": lambda a: a / (a - 1.0) if a < 1 else -math.inf,
}


def _calibration(lo: float, hi: float, status: str, case: str, cert=None) -> Calibration:
    g = _CASES[case]
    a = 0.5 * (lo + hi)
    ends = sorted((g(lo), g(hi)))
    return Calibration(a, (lo, hi), g(a), (ends[0], ends[1]), case,
                       "ok" if status == "ok" else "INCONCLUSIVE", cert)


def representation_value(x2: Ensemble, frame: RepresentationFrame,
                         f: TransformSpec = IDENTITY) -> Calibration:
    """Linear representation value of ``x2`` relative to the frame's anchors.

    Three cases, by where ``x2`` ranks against the anchors: above the high
    anchor ``L = 1/a`` with ``h(x2, low; a) ~ high``; between them ``L = a``
    with ``h(high, low; a) ~ x2``; below the low anchor ``L = a/(a-1)`` with
    ``h(high, x2; a) ~ low``.
    """
    thr, n = frame.thresholds, frame.n_iter
    high, low = frame.anchor_high, frame.anchor_low
    if rank(high, low, f, thr).verdict is not RankVerdict.LEFT_PREFERRED:
        raise PreconditionError("degenerate frame: the high anchor must be strictly preferred")
    vs_high = rank(x2, high, f, thr).verdict
    vs_low = rank(x2, low, f, thr).verdict
    if vs_high is RankVerdict.INDIFFERENT:
        return Calibration(1.0, (1.0, 1.0), 1.0, (1.0, 1.0), "between")
    if vs_low is RankVerdict.INDIFFERENT:
        return Calibration(0.0, (0.0, 0.0), 0.0, (0.0, 0.0), "between")
    if vs_high is RankVerdict.LEFT_PREFERRED:
        return _calibration(*_bisect(x2, low, high, f, thr, n), "above")
    if vs_low is RankVerdict.RIGHT_PREFERRED:
        return _calibration(*_bisect(high, x2, low, f, thr, n), "below")
    if vs_high is RankVerdict.RIGHT_PREFERRED and vs_low is RankVerdict.LEFT_PREFERRED:
        return _calibration(*_bisect(high, low, x2, f, thr, n), "between")
    return Calibration(math.nan, (0.0, 1.0), math.nan, (-math.inf, math.inf), "unknown", "INCONCLUSIVE")


def unique_alpha_star(x: Ensemble, x1: Ensemble, x2: Ensemble, f: TransformSpec = IDENTITY,
                      thresholds: Thresholds = Thresholds(), n_iter: int = 16) -> Calibration:
    """Weight ``a*`` with ``x1 ~ h(x, x2; a*)`` for ``x >= x1 >= x2`` and ``x > x2``.

    The returned certificate is the rank of ``h(x, x2; a*)`` against ``x1``.
    """
    thr = thresholds
    if rank(x, x2, f, thr).verdict is not RankVerdict.LEFT_PREFERRED:
        raise PreconditionError("need x strictly preferred to x''")
    top, bottom = rank(x, x1, f, thr).verdict, rank(x1, x2, f, thr).verdict
    if RankVerdict.RIGHT_PREFERRED in (top, bottom) or RankVerdict.INCONCLUSIVE in (top, bottom):
        raise PreconditionError(f"need x >= x' >= x'' (got {top.value}, {bottom.value})")
    if top is RankVerdict.INDIFFERENT:
        return Calibration(1.0, (1.0, 1.0), 1.0, (1.0, 1.0), "between")
    if bottom is RankVerdict.INDIFFERENT:
        return Calibration(0.0, (0.0, 0.0), 0.0, (0.0, 0.0), "between")
    lo, hi, status = _bisect(x, x2, x1, f, thr, n_iter)
    a = 0.5 * (lo + hi)
    cert = rank(mixture(x, x2, a), x1, f, thr)
    return Calibration(a, (lo, hi), a, (lo, hi), "between", "ok" if status == "ok" else "INCONCLUSIVE", cert)


# -- risk attitude on top of an ergodic transform ------------------------------

def risk_adjusted_transform(f: TransformSpec, lam: float) -> TransformSpec:
    """Utility ``x^(1 - lam g)/(1 - lam g)`` for an ergodic CRRA(g) (or log) transform.

    ``lam`` scales the curvature; ``lam * g == 1`` yields the log utility.
    """
    if not lam > 0:
        raise ValueError("risk multiplier must be positive")
    if f.form == "crra":
        gamma = f.gamma
    elif f.form == "log":
        gamma = 1.0
    else:
        raise PreconditionError(f"risk adjustment is defined for crra/log transforms, not {f.form!r}")
    g = lam * gamma
    out = log_transform(x_ref=f.x_ref) if abs(g - 1.0) <= 1e-12 else crra(g, x_ref=f.x_ref)
    return replace(out, role="utility")


@dataclass(frozen=True)
class CertaintyEquivalent:
    rate: float
    se: float
    status: str


def certainty_growth_equivalent(x: Ensemble, f: TransformSpec = IDENTITY) -> CertaintyEquivalent:
    """Constant ``f``-growth rate ``c`` making the deterministic process indifferent to ``x``."""
    ta = time_average_rate(x, f)
    return CertaintyEquivalent(ta.estimate, ta.se, "ok" if ta.converged else "INCONCLUSIVE")


def constant_process(c: float, f: TransformSpec, time_grid: Sequence[float], x0: float = 1.0,
                     n_paths: int = 1) -> Ensemble:
    """Deterministic process whose ``f``-value grows by ``c`` per unit time."""
    grid = np.asarray(time_grid, dtype=float)
    path = np.asarray(f.inverse(f(x0) + c * grid), dtype=float)
    path[0] = x0
    return Ensemble(grid, np.tile(path, (n_paths, 1)), x0, None, f"constant:{c!r}:{f.label}")


# -- discounting ------------------------------------------------------------------

@dataclass(frozen=True)
class DiscountFit:
    """``V = beta exp(-alpha dt)`` fitted by least squares on ``ln V``."""

    alpha: float
    beta: float
    alpha_se: float
    rms: float
    n: int

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "alpha_se": self.alpha_se,
                "residual_rms": self.rms, "n": self.n}


def fit_discount(values: Sequence[tuple[float, float]]) -> DiscountFit:
    pts = np.asarray(values, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("expected (dt, V) pairs")
    dt, v = pts[:, 0], pts[:, 1]
    if np.any(v <= 0):
        raise ValueError("values must be positive (log undefined)")
    if np.unique(dt).size < 2:
        raise ValueError("need at least two distinct dt values")
    y = np.log(v)
    dt_c = dt - dt.mean()
    sxx = float(np.sum(dt_c**2))
    slope = float(np.sum(dt_c * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * dt.mean())
    resid = y - (intercept + slope * dt)
    n = dt.size
    se = math.sqrt(float(np.sum(resid**2)) / (n - 2) / sxx) if n > 2 else math.nan
    return DiscountFit(0.0 - slope, math.exp(intercept), se, float(np.sqrt(np.mean(resid**2))), n)
