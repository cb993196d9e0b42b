"""Finite-t, sample-average, time-average and ensemble growth rates, and the
ergodicity verdict obtained by comparing the last two.

Both limits are replaced by finite-budget estimates: the time average is the
cross-path median of ``(f(x_t) - f(x_0)) / t`` at the horizon, checked for a
Cauchy-type settling over geometrically spaced checkpoints; the ensemble rate
is the cross-path mean, checked for agreement between the first ``N/4``,
``N/2`` and all ``N`` paths.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .ergodic_transform import IDENTITY, TransformSpec, transform_values
from .swp_core import DiscreteDynamics, Ensemble, ItoDynamics, simulate_discrete, simulate_ito

__all__ = [
    "UndefinedRateError",
    "InsufficientDataError",
    "Verdict",
    "Budget",
    "RateEstimate",
    "TimeAverage",
    "EnsembleRate",
    "GrowthReport",
    "Diagnosis",
    "rate_of_change",
    "finite_t_rates",
    "sample_average_rate",
    "time_average_rate",
    "ensemble_rate",
    "growth_report",
    "diagnose_ensemble",
    "ergodicity_diagnostic",
    "simulate_budget",
    "single_shock_expected_rate",
    "median_se",
    "AGREE_SE",
    "DISAGREE_SE",
]

AGREE_SE = 3.0
DISAGREE_SE = 5.0
MIN_CHECKPOINTS = 10
_ABS_FLOOR = 1e-12


class UndefinedRateError(ValueError):
    """Rate requested at t = 0."""


class InsufficientDataError(ValueError):
    """Too few paths or grid checkpoints for an estimate."""


class Verdict(str, Enum):
    ERGODIC = "ERGODIC"
    NON_ERGODIC = "NON_ERGODIC"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class Budget:
    """Simulation budget for a diagnostic run (``dt`` is ignored for gambles)."""

    n_paths: int = 1000
    dt: float = 1e-2
    t_max: float = 100.0
    seed: int = 0
    x0: float = 1.0


def rate_of_change(path, times, t: float, f: TransformSpec = IDENTITY) -> float:
    """``(f(x_t) - f(x_0)) / t`` for one trajectory sampled at ``times``."""
    if t == 0:
        raise UndefinedRateError("the rate of change is undefined at t = 0")
    times = np.asarray(times, dtype=float)
    i = int(np.argmin(np.abs(times - t)))
    if not math.isclose(times[i], t, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"t={t} is not on the time grid")
    fx = transform_values(f, np.asarray([path[0], path[i]], dtype=float))
    return float((fx[1] - fx[0]) / t)


def _usable(ens: Ensemble) -> np.ndarray:
    keep = ~ens.flagged
    if not keep.any():
        raise InsufficientDataError("every path was flagged for leaving the domain")
    return keep


def finite_t_rates(ens: Ensemble, t: float, f: TransformSpec = IDENTITY) -> np.ndarray:
    """Per-path rates of change at grid time ``t`` (flagged paths excluded)."""
    if t == 0:
        raise UndefinedRateError("the rate of change is undefined at t = 0")
    i = ens.index_of(t)
    cols = transform_values(f, ens.paths[_usable(ens)][:, [0, i]])
    return (cols[:, 1] - cols[:, 0]) / ens.time_grid[i]


@dataclass(frozen=True)
class RateEstimate:
    value: float
    se: float
    n: int


def _mean_se(r: np.ndarray) -> RateEstimate:
    se = float(r.std(ddof=1) / math.sqrt(r.size)) if r.size >= 2 else math.nan
    return RateEstimate(float(r.mean()), se, int(r.size))


def sample_average_rate(ens: Ensemble, t: float, f: TransformSpec = IDENTITY) -> RateEstimate:
    """Mean of the per-path rates at ``t`` with standard error ``std/sqrt(N)``."""
    return _mean_se(finite_t_rates(ens, t, f))


def median_se(r: np.ndarray, z: float = 1.96) -> float:
    """Distribution-free standard error of the sample median.

    Half the spread between the ``1/2 +/- z/(2 sqrt N)`` sample quantiles,
    divided by ``z``; for smooth densities this tends to ``1/(2 f(m) sqrt N)``.
    """
    n = r.size
    if n < 2:
        return 0.0
    d = min(0.5, z / (2.0 * math.sqrt(n)))
    lo, hi = np.quantile(r, [0.5 - d, 0.5 + d])
    return float((hi - lo) / (2.0 * z))


@dataclass(frozen=True)
class TimeAverage:
    """Median rate at the horizon plus the checkpoint trace behind it."""

    estimate: float
    se: float
    converged: bool
    slope_inv_t: float
    checkpoints: np.ndarray = field(repr=False)
    medians: np.ndarray = field(repr=False)
    ses: np.ndarray = field(repr=False)
    n_used: int = 0

    @property
    def flag(self) -> str:
        return "CONVERGED" if self.converged else "NON_CONVERGENT"

    def trace_rows(self):
        return [(float(t), float(m), float(s)) for t, m, s in zip(self.checkpoints, self.medians, self.ses)]


def _checkpoint_indices(ens: Ensemble, n: int) -> np.ndarray:
    grid = ens.time_grid
    idx = set()
    for j in range(n):
        t = ens.t_max / 2.0**j
        i = int(np.argmin(np.abs(grid - t)))
        if i >= 1:
            idx.add(i)
    return np.array(sorted(idx))


def _cauchy_settled(medians: np.ndarray, ses: np.ndarray) -> bool:
    d = np.abs(np.diff(medians))
    noise = AGREE_SE * np.sqrt(ses[1:] ** 2 + ses[:-1] ** 2)
    noise = np.maximum(noise, _ABS_FLOOR * (1.0 + np.abs(medians[1:])))
    excess = np.maximum(d - noise, 0.0)
    tail = excess[len(excess) // 2:]
    return all(b == 0.0 or b < a for a, b in zip(tail[:-1], tail[1:])) and not (
        tail.size == 1 and tail[0] > 0)


def time_average_rate(ens: Ensemble, f: TransformSpec = IDENTITY, n_checkpoints: int = 12) -> TimeAverage:
    """Time-average growth of ``f(x)`` with a convergence diagnostic.

    Rates are evaluated at checkpoints ``t_max / 2^j`` (snapped to the grid).
    The sequence of cross-path medians counts as settled when, over the later
    half of the checkpoints, the successive changes that exceed three pooled
    standard errors keep shrinking.  Non-convergence is reported, not raised.
    """
    keep = _usable(ens)
    idx = _checkpoint_indices(ens, n_checkpoints)
    if idx.size < MIN_CHECKPOINTS:
        raise InsufficientDataError(f"only {idx.size} distinct grid checkpoints; need {MIN_CHECKPOINTS}")
    vals = transform_values(f, ens.paths[keep][:, np.concatenate([[0], idx])])
    ts = ens.time_grid[idx]
    rates = (vals[:, 1:] - vals[:, :1]) / ts
    medians = np.median(rates, axis=0)
    ses = np.array([median_se(rates[:, k]) for k in range(idx.size)])
    slope = float(np.polyfit(1.0 / ts, medians, 1)[0])
    return TimeAverage(float(medians[-1]), float(ses[-1]), _cauchy_settled(medians, ses),
                       slope, ts, medians, ses, int(keep.sum()))


@dataclass(frozen=True)
class EnsembleRate:
    """Sample-average rate at large N with the N/4, N/2, N agreement check."""

    estimate: float
    se: float
    n_converged: bool
    partial: tuple[RateEstimate, ...]
    n_used: int = 0


def ensemble_rate(ens: Ensemble, t: float, f: TransformSpec = IDENTITY) -> EnsembleRate:
    r = finite_t_rates(ens, t, f)
    n = r.size
    parts = tuple(_mean_se(r[: max(2, m)]) for m in (n // 4, n // 2, n)) if n >= 8 else (_mean_se(r),)
    ok = True
    for i in range(len(parts)):
        for j in range(i + 1, len(parts)):
            a, b = parts[i], parts[j]
            pooled = math.sqrt(a.se**2 + b.se**2) if n >= 2 else 0.0
            if abs(a.value - b.value) > max(AGREE_SE * pooled, _ABS_FLOOR * (1 + abs(b.value))):
                ok = False
    full = parts[-1]
    return EnsembleRate(full.value, full.se, ok, parts, n)


@dataclass(frozen=True)
class GrowthReport:
    """All four growth notions for one ensemble and transformation."""

    finite_t_rate: np.ndarray = field(repr=False)
    sample_avg_rate: float
    sample_avg_se: float
    time_avg_rate_estimate: float
    time_avg_se: float
    time_avg_slope: float
    time_avg_flag: str
    ensemble_rate_estimate: float
    ensemble_rate_se: float
    ensemble_n_converged: bool
    transform_id: str
    t_used: float
    N_used: int

    _SCALARS = ("sample_avg_rate", "sample_avg_se", "time_avg_rate_estimate", "time_avg_se",
                "time_avg_slope", "time_avg_flag", "ensemble_rate_estimate", "ensemble_rate_se",
                "ensemble_n_converged", "transform_id", "t_used", "N_used")

    def to_dict(self, per_path: bool = True) -> dict:
        d = {k: getattr(self, k) for k in self._SCALARS}
        if per_path:
            d["finite_t_rate"] = self.finite_t_rate.tolist()
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def csv_header(self) -> str:
        return ",".join(self._SCALARS)

    def to_csv_row(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow([getattr(self, k) for k in self._SCALARS])
        return buf.getvalue()


def growth_report(ens: Ensemble, f: TransformSpec = IDENTITY, t: float | None = None) -> GrowthReport:
    t = ens.t_max if t is None else t
    per_path = finite_t_rates(ens, t, f)
    sample = _mean_se(per_path)
    ta = time_average_rate(ens, f)
    er = ensemble_rate(ens, t, f)
    return GrowthReport(per_path, sample.value, sample.se, ta.estimate, ta.se, ta.slope_inv_t,
                        ta.flag, er.estimate, er.se, er.n_converged, f.label, float(t), sample.n)


@dataclass(frozen=True)
class Diagnosis:
    verdict: Verdict
    reason: str
    time_average: TimeAverage | None = None
    ensemble: EnsembleRate | None = None
    report: GrowthReport | None = None

    @property
    def pooled_se(self) -> float:
        if self.time_average is None or self.ensemble is None:
            return math.nan
        return math.hypot(self.time_average.se, self.ensemble.se)

    def to_dict(self) -> dict:
        out = {"verdict": self.verdict.value, "reason": self.reason, "pooled_se": self.pooled_se}
        if self.report is not None:
            out["report"] = self.report.to_dict(per_path=False)
        return out


def diagnose_ensemble(ens: Ensemble, f: TransformSpec = IDENTITY) -> Diagnosis:
    """ERGODIC / NON_ERGODIC / INCONCLUSIVE verdict for ``f`` on a simulated ensemble.

    ERGODIC needs a settled time average agreeing with the ensemble rate at the
    horizon within 3 pooled standard errors; NON_ERGODIC follows from either
    estimate failing to settle, or a settled disagreement beyond 5.
    """
    try:
        if int((~ens.flagged).sum()) < 2:
            raise InsufficientDataError("fewer than two usable paths")
        ta = time_average_rate(ens, f)
    except InsufficientDataError as exc:
        return Diagnosis(Verdict.INCONCLUSIVE, f"insufficient data: {exc}")
    er = ensemble_rate(ens, ens.t_max, f)
    report = growth_report(ens, f)
    pooled = math.hypot(ta.se, er.se)
    gap = abs(ta.estimate - er.estimate)
    floor = _ABS_FLOOR * (1.0 + abs(er.estimate))
    if not ta.converged:
        return Diagnosis(Verdict.NON_ERGODIC, "time average does not settle", ta, er, report)
    if not er.n_converged:
        return Diagnosis(Verdict.NON_ERGODIC, "ensemble rate does not settle in N", ta, er, report)
    if gap <= max(AGREE_SE * pooled, floor):
        return Diagnosis(Verdict.ERGODIC, f"gap {gap:.3g} within {AGREE_SE:g} pooled s.e.", ta, er, report)
    if gap > max(DISAGREE_SE * pooled, floor):
        return Diagnosis(Verdict.NON_ERGODIC, f"gap {gap:.3g} exceeds {DISAGREE_SE:g} pooled s.e.",
                         ta, er, report)
    return Diagnosis(Verdict.INCONCLUSIVE, f"gap {gap:.3g} between {AGREE_SE:g} and "
                     f"{DISAGREE_SE:g} pooled s.e.", ta, er, report)


def simulate_budget(dyn: ItoDynamics | DiscreteDynamics, budget: Budget) -> Ensemble:
    if isinstance(dyn, DiscreteDynamics):
        return simulate_discrete(dyn, budget.x0, int(round(budget.t_max)), budget.n_paths, budget.seed)
    return simulate_ito(dyn, budget.x0, budget.dt, budget.t_max, budget.n_paths, budget.seed)


def ergodicity_diagnostic(dyn: ItoDynamics | DiscreteDynamics, f: TransformSpec = IDENTITY,
                          budget: Budget = Budget()) -> Diagnosis:
    """Simulate ``dyn`` under ``budget`` and diagnose ``f``."""
    return diagnose_ensemble(simulate_budget(dyn, budget), f)


def single_shock_expected_rate(g: float, sigma: float, t: float, x0: float = 1.0,
                               transform: str = "identity") -> float:
    """Expected rate of change for ``x_t = exp(g t + sigma eps)``, one normal shock.

    ``identity`` gives ``(exp(g t + sigma^2/2) - x0) / t``; ``log`` gives
    ``g - ln(x0)/t``.
    """
    if transform == "identity":
        return (math.exp(g * t + sigma * sigma / 2.0) - x0) / t
    if transform == "log":
        return g - math.log(x0) / t
    raise ValueError(f"unknown transform {transform!r}")

