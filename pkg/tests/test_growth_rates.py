import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import DET_GRID
from ergodic_econ.ergodic_transform import IDENTITY, crra, derive_transform, log_transform
from ergodic_econ.growth_rates import (Budget, InsufficientDataError, UndefinedRateError, Verdict,
                                       diagnose_ensemble, ensemble_rate, ergodicity_diagnostic, finite_t_rates,
                                       growth_report, median_se, rate_of_change, sample_average_rate,
                                       simulate_budget, single_shock_expected_rate, time_average_rate)
from ergodic_econ.swp_core import (DiscreteDynamics, arithmetic_bm, build_ito, contrived_power,
                                   deterministic_ensemble, gbm, gbm_log_growth, simulate_ito)


@pytest.fixture(scope="module")
def gbm_ens():
    return simulate_ito(gbm_log_growth(0.05, 0.2), 1.0, dt=1e-2, t_max=100.0, n_paths=2000, seed=21)


# -- elementary rates ---------------------------------------------------------------

def test_rate_of_change_formula():
    times = np.array([0.0, 1.0, 2.0, 4.0])
    path = np.array([1.0, 2.0, 4.0, 16.0])
    assert rate_of_change(path, times, 4.0) == pytest.approx(15.0 / 4.0)
    assert rate_of_change(path, times, 2.0, log_transform()) == pytest.approx(math.log(4.0) / 2.0)


def test_rate_at_zero_is_undefined():
    with pytest.raises(UndefinedRateError):
        rate_of_change(np.ones(3), np.arange(3.0), 0.0)


def test_rate_off_grid_is_refused():
    with pytest.raises(ValueError):
        rate_of_change(np.ones(3), np.arange(3.0), 1.5)


@given(st.floats(-3, 3), st.integers(1, 1024))
def test_deterministic_rates_are_exact(rate, t):
    ens = deterministic_ensemble(rate, DET_GRID, 1.0, 2)
    assert np.allclose(finite_t_rates(ens, float(t)), rate, atol=1e-12)


def test_flagged_paths_are_excluded():
    ens = simulate_ito(build_ito("-0.4", "1", (0.0, math.inf)), 1.0, 1e-2, 10.0, 200, seed=0)
    assert 0 < ens.flagged.sum() < ens.n_paths
    r = finite_t_rates(ens, 10.0)
    assert r.size == int((~ens.flagged).sum())


def test_median_se_matches_normal_theory():
    # a single draw scatters by ~6%; the average over 50 draws by ~1%
    rng = np.random.default_rng(0)
    ses = [median_se(rng.normal(0.0, 2.0, 20_000)) for _ in range(50)]
    assert np.mean(ses) == pytest.approx(2.0 * math.sqrt(math.pi / 2) / math.sqrt(20_000), rel=0.04)


def test_sample_average_rate_se(gbm_ens):
    est = sample_average_rate(gbm_ens, 10.0)
    r = finite_t_rates(gbm_ens, 10.0)
    assert est.value == pytest.approx(r.mean())
    assert est.se == pytest.approx(r.std(ddof=1) / math.sqrt(r.size))


# -- time and ensemble averages -----------------------------------------------------------

def test_time_average_deterministic(det):
    ta = time_average_rate(det(0.3))
    assert ta.converged and ta.estimate == pytest.approx(0.3, abs=1e-12)
    assert len(ta.trace_rows()) >= 10


def test_time_average_log_gbm(gbm_ens):
    ta = time_average_rate(gbm_ens, log_transform())
    assert ta.converged
    assert abs(ta.estimate - 0.05) <= 3 * ta.se


def test_time_average_identity_gbm_does_not_settle(gbm_ens):
    assert not time_average_rate(gbm_ens, IDENTITY).converged


def test_too_short_grid_is_insufficient():
    ens = simulate_ito(gbm(0.05, 0.2), 1.0, 0.1, 1.0, 10, 0)
    with pytest.raises(InsufficientDataError):
        time_average_rate(ens)


def test_ensemble_rate_identity_oracle(gbm_ens):
    er = ensemble_rate(gbm_ens, 10.0, IDENTITY)
    oracle = (math.exp(0.07 * 10.0) - 1.0) / 10.0
    assert abs(er.estimate - oracle) <= 3 * er.se
    assert er.n_converged


def test_single_shock_oracle():
    assert single_shock_expected_rate(0.05, 0.2, 10.0) == pytest.approx((math.exp(0.5 + 0.02) - 1) / 10)
    assert single_shock_expected_rate(0.05, 0.2, 10.0, transform="log") == pytest.approx(0.05)


# -- reports and diagnostics ---------------------------------------------------------------

def test_growth_report_serialises(gbm_ens):
    rep = growth_report(gbm_ens, log_transform())
    d = json.loads(rep.to_json())
    assert d["N_used"] == 2000 and d["time_avg_flag"] == "CONVERGED"
    assert len(rep.to_csv_row().split(",")) == len(rep.csv_header().split(","))


@pytest.mark.parametrize("dyn,x0,f,verdict", [
    (gbm_log_growth(0.05, 0.2), 1.0, log_transform(), Verdict.ERGODIC),
    (gbm_log_growth(0.05, 0.2), 1.0, IDENTITY, Verdict.NON_ERGODIC),
    (arithmetic_bm(1.0, 0.5), 0.0, IDENTITY, Verdict.ERGODIC),
    (contrived_power(0.5), 4.0, crra(0.5), Verdict.ERGODIC),
])
def test_diagnostic_verdicts(dyn, x0, f, verdict):
    d = ergodicity_diagnostic(dyn, f, Budget(x0=x0, seed=3))
    assert d.verdict is verdict, d.reason


def test_derived_transform_diagnoses_ergodic():
    dyn = gbm_log_growth(0.05, 0.2)
    f = derive_transform(dyn)
    d = ergodicity_diagnostic(dyn, f, Budget(seed=1))
    assert d.verdict is Verdict.ERGODIC
    # the derived f carries scale 1/sigma
    assert d.time_average.estimate == pytest.approx(0.05 / 0.2, abs=5 * d.time_average.se)


def test_tiny_budget_is_inconclusive():
    d = ergodicity_diagnostic(gbm(0.05, 0.2), log_transform(), Budget(n_paths=5, dt=0.1, t_max=1.0))
    assert d.verdict is Verdict.INCONCLUSIVE


def test_discrete_dynamics_budget():
    dyn = DiscreteDynamics.equiprobable("multiplicative", [1.5, 0.6])
    ens = simulate_budget(dyn, Budget(n_paths=100, t_max=50))
    assert ens.n_times == 51
    d = diagnose_ensemble(simulate_budget(dyn, Budget(n_paths=2000, t_max=1024, seed=2)), log_transform())
    assert d.verdict is Verdict.ERGODIC
    assert abs(d.time_average.estimate - 0.5 * math.log(0.9)) <= 3 * d.time_average.se
