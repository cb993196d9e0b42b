import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ergodic_econ.ergodic_transform import (IDENTITY, NotErgodizableError, TransformSpec, affine,
                                            apply_transform, check_ergodizable, check_grid, crra,
                                            derive_transform, log_transform, transform_alpha,
                                            transform_values, verify_levy)
from ergodic_econ.swp_core import DomainError, arithmetic_bm, build_ito, contrived_power, gbm, simulate_ito


# -- ergodizability ------------------------------------------------------------------

@pytest.mark.parametrize("mu,sigma", [(0.05, 0.2), (-0.1, 0.5), (0.3, 1.0)])
def test_gbm_ratio(mu, sigma):
    chk = check_ergodizable(gbm(mu, sigma))
    assert chk.admits
    assert chk.alpha_over_beta == pytest.approx((mu - sigma**2 / 2) / sigma, abs=1e-8)


@pytest.mark.parametrize("gamma", [0.25, 0.5, 1.5, 2.0])
def test_power_dynamic_ratio_is_one(gamma):
    chk = check_ergodizable(contrived_power(gamma))
    assert chk.admits and chk.alpha_over_beta == pytest.approx(1.0, abs=1e-6)


def test_additive_ratio():
    chk = check_ergodizable(arithmetic_bm(1.0, 0.5))
    assert chk.admits and chk.alpha_over_beta == pytest.approx(2.0, abs=1e-12)


def test_constant_drift_multiplicative_noise_rejected():
    chk = check_ergodizable(build_ito("0.05", "0.2*x", (0, math.inf)))
    assert not chk.admits and chk.residual > 1.0
    with pytest.raises(NotErgodizableError):
        derive_transform(build_ito("0.05", "0.2*x", (0, math.inf)))


def test_check_needs_enough_points():
    with pytest.raises(ValueError):
        check_ergodizable(gbm(0.05, 0.2), grid=np.linspace(0.5, 2, 10))


def test_check_grid_stays_inside_domain():
    for dom in [(0, math.inf), (-math.inf, math.inf), (1.0, 3.0)]:
        g = check_grid(dom)
        assert g.size >= 51 and np.all(g > dom[0]) and np.all(g < dom[1])


# -- derivation -----------------------------------------------------------------------

def test_gbm_gives_scaled_log():
    f = derive_transform(gbm(0.05, 0.2))
    assert f.form == "log" and f.scale == pytest.approx(5.0)
    assert f(math.e) == pytest.approx(5.0, rel=1e-12)
    assert f.alpha == pytest.approx(0.15, abs=1e-8) and f.beta == 1.0


def test_additive_gives_affine():
    f = derive_transform(arithmetic_bm(1.0, 0.5), x_ref=0.0)
    assert f.form == "affine"
    assert f(3.0) == pytest.approx(6.0, rel=1e-12)


def test_unit_crra_dispatches_to_log():
    assert derive_transform(contrived_power(1.0)).form == "log"
    assert crra(1.0).form == "log"


def test_numeric_transform_matches_arctan():
    # b = 1 + x^2 with a = b b'/2 + 0.3 b admits f = arctan(x) - arctan(x_ref)
    dyn = build_ito("(1 + x^2)*x + 0.3*(1 + x^2)", "1 + x^2", (-math.inf, math.inf))
    f = derive_transform(dyn, x_ref=0.5)
    assert f.form == "numeric"
    x = np.linspace(-20, 20, 201)
    np.testing.assert_allclose(f(x), np.arctan(x) - np.arctan(0.5), atol=1e-6)
    np.testing.assert_allclose(np.asarray(f.table_f), np.arctan(f.table_x) - np.arctan(0.5), atol=1e-9)
    assert f.alpha == pytest.approx(0.3, abs=1e-6)


def test_numeric_extrapolation_warns():
    dyn = build_ito("(1 + x^2)*x + 0.3*(1 + x^2)", "1 + x^2", (-math.inf, math.inf))
    f = derive_transform(dyn)
    with pytest.warns(UserWarning):
        f(np.array([1e6]))


@pytest.mark.parametrize("dyn", [gbm(0.05, 0.2), contrived_power(0.5), arithmetic_bm(1.0, 0.5)])
def test_transformed_drift_is_constant(dyn):
    # Ito's lemma on the derived f: a f' + b^2 f''/2 must equal alpha everywhere
    f = derive_transform(dyn)
    drift = transform_alpha(dyn, f)
    np.testing.assert_allclose(drift, f.alpha, atol=1e-6)


# -- TransformSpec behaviour -------------------------------------------------------------

@given(st.floats(0.05, 50.0), st.sampled_from([0.25, 0.5, 0.75, 1.5, 3.0]))
def test_crra_inverse_roundtrip(x, gamma):
    f = crra(gamma, scale=2.0, x_ref=1.0)
    assert f.inverse(f(x)) == pytest.approx(x, rel=1e-9)


@given(st.floats(0.05, 50.0))
def test_log_derivatives_match_finite_differences(x):
    f = log_transform(scale=3.0)
    d1, d2 = f.derivatives(np.array([x]))
    h = 1e-4 * x
    fd1 = (f(x + h) - f(x - h)) / (2 * h)
    fd2 = (f(x + h) - 2 * f(x) + f(x - h)) / h**2
    assert d1[0] == pytest.approx(fd1, rel=1e-6)
    assert d2[0] == pytest.approx(fd2, rel=1e-3)


@given(st.floats(0.1, 10), st.floats(-5, 5), st.floats(0.01, 100))
def test_affine_map_composes(c, d, x):
    f = log_transform()
    g = f.affine_map(c, d)
    assert g(x) == pytest.approx(c * f(x) + d, rel=1e-12, abs=1e-12)


def test_affine_map_requires_positive_scale():
    with pytest.raises(ValueError):
        IDENTITY.affine_map(-1.0)


@pytest.mark.parametrize("f", [IDENTITY, affine(2.0, 1.0), log_transform(0.5, 2.0), crra(0.5, 3.0, 1.0),
                               derive_transform(build_ito("(1 + x^2)*x", "1 + x^2"))])
def test_json_roundtrip(f):
    g = TransformSpec.from_dict(json.loads(f.to_json()))
    x = np.array([0.3, 1.0, 4.0])
    np.testing.assert_allclose(g(x), f(x), rtol=1e-12)
    assert g.form == f.form


def test_describe_is_readable():
    assert derive_transform(gbm(0.05, 0.2)).describe() == "f(x) = 5*ln(x / 1)"
    assert IDENTITY.describe() == "f(x) = x"


def test_transform_values_names_path_and_step():
    vals = np.array([[1.0, 2.0, 3.0], [1.0, -0.5, 2.0]])
    with pytest.raises(DomainError, match=r"path 1, step 1"):
        transform_values(log_transform(), vals)


def test_apply_identity_is_copy():
    ens = simulate_ito(gbm(0.05, 0.2), 1.0, 1e-2, 1.0, 3, 0)
    out = apply_transform(IDENTITY, ens)
    np.testing.assert_array_equal(out.paths, ens.paths)
    assert out.paths is not ens.paths


# -- Levy increments --------------------------------------------------------------------

def test_log_gbm_is_levy_and_raw_gbm_is_not():
    ens = simulate_ito(gbm(0.05, 0.4), 1.0, 1e-2, 20.0, 1000, seed=8)
    rep = verify_levy(apply_transform(log_transform(), ens))
    assert rep.is_levy
    assert abs(rep.drift_hat - (0.05 - 0.08)) <= 3 * rep.drift_se
    assert rep.vol_hat == pytest.approx(0.4, rel=0.02)
    raw = verify_levy(ens)
    assert not raw.stationary


def test_levy_needs_data():
    ens = simulate_ito(gbm(0.05, 0.2), 1.0, 1e-2, 1.0, 50, seed=0)
    with pytest.raises(ValueError, match="insufficient"):
        verify_levy(ens)
