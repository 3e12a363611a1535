import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special, stats

from eqevid import specfun

positive = st.floats(1e-3, 200.0)


def chi2_3_cdf_closed(x):
    # P(3/2, x/2) = erf(sqrt(x/2)) - sqrt(2x/pi) exp(-x/2)
    return math.erf(math.sqrt(x / 2)) - math.sqrt(2 * x / math.pi) * math.exp(-x / 2)


def bisect(f, target, lo, hi, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- ln_gamma -------------------------------------------------------------------------


def test_ln_gamma_values():
    assert abs(specfun.ln_gamma(1.0)) <= 1e-14
    assert abs(specfun.ln_gamma(2.0)) <= 1e-14
    assert abs(specfun.ln_gamma(0.5) - 0.5 * math.log(math.pi)) <= 1e-14
    g35 = 2.5 * 1.5 * 0.5 * math.sqrt(math.pi)
    assert abs(g35 - 3.32335097) <= 1e-8
    assert abs(specfun.ln_gamma(3.5) - math.log(g35)) <= 1e-13
    assert abs(specfun.ln_gamma(3.5) - 1.200973) <= 1e-6


def test_ln_gamma_vs_scipy():
    x = np.concatenate([np.geomspace(1e-3, 1e3, 400), np.linspace(0.4, 0.6, 21)])
    ref = special.gammaln(x)
    got = specfun.ln_gamma(x)
    assert np.all(np.abs(got - ref) <= 1e-13 * np.maximum(1.0, np.abs(ref)))


def test_ln_gamma_integers():
    for n in range(1, 30):
        assert abs(specfun.ln_gamma(float(n)) - math.log(math.factorial(n - 1))) <= 1e-13 * max(1, n)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
def test_ln_gamma_domain(bad):
    with pytest.raises(ValueError):
        specfun.ln_gamma(bad)


def test_scalar_in_float_out():
    assert isinstance(specfun.ln_gamma(2.5), float)
    assert specfun.ln_gamma(np.array([2.5, 3.0])).shape == (2,)


# -- digamma --------------------------------------------------------------------------


def test_digamma_at_one():
    assert abs(specfun.digamma(1.0) + np.euler_gamma) <= 1e-12
    assert abs(specfun.digamma(1.0) + 0.5772157) <= 1e-7


@given(positive)
def test_digamma_recurrence(x):
    lhs = specfun.digamma(x + 1) - specfun.digamma(x)
    assert abs(lhs - 1 / x) <= 1e-12 * max(1.0, 1 / x)


def test_digamma_vs_scipy():
    x = np.geomspace(1e-3, 1e4, 500)
    np.testing.assert_allclose(specfun.digamma(x), special.digamma(x), rtol=0, atol=1e-12 * 1e3)
    mid = np.linspace(0.5, 50, 300)
    np.testing.assert_allclose(specfun.digamma(mid), special.digamma(mid), rtol=0, atol=1e-12)


def test_digamma_matches_ln_gamma_fd():
    h = 1e-6
    x = np.linspace(0.3, 40.0, 200)
    fd = (specfun.ln_gamma(x + h) - specfun.ln_gamma(x - h)) / (2 * h)
    assert np.max(np.abs(specfun.digamma(x) - fd)) <= 1e-5


def test_digamma_domain():
    with pytest.raises(ValueError):
        specfun.digamma(0.0)


# -- incomplete gamma -----------------------------------------------------------------


def test_reg_gamma_endpoints():
    assert specfun.reg_gamma_lower(1.5, 0.0) == 0.0
    assert specfun.reg_gamma_lower(1.5, np.inf) == 1.0


def test_chi2_3_quantiles_by_bisection():
    median = bisect(chi2_3_cdf_closed, 0.5, 0.0, 50.0)
    q95 = bisect(chi2_3_cdf_closed, 0.95, 0.0, 50.0)
    assert abs(median - 2.36597) <= 1e-5
    assert abs(q95 - 7.8147) <= 1e-4
    assert abs(specfun.chi2_cdf(median, 3) - 0.5) <= 1e-12
    assert abs(specfun.chi2_cdf(q95, 3) - 0.95) <= 1e-12


def test_chi2_3_closed_form():
    for x in np.linspace(0.01, 60, 300):
        assert abs(specfun.chi2_cdf(x, 3) - chi2_3_cdf_closed(x)) <= 1e-12


def test_reg_gamma_vs_scipy():
    rng = np.random.default_rng(3)
    a = rng.uniform(0.1, 60, 2000)
    x = rng.uniform(0, 120, 2000)
    np.testing.assert_allclose(specfun.reg_gamma_lower(a, x), special.gammainc(a, x), rtol=0, atol=1e-12)


@given(st.floats(0.1, 50), st.floats(0, 100), st.floats(0, 100))
def test_reg_gamma_monotone(a, x1, x2):
    lo, hi = sorted((x1, x2))
    p_lo, p_hi = specfun.reg_gamma_lower(a, lo), specfun.reg_gamma_lower(a, hi)
    assert 0.0 <= p_lo <= p_hi + 1e-15 <= 1.0 + 1e-15


def test_reg_gamma_domain():
    with pytest.raises(ValueError):
        specfun.reg_gamma_lower(0.0, 1.0)
    with pytest.raises(ValueError):
        specfun.reg_gamma_lower(1.0, -1.0)


# -- incomplete beta ------------------------------------------------------------------


def test_reg_beta_endpoints_and_symmetry():
    assert specfun.reg_beta(0.0, 2.0, 3.0) == 0.0
    assert specfun.reg_beta(1.0, 2.0, 3.0) == 1.0
    for a in (0.3, 1.0, 2.5, 17.0, 300.0):
        assert abs(specfun.reg_beta(0.5, a, a) - 0.5) <= 1e-12


def test_reg_beta_vs_quadrature():
    rng = np.random.default_rng(11)
    for _ in range(60):
        a, b = rng.uniform(1.0, 20.0, 2)
        x = rng.uniform(0.0, 1.0)
        # log-space density keeps large exponents finite
        lnb = special.betaln(a, b)
        dens = lambda t: math.exp((a - 1) * math.log(t) + (b - 1) * math.log1p(-t) - lnb) if 0 < t < 1 else 0.0
        ref, _ = integrate.quad(dens, 0.0, x, epsabs=1e-14, epsrel=1e-13, limit=200)
        assert abs(specfun.reg_beta(x, a, b) - ref) <= 1e-11


def test_reg_beta_vs_scipy():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, 3000)
    a = rng.uniform(0.1, 200, 3000)
    b = rng.uniform(0.1, 200, 3000)
    np.testing.assert_allclose(specfun.reg_beta(x, a, b), special.betainc(a, b, x), rtol=0, atol=1e-12)


@given(st.floats(0.2, 40), st.floats(0.2, 40), st.floats(0, 1), st.floats(0, 1))
def test_reg_beta_monotone_and_reflection(a, b, x1, x2):
    lo, hi = sorted((x1, x2))
    i_lo, i_hi = specfun.reg_beta(lo, a, b), specfun.reg_beta(hi, a, b)
    assert 0.0 <= i_lo <= i_hi + 1e-14 <= 1.0 + 1e-14
    # away from the ends, where 1 - x does not round away x itself
    x = min(max(lo, 1e-6), 1 - 1e-6)
    assert abs(specfun.reg_beta(x, a, b) + specfun.reg_beta(1 - x, b, a) - 1.0) <= 1e-12


def test_reg_beta_tiny_argument():
    # I_x(a, 1) = x^a
    for x in (1.2e-38, 1e-200, 1e-5):
        assert abs(specfun.reg_beta(x, 0.25, 1.0) - x**0.25) <= 1e-13 * x**0.25


def test_reg_beta_domain():
    with pytest.raises(ValueError):
        specfun.reg_beta(1.5, 1.0, 1.0)
    with pytest.raises(ValueError):
        specfun.reg_beta(0.5, 0.0, 1.0)


# -- distribution CDFs ----------------------------------------------------------------


def test_f_cdf_vs_scipy():
    x = np.linspace(0, 20, 201)
    for m in (1.0, 2.5, 7.0, 40.0):
        np.testing.assert_allclose(specfun.f_cdf(x, 3, m), stats.f.cdf(x, 3, m), rtol=0, atol=1e-12)


def test_f_cdf_gaussian_limit():
    x = np.linspace(0.05, 20, 100)
    np.testing.assert_allclose(specfun.f_cdf(x / 3, 3, 1e6), specfun.chi2_cdf(x, 3), atol=1e-4)


# -- softplus / sigmoid ---------------------------------------------------------------


def test_softplus_values():
    assert abs(specfun.softplus(0.0) - math.log(2)) <= 1e-15
    assert abs(specfun.softplus(100.0) - 100.0) <= 1e-15
    low = specfun.softplus(-100.0)
    assert low > 0 and abs(low - math.exp(-100)) <= 1e-15 * math.exp(-100) * 10


@given(st.floats(-700, 700), st.floats(-700, 700))
def test_softplus_positive_monotone(a, b):
    lo, hi = sorted((a, b))
    assert specfun.softplus(lo) > 0
    assert specfun.softplus(lo) <= specfun.softplus(hi)


def test_sigmoid_is_softplus_derivative():
    x = np.linspace(-20, 20, 81)
    h = 1e-6
    fd = (specfun.softplus(x + h) - specfun.softplus(x - h)) / (2 * h)
    np.testing.assert_allclose(specfun.sigmoid(x), fd, atol=1e-9)
    np.testing.assert_allclose(specfun.sigmoid(x), special.expit(x), atol=1e-15)
