import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eqevid import irreps, linalg3
from eqevid.stabilizer import (
    DEFAULT_DAMPER,
    DamperConfig,
    damp_coeffs,
    damp_coeffs_dirderiv,
    damp_coeffs_jacobian,
    phi_high,
    phi_high_deriv,
    phi_low,
    phi_low_deriv,
)

reals = st.floats(-1e6, 1e6)
coeffs = arrays(float, 6, elements=st.floats(-50, 50))
quats = arrays(float, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 1e-3)
PHI5 = 4.0 + math.tanh(1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        DamperConfig(threshold=5.0, ceiling=4.0)
    with pytest.raises(ValueError):
        DamperConfig(eps=0.0)
    assert DEFAULT_DAMPER.to_dict() == {"threshold": 4.0, "ceiling": 5.0, "eps": 1e-6}


def test_phi_high_values():
    assert phi_high(2.0) == 2.0
    assert phi_high(4.0) == 4.0
    assert abs(phi_high(5.0) - PHI5) <= 1e-15
    assert abs(PHI5 - 4.76159) <= 1e-5


def test_phi_low_values():
    assert phi_low(-2.0) == -2.0
    assert phi_low(3.0) == 3.0
    assert abs(phi_low(-5.0) + PHI5) <= 1e-15


@given(reals)
def test_phi_high_properties(x):
    y = phi_high(x)
    # 4 + tanh(x - 4) rounds to exactly 5 in double precision beyond x of about 22
    assert abs(y) < 5.0 or (abs(x) > 20 and abs(y) <= 5.0)
    assert phi_high(-x) == -y
    assert abs(y) <= abs(x)
    assert 0.0 <= phi_high_deriv(x) <= 1.0
    assert phi_low(x) > -5.0 or x < -20


@given(st.floats(-20, 20), st.floats(-20, 20))
def test_phi_high_monotone_lipschitz(a, b):
    lo, hi = min(a, b), max(a, b)
    assert phi_high(lo) <= phi_high(hi)
    assert phi_high(hi) - phi_high(lo) <= hi - lo + 1e-15


def test_phi_high_c1_at_threshold():
    h = 1e-7
    left = (phi_high(4.0) - phi_high(4.0 - h)) / h
    right = (phi_high(4.0 + h) - phi_high(4.0)) / h
    assert abs(left - 1) <= 1e-6 and abs(right - 1) <= 1e-6
    assert phi_high_deriv(4.0) == 1.0


def test_phi_derivatives_match_fd():
    x = np.linspace(-9, 9, 181)
    h = 1e-6
    np.testing.assert_allclose(phi_high_deriv(x), (phi_high(x + h) - phi_high(x - h)) / (2 * h), atol=1e-8)
    np.testing.assert_allclose(phi_low_deriv(x), (phi_low(x + h) - phi_low(x - h)) / (2 * h), atol=1e-8)


def test_damp_zero_and_linear_region():
    np.testing.assert_array_equal(damp_coeffs(np.zeros(6)), np.zeros(6))
    t = np.array([2.0, 0, 0, 0, 0])
    out = damp_coeffs(np.concatenate([[1.5], t]))
    assert out[0] == 1.5
    np.testing.assert_allclose(out[1:], t * 2 / (2 + 1e-6), rtol=1e-15)


def test_damp_large_tensor_bounded(rng):
    t = rng.standard_normal(5)
    t *= 100.0 / np.linalg.norm(t)
    out = damp_coeffs(np.concatenate([[0.0], t]))
    assert np.linalg.norm(out[1:]) < 5.0
    # direction preserved
    np.testing.assert_allclose(out[1:] / np.linalg.norm(out[1:]), t / 100.0, atol=1e-15)


def test_damp_scalar_two_sided():
    out = damp_coeffs(np.array([[40.0, 0, 0, 0, 0, 0], [-40.0, 0, 0, 0, 0, 0]]))
    assert 4.0 < out[0, 0] < 5.0 and -5.0 < out[1, 0] < -4.0


@given(coeffs, quats)
def test_damp_commutes_with_rotation(z, q):
    d = irreps.induced_rotation_l2(linalg3.quat_to_rotation(q))
    rotated = np.concatenate([[z[0]], d @ z[1:]])
    lhs = damp_coeffs(rotated)
    rhs = damp_coeffs(z)
    assert lhs[0] == rhs[0]
    np.testing.assert_allclose(lhs[1:], d @ rhs[1:], atol=1e-12)


@given(coeffs)
def test_damped_condition_bound(z):
    s = irreps.coeffs_to_sym(damp_coeffs(z))
    w = linalg3.eig_sym3(s).values
    t_norm = np.linalg.norm(damp_coeffs(z)[1:])
    assert w[2] - w[0] <= 2 * t_norm + 1e-12
    assert linalg3.condition_ratio(linalg3.expm_sym(s)) < math.exp(10.0)


def test_dirderiv_linear_region():
    z = np.array([1.0, 0.5, -0.3, 0.2, 0.1, 0.4])
    dz = np.array([0.3, -1.0, 0.2, 0.5, 0.1, -0.6])
    out = damp_coeffs_dirderiv(z, dz)
    assert out[0] == dz[0]
    np.testing.assert_allclose(out[1:], dz[1:], rtol=1e-5)


def test_dirderiv_matches_central_difference(rng):
    h = 1e-6
    for scale in (0.5, 3.0, 6.0, 30.0):
        for _ in range(50):
            z = scale * rng.standard_normal(6)
            dz = rng.standard_normal(6)
            fd = (damp_coeffs(z + h * dz) - damp_coeffs(z - h * dz)) / (2 * h)
            got = damp_coeffs_dirderiv(z, dz)
            assert np.linalg.norm(got - fd) <= 1e-6 * max(np.linalg.norm(fd), 1e-3)


def test_jacobian_symmetric(rng):
    _, jt = damp_coeffs_jacobian(10 * rng.standard_normal((20, 6)))
    np.testing.assert_allclose(jt, np.swapaxes(jt, -1, -2), atol=0)


def test_dirderiv_at_origin():
    # alpha(0) = 0 with eps > 0, so the t-channel Jacobian at t = 0 vanishes.
    # One-sided differences resolve this only for steps far below eps; for
    # steps far above eps the secant approaches the unit slope of the linear region.
    dz = np.array([0.0, 0.6, -0.8, 0.0, 0.0, 0.0])
    z = np.zeros(6)
    np.testing.assert_array_equal(damp_coeffs_dirderiv(z, dz)[1:], 0.0)
    tiny = 1e-12
    np.testing.assert_allclose(damp_coeffs(tiny * dz)[1:] / tiny, 0.0, atol=1e-5)
    big = 1e-2
    np.testing.assert_allclose(damp_coeffs(big * dz)[1:] / big, dz[1:], rtol=1e-3)
