from math import comb

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import ndtr
from scipy.stats import truncnorm

from epkit.errors import DegenerateSupport, OutOfRange
from epkit.sites import (
    BoxIndicator,
    CavityParams,
    GaussianExp,
    Probit,
    Spin,
    TabulatedGrid,
    site_from_json,
    tilted_moments,
)


def cumulants_from_raw(raw):
    """kappa_n = mu'_n - sum_{m<n} C(n-1, m-1) kappa_m mu'_{n-m}."""
    k = [0.0] * len(raw)
    for n in range(1, len(raw)):
        k[n] = raw[n] - sum(comb(n - 1, m - 1) * k[m] * raw[n - m] for m in range(1, n))
    return k


def gh_probit_oracle(label, mu, var, l_max, nodes=61):
    z, w = hermegauss(nodes)
    x = mu + np.sqrt(var) * z
    p = w * ndtr(label * x) / np.sqrt(2 * np.pi)
    Z = p.sum()
    raw = [1.0] + [float((p * x**k).sum() / Z) for k in range(1, l_max + 1)]
    return Z, cumulants_from_raw(raw)


def test_spin_zero_field_is_symmetric():
    t = tilted_moments(Spin(), CavityParams(a=0.0, V=0.3))
    assert t.mean == 0.0
    assert t.variance == 1.0


def test_gaussian_site_product_of_unit_gaussians():
    t = tilted_moments(GaussianExp(gamma=0.0, Lambda=1.0), CavityParams.from_moments(0.0, 1.0), l_max=8)
    assert t.mean == 0.0
    assert t.variance == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_array_equal(t.cumulants, np.zeros(6))


def test_probit_half_mass():
    cav = CavityParams.from_moments(0.0, 1.7)
    t = tilted_moments(Probit(label=1.0), cav)
    assert t.logZ - cav.log_normalizer == pytest.approx(np.log(0.5), abs=1e-14)


def test_probit_against_hermite_oracle():
    cav = CavityParams.from_moments(0.3, 0.5)
    t = tilted_moments(Probit(label=1.0), cav, l_max=4)
    Z, k = gh_probit_oracle(1.0, 0.3, 0.5, 4)
    assert t.mean == pytest.approx(k[1], abs=1e-8)
    assert t.variance == pytest.approx(k[2], abs=1e-8)
    assert t.cumulant(3) == pytest.approx(k[3], abs=1e-8)
    assert t.logZ - cav.log_normalizer == pytest.approx(np.log(Z), abs=1e-10)


@given(st.floats(-3, 3), st.floats(0.05, 4), st.sampled_from([-1.0, 1.0]))
@settings(max_examples=100, deadline=None)
def test_probit_closed_form_matches_quadrature(mu, var, label):
    t = tilted_moments(Probit(label=label), CavityParams.from_moments(mu, var), l_max=6)
    _, k = gh_probit_oracle(label, mu, var, 6, nodes=121)
    got = [t.mean, t.variance] + [t.cumulant(l) for l in range(3, 7)]
    np.testing.assert_allclose(got, k[1:], rtol=1e-7, atol=1e-9)


@given(st.floats(-2, 2), st.floats(0.05, 4), st.floats(0.2, 3))
@settings(max_examples=100, deadline=None)
def test_box_matches_truncated_normal(mu, var, a):
    sd = np.sqrt(var)
    lo, hi = (-a - mu) / sd, (a - mu) / sd
    m, v, s, k = truncnorm.stats(lo, hi, loc=mu, scale=sd, moments="mvsk")
    cav = CavityParams.from_moments(mu, var)
    t = tilted_moments(BoxIndicator(a=a), cav, l_max=4)
    np.testing.assert_allclose(t.mean, m, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(t.variance, v, rtol=1e-7, atol=1e-12)
    np.testing.assert_allclose(t.cumulant(3), s * v**1.5, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(t.cumulant(4), k * v**2, rtol=1e-6, atol=1e-9)
    # difference taken in the lighter tail to avoid cancellation
    mass = ndtr(-lo) - ndtr(-hi) if lo > 0 else ndtr(hi) - ndtr(lo)
    np.testing.assert_allclose(t.logZ - cav.log_normalizer, np.log(mass), rtol=1e-9, atol=1e-12)


@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(-1, 1))
@settings(max_examples=100, deadline=None)
def test_spin_matches_direct_sum(a, V, field):
    s = np.array([-1.0, 1.0])
    logw = (a + field) * s + 0.5 * V
    w = np.exp(logw - logw.max())
    p = w / w.sum()
    mean = p @ s
    raw = [1.0] + [float(p @ s**k) for k in range(1, 7)]
    k = cumulants_from_raw(raw)
    t = tilted_moments(Spin(field=field), CavityParams(a, V), l_max=6)
    got = [t.mean, t.variance] + [t.cumulant(l) for l in range(3, 7)]
    np.testing.assert_allclose(got, k[1:], rtol=1e-7, atol=1e-10)
    assert t.mean == pytest.approx(mean, abs=1e-14)
    assert t.logZ == pytest.approx(logw.max() + np.log(w.sum()), abs=1e-13)


@given(st.floats(-3, 3), st.floats(0.1, 3), st.floats(-2, 2), st.floats(0.0, 3.0))
@settings(max_examples=50, deadline=None)
def test_gaussian_site_closed_form(mu, var, gamma, lam):
    t = tilted_moments(GaussianExp(gamma=gamma, Lambda=lam), CavityParams.from_moments(mu, var), l_max=5)
    prec = 1.0 / var + lam
    np.testing.assert_allclose(t.variance, 1.0 / prec, rtol=1e-12)
    np.testing.assert_allclose(t.mean, (mu / var + gamma) / prec, rtol=1e-12, atol=1e-14)
    np.testing.assert_array_equal(t.cumulants, 0.0)


def test_tabulated_gaussian_table_approximates_gaussian():
    x = np.linspace(-6, 6, 601)
    site = TabulatedGrid(points=x, log_values=-0.5 * x**2)
    t = tilted_moments(site, CavityParams.from_moments(0.4, 1.0), l_max=4)
    # product of N(0,1) and N(0.4,1): N(0.2, 0.5)
    assert t.mean == pytest.approx(0.2, abs=1e-4)
    assert t.variance == pytest.approx(0.5, abs=1e-4)
    assert abs(t.cumulant(3)) < 1e-4


def test_tabulated_accepts_improper_cavity():
    site = TabulatedGrid(points=[-1.0, 1.0], log_values=[0.0, 0.0])
    t = tilted_moments(site, CavityParams(a=0.0, V=0.0))
    assert t.mean == pytest.approx(0.0, abs=1e-14)
    # trapezoid rule on 32 cells: variance error ~ h^2 / 6 with h = 1/16
    assert t.variance == pytest.approx(1.0 / 3.0, abs=5e-3)


def test_moments_reconstructed_from_cumulants():
    cav = CavityParams.from_moments(-0.4, 1.3)
    t = tilted_moments(Probit(label=-1.0), cav, l_max=6)
    z, w = hermegauss(121)
    x = -0.4 + np.sqrt(1.3) * z
    p = w * ndtr(-x)
    p = p / p.sum()
    raw_q = [float(p @ x**k) for k in range(7)]
    kap = [0.0, t.mean, t.variance] + [t.cumulant(l) for l in range(3, 7)]
    raw = [1.0] + [0.0] * 6
    for n in range(1, 7):
        raw[n] = kap[n] + sum(comb(n - 1, m - 1) * kap[m] * raw[n - m] for m in range(1, n))
    np.testing.assert_allclose(raw, raw_q, rtol=1e-6, atol=1e-9)
    assert t.cumulant(2) == t.variance


def test_tilted_moments_is_pure():
    cav = CavityParams.from_moments(0.2, 0.7)
    for site in (Probit(label=1.0), BoxIndicator(a=0.5), Spin(field=0.3)):
        a, b = tilted_moments(site, cav, 6), tilted_moments(site, cav, 6)
        assert (a.mean, a.variance, a.logZ) == (b.mean, b.variance, b.logZ)
        np.testing.assert_array_equal(a.cumulants, b.cumulants)


def test_probit_deep_tail_against_mpmath():
    mu, var = -9.0, 0.5
    t = tilted_moments(Probit(label=1.0), CavityParams.from_moments(mu, var), l_max=4)
    with mpmath.workdps(40):
        dens = lambda x, k: x**k * mpmath.ncdf(x) * mpmath.npdf(x, mu, mpmath.sqrt(var))
        Z = mpmath.quad(lambda x: dens(x, 0), [-mpmath.inf, mu, 0, mpmath.inf])
        raw = [1.0] + [float(mpmath.quad(lambda x: dens(x, k), [-mpmath.inf, mu, 0, mpmath.inf]) / Z) for k in range(1, 5)]
    k = cumulants_from_raw(raw)
    np.testing.assert_allclose([t.mean, t.variance, t.cumulant(3)], k[1:4], rtol=1e-6, atol=1e-9)
    assert np.isfinite(t.cumulant(4))


def test_probit_needs_proper_cavity():
    with pytest.raises(DegenerateSupport):
        tilted_moments(Probit(label=1.0), CavityParams(a=0.0, V=0.5))


def test_box_far_from_cavity_is_degenerate():
    with pytest.raises(DegenerateSupport):
        tilted_moments(BoxIndicator(a=0.1), CavityParams.from_moments(200.0, 0.01))


def test_invalid_parameters():
    with pytest.raises(OutOfRange):
        Probit(label=0.5)
    with pytest.raises(OutOfRange):
        BoxIndicator(a=0.0)
    with pytest.raises(OutOfRange):
        CavityParams.from_moments(0.0, -1.0)
    with pytest.raises(OutOfRange):
        TabulatedGrid(points=[0.0, 0.0], log_values=[0.0, 0.0])
    with pytest.raises((OutOfRange, ValueError)):
        tilted_moments(Spin(), CavityParams(0.0, 0.0), l_max=9)


def test_site_json_roundtrip():
    for s in (GaussianExp(0.1, 0.2), Spin(0.3), Probit(-1.0), BoxIndicator(2.0)):
        assert site_from_json(s.to_json()) == s
    with pytest.raises(ValueError):
        site_from_json({"kind": "nope"})
